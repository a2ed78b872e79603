"""Shared model contract.

A model maps parameters theta in R^p to an observed state rho in R^k and
exposes whichever Jacobian access it has:

* explicit models implement ``jacobian(theta)`` returning the dense k x p
  matrix of state sensitivities;
* constraint-based models expose four linear actions derived from the
  constraint h(state, theta) = 0:

      apply_drho_h_inverse(rhs)            solve d_rho h . gamma = rhs, observed
      apply_drho_h_transpose_inverse(rhs)  solve d_rho h^T . lam = rhs injected
      apply_dtheta_h(eta)                  d_theta h . eta
      apply_dtheta_h_transpose(lam)        d_theta h^T . lam

  For models whose observation is the full constraint state (the linear toy),
  rhs/lam vectors live in R^k. For the wave model the constraint state is the
  per-source space-time wavefield; the inverse action returns receiver traces
  and the transposed inverse takes trace-space input, so the two remain exact
  adjoints of each other between those spaces.

Every model tracks ``propagation_counter``: one unit per forward, adjoint, or
linearized-forward solve (per source for the wave model), the cost unit used
in convergence histories.
"""

from __future__ import annotations

import numpy as np


def least_squares_misfit(rho, reference) -> tuple[float, np.ndarray]:
    """Plain least-squares data misfit: (0.5 ||rho - ref||^2, rho - ref)."""
    residual = np.asarray(rho, dtype=float) - np.asarray(reference, dtype=float)
    return 0.5 * float(residual @ residual), residual


class ForwardModel:
    """Base class carrying the propagation counter and misfit plumbing."""

    def __init__(self):
        self.propagation_counter = 0

    # --- dimensions -----------------------------------------------------
    @property
    def state_dim(self) -> int:
        raise NotImplementedError

    @property
    def param_dim(self) -> int:
        raise NotImplementedError

    # --- forward map and objective ---------------------------------------
    def solve_forward(self, theta) -> np.ndarray:
        raise NotImplementedError

    def loss_and_grad_rho(self, rho) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def metric_state(self, rho) -> np.ndarray:
        """The state the metric weights should be refreshed with."""
        return np.asarray(rho, dtype=float)

    # --- capability probes ------------------------------------------------
    @property
    def has_explicit_jacobian(self) -> bool:
        return hasattr(self, "jacobian")

    @property
    def has_adjoint_actions(self) -> bool:
        return hasattr(self, "apply_drho_h_inverse")
