"""Descent-direction solvers and the optimization loop.

Two routes to the same direction:

* explicit route: with the Jacobian Z in hand, solve the least-squares
  problem min || pinv(L^T) grad_rho_f + (L Z) eta || by QR; rank-deficient
  stacks fall through to the pivoted-QR minimum-norm solve;
* matrix-free route: evaluate eta -> (L Z)^T (L Z) eta through one linearized
  forward and one adjoint solve per product, and run conjugate gradient on
  (lambda * G_reg + G_L) eta = -grad_theta_f.

Damping interpolates toward plain gradient descent; the regularizer defaults
to the identity but can be another metric's information matrix. Mini-batch
sketching and the randomized Jacobian estimator are opt-in approximations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import cg_solve, solve_least_squares_min_norm
from .metrics import MetricKind

GD_LABEL = "gd"


@dataclass
class NgdConfig:
    """Knobs for the descent loop. metric='gd' selects plain gradient descent."""

    metric: str = "l2"
    damping_lambda: float = 0.0
    damping_metric: str | None = None
    cg_tol: float = 1e-8
    cg_max_iter: int | None = None
    rank_tol: float = 1e-10
    step0: float = 1.0
    ls_shrink: float = 0.5
    ls_max_halvings: int = 40
    sufficient_decrease: float = 0.0
    fixed_step: bool = False
    max_iters: int = 50
    max_propagations: int | None = None
    minibatch_size: int | None = None
    hutchinson_m: int | None = None
    seed: int = 0
    path: str = "auto"  # auto | explicit | implicit

    def __post_init__(self):
        if self.step0 <= 0.0:
            raise ValueError("step0 must be positive")
        if not 0.0 < self.ls_shrink < 1.0:
            raise ValueError("ls_shrink must lie in (0, 1)")
        if self.damping_lambda < 0.0:
            raise ValueError("damping_lambda must be nonnegative")
        if self.path not in ("auto", "explicit", "implicit"):
            raise ValueError(f"unknown path {self.path!r}")

    def metric_kind(self) -> MetricKind | None:
        return None if self.metric == GD_LABEL else MetricKind.parse(self.metric)


@dataclass(frozen=True)
class IterationRecord:
    """One accepted iteration of the descent loop."""

    iter: int
    loss: float
    grad_norm: float
    step: float
    propagations: int
    direction_norm: float


@dataclass(frozen=True)
class SketchMatrix:
    """Row-selection sketch: row i of S picks state entry row_to_column[i]."""

    row_to_column: np.ndarray
    n_columns: int

    def restrict(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[self.row_to_column]

    def restrict_rows(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z)[self.row_to_column, :]


def sample_sketch(k_prime: int, k: int, rng: np.random.Generator) -> SketchMatrix:
    """Sample k' distinct state rows without replacement; S S^T = I exactly."""
    if k_prime > k:
        raise ValueError(f"sketch size {k_prime} exceeds state size {k}")
    idx = rng.choice(k, size=k_prime, replace=False)
    return SketchMatrix(row_to_column=idx, n_columns=k)


def direction_explicit(
    z,
    metric,
    grad_rho,
    rank_tol: float = 1e-10,
    damping_lambda: float = 0.0,
    damping_metric=None,
) -> np.ndarray:
    """Descent direction from the explicit Jacobian via (pivoted) QR.

    Solves min || pinv(L^T) grad_rho + (L Z) eta ||; with damping the stack is
    augmented by sqrt(lambda) rows of the regularizer (identity by default),
    which reproduces the damped normal equations exactly.
    """
    z = np.asarray(z, dtype=float)
    y = metric.apply_L_matrix(z) if metric is not None else z.copy()
    rhs = metric.apply_Lt_pinv(grad_rho) if metric is not None else np.asarray(grad_rho, float)
    if damping_lambda > 0.0:
        root = math.sqrt(damping_lambda)
        if damping_metric is None:
            extra = root * np.eye(z.shape[1])
        else:
            extra = root * damping_metric.apply_L_matrix(z)
        y = np.vstack([y, extra])
        rhs = np.concatenate([rhs, np.zeros(extra.shape[0])])
    return -solve_least_squares_min_norm(y, rhs, tol=rank_tol)


def gradient_adjoint(model, grad_rho) -> np.ndarray:
    """Parameter gradient via one adjoint solve: -d_theta h^T lam."""
    lam = model.apply_drho_h_transpose_inverse(grad_rho)
    return -model.apply_dtheta_h_transpose(lam)


def projected_gradient_adjoint(model, metric, grad_rho, grad_theta=None) -> np.ndarray:
    """Right-hand side Z^T proj(grad_rho) for the matrix-free normal equations.

    For metrics whose L^T drops directions (the homogeneous Sobolev family,
    or a rank-deficient transport divergence) the least-squares formulation
    only sees the projection of the state gradient onto range(L^T); feeding
    the raw parameter gradient to CG would solve a different system. When no
    projection is needed the precomputed grad_theta is reused.
    """
    if metric is None or not getattr(metric, "needs_tangent_projection", False):
        if grad_theta is not None:
            return np.asarray(grad_theta, dtype=float)
        return gradient_adjoint(model, grad_rho)
    return gradient_adjoint(model, metric.project_state_gradient(grad_rho))


def gl_action(model, metric, eta) -> np.ndarray:
    """Information-matrix action Z^T L^T L Z eta without forming Z.

    One linearized forward gives gamma = Z eta, the metric weights it, and one
    adjoint solve brings it back to parameter space.
    """
    born = model.apply_dtheta_h(eta)
    if isinstance(born, list):
        gamma = model.apply_drho_h_inverse([-f for f in born])
    else:
        gamma = model.apply_drho_h_inverse(-born)
    weighted = metric.apply_LtL(gamma) if metric is not None else gamma
    lam = model.apply_drho_h_transpose_inverse(weighted)
    return -model.apply_dtheta_h_transpose(lam)


def direction_implicit(model, metric, grad_theta, cfg: NgdConfig, damping_metric=None):
    """Descent direction via conjugate gradient on the damped information action.

    Returns (eta, CgReport). Non-convergence is reported, not raised; the best
    iterate is still usable and the caller may damp and retry. The damping
    regularizer is the identity unless a second metric operator is given.
    """
    grad_theta = np.asarray(grad_theta, dtype=float)
    p = grad_theta.shape[0]
    lam = cfg.damping_lambda

    def apply(eta):
        out = gl_action(model, metric, eta)
        if lam > 0.0:
            if damping_metric is None:
                out = out + lam * eta
            else:
                out = out + lam * gl_action(model, damping_metric, eta)
        return out

    max_iter = cfg.cg_max_iter if cfg.cg_max_iter is not None else 3 * p
    report = cg_solve(apply, -grad_theta, tol=cfg.cg_tol, max_iter=max_iter)
    return report.solution, report


def assemble_jacobian(model) -> np.ndarray:
    """Column-by-column Jacobian from the constraint actions (test oracle)."""
    p = model.param_dim
    cols = []
    for j in range(p):
        e = np.zeros(p)
        e[j] = 1.0
        born = model.apply_dtheta_h(e)
        if isinstance(born, list):
            cols.append(model.apply_drho_h_inverse([-f for f in born]))
        else:
            cols.append(model.apply_drho_h_inverse(-born))
    return np.stack(cols, axis=1)


def hutchinson_jacobian(model, m: int, rng: np.random.Generator) -> np.ndarray:
    """Randomized Jacobian estimate (1/m) sum xi (Z^T xi)^T with Rademacher xi.

    Each probe costs one adjoint solve; the estimate plugs into the explicit
    direction solver as an opt-in approximation.
    """
    k = model.state_dim
    p = model.param_dim
    acc = np.zeros((k, p))
    for _ in range(m):
        xi = rng.integers(0, 2, size=k) * 2.0 - 1.0
        zt_xi = gradient_adjoint(model, xi)
        acc += np.outer(xi, zt_xi)
    return acc / m


@dataclass(frozen=True)
class LineSearchResult:
    tau: float
    f_new: float
    n_evals: int
    stagnated: bool


def line_search(
    eval_loss, theta, eta, f0: float, cfg: NgdConfig, g_dot_eta: float = 0.0
) -> LineSearchResult:
    """Backtracking on pure monotone decrease (optional sufficient-decrease term).

    Tries tau = step0 * shrink^n and accepts the first trial that lowers the
    loss; exhausting the halvings returns tau = 0 with the stagnation flag set.
    """
    tau = cfg.step0
    for n in range(cfg.ls_max_halvings):
        f_new = eval_loss(theta + tau * eta)
        if f_new < f0 + cfg.sufficient_decrease * tau * g_dot_eta:
            return LineSearchResult(tau, f_new, n + 1, False)
        tau *= cfg.ls_shrink
    return LineSearchResult(0.0, f0, cfg.ls_max_halvings, True)


@dataclass
class OptimizeResult:
    theta: np.ndarray
    records: list[IterationRecord]
    stagnated: bool = False

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss


def build_metric_for_model(model, kind, rho=None):
    """Metric operator on the model's metric domain, refreshed at rho if given."""
    from .metrics import BlockMetric, MetricOperator

    if isinstance(kind, str):
        kind = MetricKind.parse(kind)
    layout = getattr(model, "data_layout", None)
    if layout is not None:
        densities = None
        if kind.state_dependent:
            if rho is None:
                raise ValueError("state-dependent data metric needs the current data")
            densities = np.split(np.asarray(rho, float), layout[0])
        return BlockMetric(kind, model.data_grid, layout[0], densities=densities)
    return MetricOperator(kind, model.grid, rho if kind.state_dependent else None)


def optimize(model, theta0, cfg: NgdConfig, callback=None) -> OptimizeResult:
    """Run the descent loop from theta0 under cfg.

    Uses the explicit QR route when the model exposes a Jacobian (unless the
    config forces the matrix-free route), refreshes state-dependent metrics at
    every iterate, and stops on max_iters, the propagation budget, or a
    stagnated line search. The trajectory is always returned. ``callback``,
    if given, is invoked as callback(iteration, theta) after each accepted
    step.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    kind = cfg.metric_kind()
    use_explicit = cfg.path == "explicit" or (
        cfg.path == "auto" and model.has_explicit_jacobian
    )
    if cfg.path == "explicit" and not model.has_explicit_jacobian:
        raise ValueError("explicit path requested but the model has no Jacobian")
    if cfg.minibatch_size is not None and not use_explicit:
        raise ValueError("mini-batch sketching requires the explicit path")
    if cfg.minibatch_size is not None and kind is not None and kind.family not in (
        "l2",
        "fisher-rao",
    ):
        raise ValueError(
            "mini-batch sketching only supports diagonal metrics (l2, fisher-rao)"
        )
    sketch_rng = np.random.default_rng([cfg.seed, 101])
    hutch_rng = np.random.default_rng([cfg.seed, 202])

    metric = None
    records: list[IterationRecord] = []
    stagnated = False

    rho = model.solve_forward(theta)
    loss, grad_rho = model.loss_and_grad_rho(rho)
    records.append(
        IterationRecord(0, loss, float("nan"), 0.0, model.propagation_counter, 0.0)
    )

    for it in range(1, cfg.max_iters + 1):
        if (
            cfg.max_propagations is not None
            and model.propagation_counter >= cfg.max_propagations
        ):
            break
        if kind is not None:
            if metric is None:
                metric = build_metric_for_model(
                    model, kind, model.metric_state(rho) if kind.state_dependent else None
                )
            elif kind.state_dependent:
                metric = metric.refresh(model.metric_state(rho))

        if kind is None:
            # Plain gradient descent.
            if use_explicit:
                z = model.jacobian(theta)
                grad_theta = z.T @ grad_rho
            else:
                grad_theta = gradient_adjoint(model, grad_rho)
            eta = -grad_theta
        elif use_explicit:
            z = model.jacobian(theta)
            grad_theta = z.T @ grad_rho
            if cfg.hutchinson_m is not None:
                z = hutchinson_jacobian(model, cfg.hutchinson_m, hutch_rng)
            if cfg.minibatch_size is not None:
                sketch = sample_sketch(cfg.minibatch_size, model.state_dim, sketch_rng)
                z_used = sketch.restrict_rows(z)
                grad_used = sketch.restrict(grad_rho)
                sub_metric = _sketched_metric(metric, sketch)
                eta = direction_explicit(
                    z_used, sub_metric, grad_used, cfg.rank_tol,
                    cfg.damping_lambda, None,
                )
            else:
                damping_metric = (
                    build_metric_for_model(
                        model, cfg.damping_metric, model.metric_state(rho)
                    )
                    if cfg.damping_metric is not None
                    else None
                )
                eta = direction_explicit(
                    z, metric, grad_rho, cfg.rank_tol,
                    cfg.damping_lambda, damping_metric,
                )
        else:
            grad_theta = gradient_adjoint(model, grad_rho)
            if cfg.hutchinson_m is not None:
                z_est = hutchinson_jacobian(model, cfg.hutchinson_m, hutch_rng)
                eta = direction_explicit(
                    z_est, metric, grad_rho, cfg.rank_tol, cfg.damping_lambda, None
                )
            else:
                damping_metric = (
                    build_metric_for_model(
                        model, cfg.damping_metric, model.metric_state(rho)
                    )
                    if cfg.damping_metric is not None
                    else None
                )
                rhs_grad = projected_gradient_adjoint(
                    model, metric, grad_rho, grad_theta
                )
                eta, _ = direction_implicit(
                    model, metric, rhs_grad, cfg, damping_metric
                )

        grad_norm = float(np.linalg.norm(grad_theta))

        def eval_loss(candidate):
            # Infeasible candidates (e.g. nonpositive medium, CFL violation,
            # blowup) count as rejected trials, not hard failures.
            try:
                rho_c = model.solve_forward(candidate)
            except (ValueError, RuntimeError):
                return math.inf
            return model.loss_and_grad_rho(rho_c)[0]

        if cfg.fixed_step:
            tau = cfg.step0
            f_new = eval_loss(theta + tau * eta)
            if not math.isfinite(f_new):
                raise RuntimeError(
                    f"fixed step {tau} left the feasible set at iteration {it}"
                )
        else:
            result = line_search(
                eval_loss, theta, eta, loss, cfg, g_dot_eta=float(grad_theta @ eta)
            )
            tau, f_new = result.tau, result.f_new
            if result.stagnated:
                # No accepted step: stop without a record so the trace stays
                # strictly decreasing.
                stagnated = True
                break

        theta = theta + tau * eta
        rho = model.solve_forward(theta)
        loss, grad_rho = model.loss_and_grad_rho(rho)
        records.append(
            IterationRecord(
                it, loss, grad_norm, tau,
                model.propagation_counter, float(np.linalg.norm(eta)),
            )
        )
        if callback is not None:
            callback(it, theta)

    return OptimizeResult(theta=theta, records=records, stagnated=stagnated)


def _sketched_metric(metric, sketch: SketchMatrix):
    """Restriction of a diagonal metric to the sketched rows."""
    if metric is None:
        return None
    from .metrics import MetricOperator

    class _Diagonal:
        def __init__(self, weights):
            self.w = weights

        def apply_L_matrix(self, z):
            return z * self.w[:, None]

        def apply_Lt_pinv(self, g):
            return g / self.w

        def apply_L(self, v):
            return v * self.w

        def apply_LtL(self, v):
            return v * self.w**2

    if metric.kind.family == "l2":
        return None
    if metric.kind.family == "fisher-rao":
        if isinstance(metric, MetricOperator):
            return _Diagonal(1.0 / np.sqrt(metric.rho[sketch.row_to_column]))
    raise ValueError("sketching is only defined for diagonal metrics")
