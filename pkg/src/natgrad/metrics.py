"""Metric operator family: for each metric a pair of linear actions v -> L v
and g -> pinv(L^T) g, plus information-matrix assembly.

Every descent direction is computed from the same least-squares problem

    min_eta || pinv(L^T) grad_rho_f + (L Z) eta ||_2,

so switching metrics only swaps the L pair:

    l2           L = I
    fisher-rao   L = diag(1/sqrt(rho))
    h1           L = [I; G],              pinv(L^T) g = [w; G w], w = (I+G^TG)^-1 g
    h-1          L = [I; G](I+G^TG)^-1,   pinv(L^T) g = [g; G g]
    hdot1        L = G,                   pinv(L^T) g = G (G^TG)^+ g
    hdot-1       L = G (G^TG)^+,          pinv(L^T) g = G g
    w2           L = pinv(B),             pinv(L^T) g = B^T g

with G the staggered Neumann gradient and B the density-weighted
central-difference divergence. Fisher-Rao and the transport metric depend on
the current density and must be refreshed every iteration; refreshing returns
a new operator, so operators stay immutable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import (
    DifferentialOperatorSet,
    Grid,
    WeightedDivergence,
    build_operator_set,
    build_weighted_divergence,
)

_FAMILIES = ("l2", "fisher-rao", "sobolev", "wasserstein")


@dataclass(frozen=True)
class MetricKind:
    """Identifies one metric family plus its parameters."""

    family: str
    order: int = 1
    homogeneous: bool = False
    mobility_exponent: float = 0.5

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown metric family {self.family!r}")
        if self.family == "sobolev" and self.order not in (1, -1):
            raise ValueError("sobolev order must be +1 or -1")
        if not 0.0 <= self.mobility_exponent <= 1.0:
            raise ValueError("mobility exponent must lie in [0, 1]")

    @property
    def state_dependent(self) -> bool:
        return self.family in ("fisher-rao", "wasserstein")

    @staticmethod
    def parse(text: str) -> "MetricKind":
        """Parse the metric names used in configs and on the command line."""
        t = text.strip().lower()
        if t == "l2":
            return MetricKind("l2")
        if t == "fisher-rao":
            return MetricKind("fisher-rao")
        if t == "h1":
            return MetricKind("sobolev", order=1)
        if t == "h-1":
            return MetricKind("sobolev", order=-1)
        if t == "hdot1":
            return MetricKind("sobolev", order=1, homogeneous=True)
        if t == "hdot-1":
            return MetricKind("sobolev", order=-1, homogeneous=True)
        if t == "w2":
            return MetricKind("wasserstein")
        if t.startswith("w2:k="):
            return MetricKind("wasserstein", mobility_exponent=float(t[5:]))
        raise ValueError(f"unknown metric name {text!r}")

    def label(self) -> str:
        if self.family == "sobolev":
            base = "hdot" if self.homogeneous else "h"
            return f"{base}{self.order}"
        if self.family == "wasserstein" and self.mobility_exponent != 0.5:
            return f"w2:k={self.mobility_exponent:g}"
        return {"l2": "l2", "fisher-rao": "fisher-rao", "wasserstein": "w2"}[self.family]


@dataclass(frozen=True)
class InfoMatrix:
    """Symmetric PSD information matrix (L Z)^T (L Z) for one metric."""

    matrix: np.ndarray
    kind: MetricKind


class MetricOperator:
    """The (L, pinv(L^T)) action pair for one metric on one grid."""

    def __init__(self, kind: MetricKind, grid: Grid, rho: np.ndarray | None = None):
        if kind.state_dependent:
            if rho is None:
                raise ValueError(f"metric {kind.label()!r} requires a density")
            rho = np.asarray(rho, dtype=float)
            if np.any(rho <= 0.0):
                raise ValueError("density must be strictly positive")
        self.kind = kind
        self.grid = grid
        self.rho = rho
        self.state_dependent = kind.state_dependent
        self._ops: DifferentialOperatorSet | None = None
        self._wdiv: WeightedDivergence | None = None
        self._sqrt_rho: np.ndarray | None = None
        if kind.family == "sobolev":
            self._ops = build_operator_set(grid)
        elif kind.family == "fisher-rao":
            self._sqrt_rho = np.sqrt(rho)
        elif kind.family == "wasserstein":
            self._wdiv = build_weighted_divergence(grid, rho, kind.mobility_exponent)

    @property
    def row_dim(self) -> int:
        k = self.grid.size
        fam = self.kind.family
        if fam in ("l2", "fisher-rao"):
            return k
        if fam == "wasserstein":
            return self.grid.dim * k
        edges = self._ops.edge_count
        return edges if self.kind.homogeneous else k + edges

    @property
    def weighted_divergence(self) -> WeightedDivergence | None:
        return self._wdiv

    def refresh(self, rho) -> "MetricOperator":
        """Return an operator rebuilt at the new density (self if state-free)."""
        if not self.state_dependent:
            return self
        return MetricOperator(self.kind, self.grid, rho)

    def apply_L(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        fam = self.kind.family
        if fam == "l2":
            return v
        if fam == "fisher-rao":
            return v / self._sqrt_rho
        if fam == "wasserstein":
            return self._wdiv.apply_pinv(v)
        g = self._ops.grad_neumann
        if self.kind.order == 1:
            if self.kind.homogeneous:
                return g @ v
            return np.concatenate([v, g @ v])
        if self.kind.homogeneous:
            return g @ self._ops.solve_poisson_deflated(v)
        w = self._ops.solve_h1(v)
        return np.concatenate([w, g @ w])

    def apply_Lt_pinv(self, grad) -> np.ndarray:
        grad = np.asarray(grad, dtype=float)
        fam = self.kind.family
        if fam == "l2":
            return grad
        if fam == "fisher-rao":
            return grad * self._sqrt_rho
        if fam == "wasserstein":
            return self._wdiv.apply_bt(grad)
        g = self._ops.grad_neumann
        if self.kind.order == 1:
            if self.kind.homogeneous:
                return g @ self._ops.solve_poisson_deflated(grad)
            w = self._ops.solve_h1(grad)
            return np.concatenate([w, g @ w])
        if self.kind.homogeneous:
            return g @ grad
        return np.concatenate([grad, g @ grad])

    def apply_LtL(self, v) -> np.ndarray:
        """Apply L^T L in one shot (exact closed forms, no stacking)."""
        v = np.asarray(v, dtype=float)
        fam = self.kind.family
        if fam == "l2":
            return v
        if fam == "fisher-rao":
            return v / self.rho
        if fam == "wasserstein":
            return self._wdiv.apply_gram_pinv(v)
        gtg = -self._ops.laplacian_neumann
        if self.kind.order == 1:
            if self.kind.homogeneous:
                return gtg @ v
            return v + gtg @ v
        if self.kind.homogeneous:
            return self._ops.solve_poisson_deflated(v)
        return self._ops.solve_h1(v)

    @property
    def needs_tangent_projection(self) -> bool:
        """True when L^T is not full row rank, so L^T pinv(L^T) is a proper
        projection: the homogeneous Sobolev metrics (constants are dropped)
        and a rank-deficient transport divergence."""
        if self.kind.family == "sobolev" and self.kind.homogeneous:
            return True
        if self.kind.family == "wasserstein":
            return self._wdiv.rank_deficient
        return False

    def project_state_gradient(self, g) -> np.ndarray:
        """Project onto range(L^T): the component of the state gradient the
        metric can see. The matrix-free route must feed Z^T applied to this
        projection to agree with the least-squares formulation."""
        g = np.asarray(g, dtype=float)
        if not self.needs_tangent_projection:
            return g
        if self.kind.family == "sobolev":
            return g - g.mean()
        return self._wdiv.b @ self._wdiv.apply_pinv(g)

    def apply_L_matrix(self, z) -> np.ndarray:
        """Apply L to every column of a dense matrix."""
        z = np.asarray(z, dtype=float)
        out = np.empty((self.row_dim, z.shape[1]))
        for j in range(z.shape[1]):
            out[:, j] = self.apply_L(z[:, j])
        return out

    def info_matrix(self, z) -> InfoMatrix:
        """Assemble (L Z)^T (L Z), symmetrized."""
        y = self.apply_L_matrix(z)
        g = y.T @ y
        return InfoMatrix(matrix=0.5 * (g + g.T), kind=self.kind)


def build_metric(kind: MetricKind | str, grid: Grid, rho=None) -> MetricOperator:
    if isinstance(kind, str):
        kind = MetricKind.parse(kind)
    return MetricOperator(kind, grid, rho)


def normalize_to_density(values, floor_fraction: float = 0.1) -> np.ndarray:
    """Affine shift-and-scale of arbitrary data onto a strictly positive density.

    Shifts by -min + floor_fraction * (max - min), then scales to mean one
    (unit total mass under the unweighted quadrature, where each sample has
    unit cell measure). Mean-one rather than sum-one keeps density-weighted
    operators on the same scale as their unweighted counterparts regardless of
    the panel size. Flat inputs map to the uniform density.
    """
    v = np.asarray(values, dtype=float)
    spread = float(v.max() - v.min())
    if spread <= 1e-300:
        return np.ones(v.shape)
    shifted = v - v.min() + floor_fraction * spread
    return shifted * (v.size / shifted.sum())


class BlockMetric:
    """One metric applied per data panel, summed into a single operator.

    Used for multi-source data: the state vector is the concatenation of
    n_blocks panels, each living on ``block_grid``. State-dependent metrics
    weight each panel by its own normalized density; state-free metrics share
    a single underlying operator across panels.
    """

    def __init__(
        self,
        kind: MetricKind | str,
        block_grid: Grid,
        n_blocks: int,
        densities=None,
        normalize: bool = True,
    ):
        if isinstance(kind, str):
            kind = MetricKind.parse(kind)
        self.kind = kind
        self.block_grid = block_grid
        self.n_blocks = n_blocks
        self.normalize = normalize
        self.state_dependent = kind.state_dependent
        self.grid = block_grid
        if kind.state_dependent:
            if densities is None:
                raise ValueError(f"metric {kind.label()!r} requires panel densities")
            self._blocks = [
                MetricOperator(kind, block_grid, self._densify(d)) for d in densities
            ]
        else:
            shared = MetricOperator(kind, block_grid)
            self._blocks = [shared] * n_blocks

    def _densify(self, values) -> np.ndarray:
        return normalize_to_density(values) if self.normalize else np.asarray(values)

    @property
    def block_size(self) -> int:
        return self.block_grid.size

    @property
    def row_dim(self) -> int:
        return sum(b.row_dim for b in self._blocks)

    def _split(self, v) -> list[np.ndarray]:
        v = np.asarray(v, dtype=float)
        expected = self.n_blocks * self.block_size
        if v.shape != (expected,):
            raise ValueError(f"state shape {v.shape} != ({expected},)")
        return np.split(v, self.n_blocks)

    def refresh(self, state) -> "BlockMetric":
        if not self.state_dependent:
            return self
        panels = self._split(state)
        return BlockMetric(
            self.kind, self.block_grid, self.n_blocks,
            densities=panels, normalize=self.normalize,
        )

    def apply_L(self, v) -> np.ndarray:
        return np.concatenate(
            [b.apply_L(p) for b, p in zip(self._blocks, self._split(v))]
        )

    def apply_Lt_pinv(self, grad) -> np.ndarray:
        return np.concatenate(
            [b.apply_Lt_pinv(p) for b, p in zip(self._blocks, self._split(grad))]
        )

    def apply_LtL(self, v) -> np.ndarray:
        return np.concatenate(
            [b.apply_LtL(p) for b, p in zip(self._blocks, self._split(v))]
        )

    @property
    def needs_tangent_projection(self) -> bool:
        return any(b.needs_tangent_projection for b in self._blocks)

    def project_state_gradient(self, g) -> np.ndarray:
        return np.concatenate(
            [b.project_state_gradient(p) for b, p in zip(self._blocks, self._split(g))]
        )

    def apply_L_matrix(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.empty((self.row_dim, z.shape[1]))
        for j in range(z.shape[1]):
            out[:, j] = self.apply_L(z[:, j])
        return out

    def info_matrix(self, z) -> InfoMatrix:
        y = self.apply_L_matrix(z)
        g = y.T @ y
        return InfoMatrix(matrix=0.5 * (g + g.T), kind=self.kind)
