"""Acoustic wave model for full waveform inversion at desk scale.

Physics: m(x) u_tt - lap(u) = s with zero initial data, integrated by a
second-order leapfrog scheme on a padded grid. Absorption uses a sponge: each
step the new field is scaled by a damping profile d <= 1 (d = 1 in the
interior), which keeps every time step an explicit linear map, so the adjoint
solve is the literal transpose of the forward recursion and the dot-product
identity holds to machine precision.

One solved-form step (f is whatever space-time right-hand side drives it):

    u_next = d * (2 u - d * u_prev + (dt^2 / m) * (lap(u) + f))

which corresponds to the constraint, per time level n,

    h^n = (m / dt^2) (u^{n+1}/d - 2 u^n + d u^{n-1}) - lap(u^n) - f^n = 0.

Hence d_m h . eta injects eta * w with w the damped second time derivative of
the cached wavefield, and d_m h^T correlates adjoint fields with w (zero-lag,
summed over sources). Parameters are the interior model cells; the padded
ring replicates edge cells, and its transpose scatter-adds back.

The observed state is the stack of receiver traces over sources, one
(n_receivers x n_time) panel per source, flattened receiver-major.
"""

from __future__ import annotations

import numpy as np

from ..grids import Grid
from .base import ForwardModel, least_squares_misfit


def ricker_wavelet(n_t: int, dt: float, peak_freq: float, delay: float | None = None):
    """Ricker wavelet samples; the delay defaults to 1.5 periods."""
    if delay is None:
        delay = 1.5 / peak_freq
    t = dt * np.arange(n_t) - delay
    arg = (np.pi * peak_freq * t) ** 2
    return (1.0 - 2.0 * arg) * np.exp(-arg)


class WaveFwiModel(ForwardModel):
    def __init__(
        self,
        cells: tuple[int, int],
        spacing: tuple[float, float],
        n_t: int,
        dt: float,
        sources,
        receivers,
        wavelet,
        sponge_width: int = 10,
        sponge_strength: float = 0.015,
        cfl_factor: float = 0.5,
        reference=None,
    ):
        super().__init__()
        self.nx, self.nz = int(cells[0]), int(cells[1])
        self.dx, self.dz = float(spacing[0]), float(spacing[1])
        self.n_t = int(n_t)
        self.dt = float(dt)
        self.sources = [tuple(map(int, s)) for s in sources]
        self.receivers = [tuple(map(int, r)) for r in receivers]
        self.wavelet = np.asarray(wavelet, dtype=float)
        if self.wavelet.shape != (self.n_t,):
            raise ValueError("wavelet must have one sample per time step")
        self.cfl_factor = float(cfl_factor)

        w = int(sponge_width)
        self.pad = w
        self.npx, self.npz = self.nx + 2 * w, self.nz + 2 * w
        ix = np.arange(self.npx)
        iz = np.arange(self.npz)
        # Depth into the sponge along each axis (0 inside the interior block).
        depth_x = np.maximum(np.maximum(w - ix, ix - (w + self.nx - 1)), 0)
        depth_z = np.maximum(np.maximum(w - iz, iz - (w + self.nz - 1)), 0)
        depth = np.maximum(depth_x[:, None], depth_z[None, :]).astype(float)
        self.damp = np.exp(-((sponge_strength * depth) ** 2))
        # Edge-replication map from padded cells to interior model cells.
        self._map_x = np.clip(ix - w, 0, self.nx - 1)[:, None] * self.nz
        self._map_z = np.clip(iz - w, 0, self.nz - 1)[None, :]
        self._pad_flat = (self._map_x + self._map_z).ravel()

        rec = np.asarray(self.receivers, dtype=int)
        src = np.asarray(self.sources, dtype=int)
        for name, arr in (("receiver", rec), ("source", src)):
            if np.any(arr < 0) or np.any(arr[:, 0] >= self.nx) or np.any(arr[:, 1] >= self.nz):
                raise ValueError(f"{name} index out of the model grid")
        if len(set(self.receivers)) != len(self.receivers):
            # Scatter in the adjoint uses plain fancy indexing.
            raise ValueError("receiver locations must be distinct")
        self._rec_ix = rec[:, 0] + w
        self._rec_iz = rec[:, 1] + w
        self._src_padded = [(sx + w, sz + w) for sx, sz in self.sources]

        self.reference = None if reference is None else np.asarray(reference, float)
        self._cache_theta = None
        self._cache_u = None
        self._cache_w = None
        self._cache_traces = None

    # --- layout -----------------------------------------------------------
    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def n_receivers(self) -> int:
        return len(self.receivers)

    @property
    def data_layout(self) -> tuple[int, int, int]:
        return (self.n_sources, self.n_receivers, self.n_t)

    @property
    def data_grid(self) -> Grid:
        """Receiver x time panel on which data-space metrics act."""
        return Grid.index_space([self.n_receivers, self.n_t])

    @property
    def state_dim(self) -> int:
        return self.n_sources * self.n_receivers * self.n_t

    @property
    def param_dim(self) -> int:
        return self.nx * self.nz

    # --- parameter handling -------------------------------------------------
    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.param_dim,):
            raise ValueError(f"theta must have length {self.param_dim}")
        if np.any(theta <= 0.0):
            raise ValueError("squared slowness must be strictly positive")
        limit = self.cfl_factor * min(self.dx, self.dz) * np.sqrt(theta.min())
        if self.dt > limit:
            raise ValueError(
                f"time step {self.dt} violates the CFL bound {limit:.6g}"
            )
        return theta

    def _pad_model(self, theta) -> np.ndarray:
        return theta[self._pad_flat].reshape(self.npx, self.npz)

    def _pad_transpose(self, field) -> np.ndarray:
        out = np.zeros(self.param_dim)
        np.add.at(out, self._pad_flat, field.ravel())
        return out

    # --- core linear solves ---------------------------------------------------
    def _laplacian(self, u) -> np.ndarray:
        out = (-2.0 / self.dx**2 - 2.0 / self.dz**2) * u
        out[1:, :] += u[:-1, :] / self.dx**2
        out[:-1, :] += u[1:, :] / self.dx**2
        out[:, 1:] += u[:, :-1] / self.dz**2
        out[:, :-1] += u[:, 1:] / self.dz**2
        return out

    def _forward_loop(self, dt2m, rhs=None, point_source=None, store=False):
        """March the leapfrog once; returns (traces, wavefield stack or None).

        rhs is an optional (n_t, npx, npz) source stack; point_source an
        optional padded (ix, iz) injecting the model wavelet.
        """
        d = self.damp
        a = np.zeros((self.npx, self.npz))
        b = np.zeros_like(a)
        traces = np.empty((self.n_receivers, self.n_t))
        stack = np.empty((self.n_t, self.npx, self.npz)) if store else None
        for n in range(self.n_t):
            f = self._laplacian(b)
            if rhs is not None:
                f = f + rhs[n]
            if point_source is not None:
                f[point_source] += self.wavelet[n]
            c = d * (2.0 * b - d * a + dt2m * f)
            traces[:, n] = c[self._rec_ix, self._rec_iz]
            if store:
                stack[n] = c
            a, b = b, c
        self.propagation_counter += 1
        return traces, stack

    def _reverse_loop(self, dt2m, data_rhs) -> np.ndarray:
        """Exact transpose of the trace-recording forward map.

        Maps an (n_receivers, n_t) panel to the space-time adjoint field
        stack, running the transposed recursion backward in time.
        """
        d = self.damp
        abar = np.zeros((self.npx, self.npz))
        bbar = np.zeros_like(abar)
        xi = np.empty((self.n_t, self.npx, self.npz))
        for n in range(self.n_t - 1, -1, -1):
            cbar = bbar.copy()
            cbar[self._rec_ix, self._rec_iz] += data_rhs[:, n]
            w = d * dt2m * cbar
            xi[n] = w
            new_b = abar + 2.0 * d * cbar + self._laplacian(w)
            new_a = -(d * d) * cbar
            abar, bbar = new_a, new_b
        self.propagation_counter += 1
        return xi

    # --- forward map -----------------------------------------------------------
    def solve_forward(self, theta) -> np.ndarray:
        theta = self._check_theta(theta)
        if self._cache_theta is not None and np.array_equal(theta, self._cache_theta):
            return self._cache_traces.copy()
        dt2m = self.dt**2 / self._pad_model(theta)
        stacks, panels = [], []
        for src in self._src_padded:
            traces, stack = self._forward_loop(dt2m, point_source=src, store=True)
            if not np.all(np.isfinite(traces)):
                raise RuntimeError(
                    "wave solve blew up (non-finite traces); check the CFL margin"
                )
            stacks.append(stack)
            panels.append(traces)
        self._cache_theta = theta.copy()
        self._cache_u = stacks
        self._cache_w = None
        self._cache_traces = np.concatenate([t.ravel() for t in panels])
        return self._cache_traces.copy()

    def generate_reference(self, theta_true) -> np.ndarray:
        """Record observed data from a ground-truth model; not charged as cost."""
        counter = self.propagation_counter
        data = self.solve_forward(theta_true)
        self.reference = data
        self.propagation_counter = counter
        self._cache_theta = None
        self._cache_u = None
        self._cache_w = None
        return data

    def loss_and_grad_rho(self, rho):
        if self.reference is None:
            raise RuntimeError("no observed data set; call generate_reference first")
        return least_squares_misfit(rho, self.reference)

    # --- constraint actions ------------------------------------------------------
    def _require_cache(self):
        if self._cache_theta is None:
            raise RuntimeError("forward wavefields not cached; run solve_forward first")

    def _dtt_fields(self):
        """Damped second time derivatives of the cached wavefields, per source."""
        self._require_cache()
        if self._cache_w is None:
            d = self.damp
            out = []
            for u in self._cache_u:
                w = u / d
                w[1:] -= 2.0 * u[:-1]
                w[2:] += d * u[:-2]
                out.append(w / self.dt**2)
            self._cache_w = out
        return self._cache_w

    def _split_panels(self, data):
        data = np.asarray(data, dtype=float)
        if data.shape != (self.state_dim,):
            raise ValueError(f"data vector must have length {self.state_dim}")
        return [
            block.reshape(self.n_receivers, self.n_t)
            for block in np.split(data, self.n_sources)
        ]

    def apply_drho_h_inverse(self, rhs_fields) -> np.ndarray:
        """Linearized forward: per-source space-time sources to trace panels."""
        self._require_cache()
        dt2m = self.dt**2 / self._pad_model(self._cache_theta)
        panels = []
        for field in rhs_fields:
            traces, _ = self._forward_loop(dt2m, rhs=field)
            panels.append(traces)
        return np.concatenate([t.ravel() for t in panels])

    def apply_drho_h_transpose_inverse(self, data_rhs):
        """Reverse-time solve: trace-space input to per-source adjoint fields."""
        self._require_cache()
        dt2m = self.dt**2 / self._pad_model(self._cache_theta)
        return [self._reverse_loop(dt2m, panel) for panel in self._split_panels(data_rhs)]

    def apply_dtheta_h(self, eta):
        """Model perturbation to per-source Born source fields eta * u_tt."""
        eta_pad = np.asarray(eta, dtype=float)[self._pad_flat].reshape(
            self.npx, self.npz
        )
        return [eta_pad * w for w in self._dtt_fields()]

    def apply_dtheta_h_transpose(self, lam_fields) -> np.ndarray:
        """Zero-lag correlation of adjoint fields with u_tt, summed over sources."""
        acc = np.zeros((self.npx, self.npz))
        for lam, w in zip(lam_fields, self._dtt_fields()):
            acc += np.einsum("tij,tij->ij", lam, w)
        return self._pad_transpose(acc)
