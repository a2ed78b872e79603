"""Wave model: exact transposability, gradients, linearity, symmetry."""

import numpy as np
import pytest

from natgrad.models import WaveFwiModel, ricker_wavelet
from natgrad.solver import assemble_jacobian, gl_action, gradient_adjoint

from conftest import make_wave_model


class TestForward:
    def test_zero_wavelet_gives_zero_traces(self):
        model = WaveFwiModel(
            cells=(6, 6), spacing=(1.0, 1.0), n_t=50, dt=0.4,
            sources=[(3, 0)], receivers=[(i, 0) for i in range(6)],
            wavelet=np.zeros(50),
        )
        traces = model.solve_forward(np.ones(36))
        np.testing.assert_array_equal(traces, np.zeros(model.state_dim))

    def test_source_linearity_exact(self):
        n_t, dt = 80, 0.4
        w = ricker_wavelet(n_t, dt, 0.1)
        kw = dict(cells=(6, 6), spacing=(1.0, 1.0), n_t=n_t, dt=dt,
                  sources=[(3, 0)], receivers=[(i, 0) for i in range(6)])
        m = np.ones(36)
        base = WaveFwiModel(wavelet=w, **kw).solve_forward(m)
        doubled = WaveFwiModel(wavelet=2.0 * w, **kw).solve_forward(m)
        np.testing.assert_array_equal(doubled, 2.0 * base)

    def test_mirror_symmetry_of_traces(self):
        # Centered source in a homogeneous medium: receivers mirror-equal.
        n_t, dt = 100, 0.4
        model = WaveFwiModel(
            cells=(9, 8), spacing=(1.0, 1.0), n_t=n_t, dt=dt,
            sources=[(4, 0)], receivers=[(i, 0) for i in range(9)],
            wavelet=ricker_wavelet(n_t, dt, 0.1),
        )
        traces = model.solve_forward(np.ones(72)).reshape(9, n_t)
        np.testing.assert_allclose(traces, traces[::-1, :], atol=1e-10)

    def test_cfl_violation_rejected(self):
        model = WaveFwiModel(
            cells=(6, 6), spacing=(1.0, 1.0), n_t=10, dt=2.0,
            sources=[(3, 0)], receivers=[(0, 0)], wavelet=np.zeros(10),
        )
        with pytest.raises(ValueError, match="CFL"):
            model.solve_forward(np.ones(36))

    def test_nonpositive_medium_rejected(self, wave_model):
        model, _ = wave_model
        bad = np.ones(model.param_dim)
        bad[5] = -1.0
        with pytest.raises(ValueError):
            model.solve_forward(bad)

    def test_forward_cache(self, wave_model):
        model, m_true = wave_model
        m0 = np.full(model.param_dim, 1.1)
        model.solve_forward(m0)
        count = model.propagation_counter
        model.solve_forward(m0)
        assert model.propagation_counter == count


class TestAdjointness:
    def test_dot_product_identity(self, wave_model, rng):
        model, _ = wave_model
        model.solve_forward(np.full(model.param_dim, 1.1))
        probe = rng.standard_normal(model.state_dim)
        lam = model.apply_drho_h_transpose_inverse(probe)
        fields = [rng.standard_normal(block.shape) for block in lam]
        left = model.apply_drho_h_inverse(fields) @ probe
        right = sum(float(np.vdot(f, l)) for f, l in zip(fields, lam))
        assert abs(left - right) <= 1e-10 * max(abs(left), abs(right))

    def test_dtheta_pair_adjoint(self, wave_model, rng):
        model, _ = wave_model
        model.solve_forward(np.full(model.param_dim, 1.1))
        eta = rng.standard_normal(model.param_dim)
        fields = model.apply_dtheta_h(eta)
        lam = [rng.standard_normal(block.shape) for block in fields]
        left = sum(float(np.vdot(f, l)) for f, l in zip(fields, lam))
        right = eta @ model.apply_dtheta_h_transpose(lam)
        assert abs(left - right) <= 1e-12 * max(abs(left), 1.0)

    def test_gl_action_symmetry(self, wave_model, rng):
        from natgrad.metrics import MetricKind
        from natgrad.solver import build_metric_for_model

        model, _ = wave_model
        rho = model.solve_forward(np.full(model.param_dim, 1.1))
        metric = build_metric_for_model(model, MetricKind.parse("h1"))
        eta1 = rng.standard_normal(model.param_dim)
        eta2 = rng.standard_normal(model.param_dim)
        lhs = gl_action(model, metric, eta1) @ eta2
        rhs = eta1 @ gl_action(model, metric, eta2)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs))


class TestGradient:
    def test_adjoint_gradient_matches_finite_differences(self, wave_model, rng):
        model, _ = wave_model
        m0 = np.full(model.param_dim, 1.1)
        rho = model.solve_forward(m0)
        _, grad_rho = model.loss_and_grad_rho(rho)
        grad = gradient_adjoint(model, grad_rho)
        h = 1e-6
        for j in rng.choice(model.param_dim, size=4, replace=False):
            e = np.zeros(model.param_dim)
            e[j] = h
            f_plus = model.loss_and_grad_rho(model.solve_forward(m0 + e))[0]
            f_minus = model.loss_and_grad_rho(model.solve_forward(m0 - e))[0]
            fd = (f_plus - f_minus) / (2 * h)
            assert abs(fd - grad[j]) / max(abs(fd), 1e-12) < 1e-4

    def test_zero_residual_gives_zero_gradient(self, wave_model):
        model, m_true = wave_model
        rho = model.solve_forward(m_true)
        loss, grad_rho = model.loss_and_grad_rho(rho)
        assert loss <= 1e-20
        grad = gradient_adjoint(model, grad_rho)
        np.testing.assert_allclose(grad, np.zeros_like(grad), atol=1e-12)

    def test_born_matches_trace_finite_differences(self, wave_model):
        model, _ = wave_model
        m0 = np.full(model.param_dim, 1.1)
        model.solve_forward(m0)
        z = assemble_jacobian(model)
        h = 1e-6
        j = model.param_dim // 2
        e = np.zeros(model.param_dim)
        e[j] = h
        fd = (model.solve_forward(m0 + e) - model.solve_forward(m0 - e)) / (2 * h)
        rel = np.linalg.norm(z[:, j] - fd) / np.linalg.norm(fd)
        assert rel < 1e-6


class TestAccounting:
    def test_propagations_per_action(self):
        model, _ = make_wave_model(n_sources=2)
        model.propagation_counter = 0
        m0 = np.full(model.param_dim, 1.1)
        model.solve_forward(m0)
        assert model.propagation_counter == 2  # one per source
        model.apply_drho_h_transpose_inverse(np.zeros(model.state_dim))
        assert model.propagation_counter == 4
        fields = model.apply_dtheta_h(np.ones(model.param_dim))
        model.apply_drho_h_inverse(fields)
        assert model.propagation_counter == 6  # correlation itself is free

    def test_actions_require_cached_forward(self):
        model, _ = make_wave_model()
        with pytest.raises(RuntimeError):
            model.apply_dtheta_h(np.ones(model.param_dim))


class TestLayout:
    def test_receiver_major_panels(self, wave_model):
        model, m_true = wave_model
        data = model.solve_forward(m_true)
        panels = data.reshape(model.n_sources, model.n_receivers, model.n_t)
        assert panels.shape == (1, 8, 120)

    def test_duplicate_receivers_rejected(self):
        with pytest.raises(ValueError):
            WaveFwiModel(
                cells=(6, 6), spacing=(1.0, 1.0), n_t=10, dt=0.4,
                sources=[(3, 0)], receivers=[(0, 0), (0, 0)],
                wavelet=np.zeros(10),
            )
