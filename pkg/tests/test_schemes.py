import logging

import numpy as np
import pytest
import scipy.sparse as sp

from app.services.fem import Coefficients, DiscreteOperator, build_operator, m_norm
from app.services.fracpow import PseudoParabolicConfig, PseudoParabolicSolver
from app.services.harness import fit_order
from app.services.schemes import (
    EXPLICIT,
    EXPLICIT3,
    ORACLE_EXACT,
    REGULARIZED2,
    REGULARIZED2_CONVECTION,
    REGULARIZED3,
    EvolutionProblem,
    SchemeConfig,
    inv_sqrt_norm,
    oracle_backward_euler_step,
    oracle_crank_nicolson_step,
    oracle_exact_state,
    run,
    startup_first_level,
    step_explicit,
    step_explicit3,
    step_regularized2,
    step_regularized2_convection,
    step_regularized3,
)
from app.utils.errors import ConfigError, SchemeRunError


def spectral_cfg(scheme, tau, n_steps=1, sigma=0.25):
    return SchemeConfig(scheme=scheme, tau=tau, n_steps=n_steps, sigma=sigma, sqrt_backend="spectral")


def mode_factor(mass, w, phi):
    """Coefficient of ``w`` along the M-normalized mode ``phi``."""
    return phi @ (mass @ w)


@pytest.fixture(scope="module")
def first_mode(oracle10):
    return oracle10.mode(0), float(oracle10.eigenvalues[0])


class TestSingleSteps:
    tau = 0.05

    def test_explicit(self, op10, spectral10, first_mode):
        phi, lam = first_mode
        w = step_explicit(op10, phi, np.zeros_like(phi), spectral_cfg(EXPLICIT, self.tau), spectral10)
        np.testing.assert_allclose(w, (1 - self.tau * np.sqrt(lam)) * phi, atol=1e-10)

    @pytest.mark.parametrize("backend", ["spectral", "pseudo"])
    def test_regularized2(self, op10, spectral10, first_mode, backend):
        phi, lam = first_mode
        cfg = spectral_cfg(REGULARIZED2, self.tau)
        frac = spectral10 if backend == "spectral" else PseudoParabolicSolver(op10, PseudoParabolicConfig(K=100))
        b = 1 + cfg.sigma * self.tau * (1 + lam)
        expected = 1 - self.tau * np.sqrt(lam) / b
        w = step_regularized2(op10, phi, np.zeros_like(phi), cfg, frac)
        tolerance = 1e-9 if backend == "spectral" else 1e-3
        assert mode_factor(op10.mass, w, phi) == pytest.approx(expected, abs=tolerance)

    def test_regularized3(self, op10, spectral10, first_mode):
        phi, lam = first_mode
        cfg = spectral_cfg(REGULARIZED3, self.tau)
        w = step_regularized3(op10, phi, 0.5 * phi, np.zeros_like(phi), cfg, spectral10)
        increment = -self.tau * np.sqrt(lam) * 1.25 / (1 + cfg.sigma * self.tau**2 * lam)
        np.testing.assert_allclose(w, (1 + increment) * phi, atol=1e-9)

    def test_explicit3(self, op10, spectral10, first_mode):
        phi, lam = first_mode
        w = step_explicit3(op10, phi, 0.5 * phi, np.zeros_like(phi), spectral_cfg(EXPLICIT3, self.tau), spectral10)
        np.testing.assert_allclose(w, (1 - 1.25 * self.tau * np.sqrt(lam)) * phi, atol=1e-10)

    def test_startup(self, op10, spectral10, first_mode):
        phi, lam = first_mode
        x = self.tau * np.sqrt(lam)
        w = startup_first_level(op10, phi, np.zeros_like(phi), spectral_cfg(REGULARIZED3, self.tau), spectral10)
        np.testing.assert_allclose(w, (1 - x + 0.5 * x * x) * phi, atol=1e-9)

    def test_source_enters_each_step(self, op10, spectral10, rng):
        psi = rng.standard_normal(op10.size)
        w0 = np.zeros(op10.size)
        cfg = spectral_cfg(EXPLICIT, self.tau)
        np.testing.assert_allclose(step_explicit(op10, w0, psi, cfg, spectral10), self.tau * psi)


def test_zero_time_step_keeps_state(op10, spectral10, rng):
    w = rng.standard_normal(op10.size)
    zero = np.zeros_like(w)
    cfg = spectral_cfg(REGULARIZED2, 0.0, n_steps=0)
    np.testing.assert_allclose(step_explicit(op10, w, zero, cfg, spectral10), w)
    np.testing.assert_allclose(step_regularized2(op10, w, zero, cfg, spectral10), w, atol=1e-9)
    np.testing.assert_allclose(step_regularized3(op10, w, w, zero, cfg, spectral10), w, atol=1e-12)
    np.testing.assert_allclose(startup_first_level(op10, w, zero, cfg, spectral10), w)


def test_startup_local_error_is_third_order(op10, spectral10, oracle10, first_mode):
    phi, _ = first_mode

    def local_error(tau):
        w1 = startup_first_level(op10, phi, np.zeros_like(phi), spectral_cfg(REGULARIZED3, tau), spectral10)
        return m_norm(op10.mass, w1 - oracle_exact_state(oracle10, phi, tau))

    assert 6.0 <= local_error(0.1) / local_error(0.05) <= 10.0


def test_oracle_backward_euler(op10, oracle10, spectral10, first_mode, rng):
    phi, lam = first_mode
    zero = np.zeros_like(phi)
    np.testing.assert_allclose(oracle_backward_euler_step(oracle10, phi, zero, 0.1), phi / (1 + 0.1 * np.sqrt(lam)), atol=1e-10)

    psi = rng.standard_normal(op10.size)
    w0 = rng.standard_normal(op10.size)
    limit = oracle_backward_euler_step(oracle10, w0, psi, 1e12)
    np.testing.assert_allclose(limit, spectral10.inv_sqrt(psi), rtol=1e-6, atol=1e-9)

    tau = 0.01
    w1 = oracle_backward_euler_step(oracle10, w0, psi, tau)
    assert m_norm(op10.mass, w1) <= m_norm(op10.mass, w0) + tau * m_norm(op10.mass, psi)


def test_oracle_crank_nicolson_factor(oracle10, first_mode):
    phi, lam = first_mode
    x = 0.1 * np.sqrt(lam)
    w = oracle_crank_nicolson_step(oracle10, phi, np.zeros_like(phi), 0.1)
    np.testing.assert_allclose(w, (1 - x / 2) / (1 + x / 2) * phi, atol=1e-10)


def test_oracle_exact_run_matches_semi_discrete_solution(op10, oracle10, rng):
    w0 = rng.standard_normal(op10.size)
    trajectory = run(EvolutionProblem(op10, w0, oracle=oracle10), spectral_cfg(ORACLE_EXACT, 0.02, n_steps=50))
    expected = oracle_exact_state(oracle10, w0, 1.0)
    np.testing.assert_allclose(trajectory.final, expected, atol=1e-9 * np.abs(w0).max())
    assert np.all(np.diff(trajectory.m_norms()) <= 1e-12)


def test_zero_steps_returns_initial_state(op10, oracle10, rng):
    w0 = rng.standard_normal(op10.size)
    trajectory = run(EvolutionProblem(op10, w0, oracle=oracle10), spectral_cfg(REGULARIZED2, 0.0, n_steps=0))
    assert len(trajectory) == 1
    assert trajectory.times == [0.0]
    np.testing.assert_array_equal(trajectory.final, w0)


@pytest.mark.parametrize("tau", [0.01, 0.1, 1.0, 10.0])
def test_regularized_energy_never_grows(op10, oracle10, tau):
    for seed in range(5):
        w0 = np.random.default_rng(seed).standard_normal(op10.size)
        trajectory = run(EvolutionProblem(op10, w0, oracle=oracle10), spectral_cfg(REGULARIZED2, tau, n_steps=100))
        g = trajectory.g_norms()
        assert np.all(np.diff(g) <= 1e-8 * g[0])


def test_explicit_scheme_blows_up_for_large_steps(op10, oracle10, rng):
    w0 = rng.standard_normal(op10.size)
    tau = 4.0 / np.sqrt(oracle10.lambda_max)
    trajectory = run(EvolutionProblem(op10, w0, oracle=oracle10), spectral_cfg(EXPLICIT, tau, n_steps=10))
    assert trajectory.m_norms()[-1] >= 10 * trajectory.m_norms()[0]


def test_energy_estimate_with_source(op10, oracle10, spectral10):
    tau, n_steps = 0.05, 40
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        w0 = rng.standard_normal(op10.size)
        sources = rng.standard_normal((n_steps + 1, op10.size))

        def source(t, sources=sources):
            return sources[int(round(t / tau))]

        cfg = spectral_cfg(REGULARIZED2, tau, n_steps=n_steps)
        trajectory = run(EvolutionProblem(op10, w0, source=source, oracle=oracle10), cfg)
        g2 = trajectory.g_norms() ** 2
        forcing = np.cumsum([0.5 * tau * inv_sqrt_norm(op10, sources[k], spectral10) ** 2 for k in range(1, n_steps + 1)])
        bound = g2[0] + forcing
        assert np.all(g2[1:] <= bound * (1 + 1e-6))


def test_explicit_three_level_stability_threshold(op10, oracle10, rng):
    w0 = rng.standard_normal(op10.size)
    root_max = np.sqrt(oracle10.lambda_max)
    problem = EvolutionProblem(op10, w0, oracle=oracle10)

    stable = run(problem, spectral_cfg(EXPLICIT3, 0.9 / root_max, n_steps=200))
    assert stable.m_norms().max() <= 2 * stable.m_norms()[0]

    unstable = run(problem, spectral_cfg(EXPLICIT3, 1.5 / root_max, n_steps=50))
    assert unstable.m_norms()[-1] >= 10 * unstable.m_norms()[0]


@pytest.mark.parametrize("tau", [0.01, 0.1, 1.0])
def test_regularized_three_level_is_bounded(op10, oracle10, rng, tau):
    w0 = rng.standard_normal(op10.size)
    trajectory = run(EvolutionProblem(op10, w0, oracle=oracle10), spectral_cfg(REGULARIZED3, tau, n_steps=1000))
    norms = trajectory.m_norms()
    assert norms.max() <= 5 * (norms[0] + norms[1])


@pytest.mark.parametrize("scheme, low, high", [(REGULARIZED2, 0.75, 1.25), (REGULARIZED3, 1.75, 2.25)])
def test_temporal_order(op10, oracle10, scheme, low, high):
    w0 = oracle10.mode(0) + 0.5 * oracle10.mode(1)
    expected = oracle_exact_state(oracle10, w0, 1.0)
    ns = [25, 50, 100, 200]
    errors = []
    for n in ns:
        cfg = spectral_cfg(scheme, 1.0 / n, n_steps=n)
        trajectory = run(EvolutionProblem(op10, w0, oracle=oracle10), cfg)
        errors.append(m_norm(op10.mass, trajectory.final - expected))
    assert low <= fit_order(ns, errors) <= high


def test_convection_step_without_velocity_matches_regularized(op10, spectral10, rng):
    w = rng.standard_normal(op10.size)
    psi = rng.standard_normal(op10.size)
    cfg = spectral_cfg(REGULARIZED2_CONVECTION, 0.05)
    zero_c = DiscreteOperator(op10.mass, op10.stiffness, sp.csr_matrix(op10.stiffness.shape), op10.delta)
    plain = step_regularized2(op10, w, psi, cfg, spectral10)
    np.testing.assert_allclose(step_regularized2_convection(zero_c, w, psi, cfg, spectral10), plain, atol=1e-8)
    np.testing.assert_allclose(step_regularized2_convection(op10, w, psi, cfg, spectral10), plain, atol=1e-8)


def test_convection_keeps_energy_non_increasing(mesh1, oracle10, rng):
    op = build_operator(mesh1, Coefficients.robin_arc(10.0, velocity="bubble_rotation:5"))
    w0 = rng.standard_normal(op.size)
    cfg = spectral_cfg(REGULARIZED2_CONVECTION, 0.05, n_steps=100)
    trajectory = run(EvolutionProblem(op, w0, oracle=oracle10), cfg)
    g = trajectory.g_norms()
    assert np.all(np.diff(g) <= 1e-8 * g[0])
    assert trajectory.total_cg_iterations() > 0


def test_diagnostics_count_work(op10, rng):
    w0 = rng.standard_normal(op10.size)
    cfg = SchemeConfig(scheme=REGULARIZED2, tau=0.01, n_steps=3, frac=PseudoParabolicConfig(K=10))
    trajectory = run(EvolutionProblem(op10, w0), cfg)
    assert len(trajectory) == 4
    assert trajectory.times == pytest.approx([0.0, 0.01, 0.02, 0.03])
    assert trajectory.total_cg_iterations() > 0
    assert trajectory.total_pseudo_iterations() > 0
    assert np.isnan(trajectory.g_norms()).all()


def test_failed_step_keeps_computed_levels(op10, oracle10, rng):
    tau = 0.01

    def source(t):
        value = np.zeros(op10.size)
        return value + np.nan if t > 2.5 * tau else value

    problem = EvolutionProblem(op10, rng.standard_normal(op10.size), source=source, oracle=oracle10)
    with pytest.raises(SchemeRunError) as info:
        run(problem, spectral_cfg(REGULARIZED2, tau, n_steps=10))
    assert "step 3 of 10" in str(info.value)
    assert len(info.value.trajectory) == 3


def test_oracle_scheme_needs_oracle(op10, rng):
    with pytest.raises(ConfigError):
        run(EvolutionProblem(op10, rng.standard_normal(op10.size)), SchemeConfig(scheme=ORACLE_EXACT, tau=0.1, n_steps=1))


def test_initial_state_shape_is_checked(op10):
    with pytest.raises(ConfigError):
        EvolutionProblem(op10, np.zeros(op10.size + 1))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(scheme="leapfrog"),
        dict(sqrt_backend="chebyshev"),
        dict(tau=-0.1),
        dict(tau=float("inf")),
        dict(n_steps=-1),
        dict(n_steps=2.5),
        dict(sigma=-1.0),
        dict(tol=0.0),
    ],
)
def test_scheme_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SchemeConfig(**kwargs)


def test_small_sigma_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="app.services.schemes"):
        SchemeConfig(scheme=REGULARIZED2, sigma=0.1)
    assert "not unconditionally stable" in caplog.text


def test_over_interval():
    cfg = SchemeConfig.over_interval(0.25, 100, scheme=EXPLICIT)
    assert cfg.tau == pytest.approx(0.0025)
    assert cfg.t_final == pytest.approx(0.25)
    assert SchemeConfig.over_interval(0.0, 0).tau == 0.0
    with pytest.raises(ConfigError):
        SchemeConfig.over_interval(-1.0, 10)
