import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tailadrf import _backend
from tailadrf.baselines import (
    local_quantile_fit,
    pickands_proxy,
    qr_avg_levels,
    qr_avg_shortfall,
    qr_quantile_curve,
    qr_xi_proxy,
    residual_pwm_return_level,
)
from tailadrf.dgp import DGPSpec, Sample, generate, structural_theta
from tailadrf.dml import crossfit_nuisances, default_grid, estimate_adrf
from tailadrf.errors import SingularDesignError
from tailadrf.functionals import GPD, tail_functionals
from tailadrf.pdhte import pdhte_curve
from tailadrf.threshold import build_tail_report, pwm_fit, return_level


def sample_from(T, Y):
    return Sample(X=np.zeros((T.shape[0], 1)), T=T, Y=Y)


def iid_tail(noise, n=20_000, seed=0):
    rng = np.random.default_rng(seed)
    T = rng.uniform(-2, 2, n)
    return sample_from(T, noise(rng, n))


def test_noiseless_line_any_tau():
    T = np.linspace(-2, 2, 400)
    s = sample_from(T, 1.0 + 0.5 * T)
    grid = np.array([-1.0, 0.0, 1.5])
    # the smoothed kink moves the minimizer by 2 delta |tau - 1/2| at most
    delta = 1e-4 * np.std(s.Y)
    for tau in (0.1, 0.5, 0.99):
        q = qr_quantile_curve(s, grid, tau).q_hat
        np.testing.assert_allclose(q, 1.0 + 0.5 * grid, atol=2 * delta * abs(tau - 0.5) + 1e-9)


def test_median_curve_clean():
    s = generate(DGPSpec("clean", 0.0, 4000, 0))
    grid = np.linspace(-1.8, 1.8, 25)
    q = qr_quantile_curve(s, grid, 0.5).q_hat
    assert np.mean(np.abs(q - structural_theta(grid))) < 0.2


def test_monotone_across_tau():
    s = generate(DGPSpec("sinusoidal_heavytail", 0.1, 3000, 1))
    grid = default_grid(s.T, 7)
    q90 = qr_quantile_curve(s, grid, 0.9).q_hat
    q99 = qr_quantile_curve(s, grid, 0.99).q_hat
    assert np.all(q90 <= q99 + 1e-4)


@given(st.integers(0, 2**32 - 1), st.floats(-100, 100), st.floats(0.05, 0.95))
def test_translation_equivariance(seed, c, tau):
    s = generate(DGPSpec("sinusoidal_pareto", 0.1, 400, seed))
    grid = np.array([-1.0, 0.5])
    a = qr_quantile_curve(s, grid, tau, h=0.5).q_hat
    b = qr_quantile_curve(Sample(s.X, s.T, s.Y + c), grid, tau, h=0.5).q_hat
    np.testing.assert_allclose(b, a + c, atol=1e-6 * (1 + abs(c)))


def test_qr_objective_decreases():
    s = generate(DGPSpec("sinusoidal_pareto", 0.1, 1000, 2))
    x = s.T - 0.3
    kw = np.exp(-0.5 * (x / 0.4) ** 2)
    *_, trace = _backend.pinball_irls(s.Y, x, kw, 0.95, 1e-4, 0.0, 0.0, 100, 1e-12)
    assert np.all(np.diff(trace) <= 1e-9 * np.abs(trace[:-1]))


@pytest.mark.parametrize("tau", [0.99, 0.9995])
def test_extreme_tau_matches_long_irls(tau):
    # oracle: the same smoothed-pinball IRLS run to convergence
    s = generate(DGPSpec("sinusoidal_heavytail", 0.1, 3000, 0))
    h = 0.4
    for t0 in (-1.0, 0.0, 1.0):
        x = s.T - t0
        kw = np.exp(-0.5 * (x / h) ** 2)
        a0 = np.quantile(s.Y, tau)
        ref, _, _, conv, _ = _backend.pinball_irls(s.Y, x, kw, tau, 1e-4 * np.std(s.Y), a0, 0.0,
                                                   200_000, 1e-13)
        assert conv
        got = local_quantile_fit(s.Y, s.T, t0, h, tau)
        assert abs(got - ref) < 1e-3 * np.std(s.Y)


def test_degenerate_band_and_tau():
    with pytest.raises(SingularDesignError):
        local_quantile_fit(np.arange(4.0), np.array([0.0, 0.0, 50.0, 50.0]), 0.0, 0.1, 0.5)
    with pytest.raises(ValueError):
        qr_quantile_curve(sample_from(np.arange(5.0), np.arange(5.0)), [1.0], 1.0)


def test_pickands_identities():
    # exact quantiles of exponential and Pareto(2) laws at 1-a, 1-2a, 1-4a
    a = 0.05
    qe = [-np.log(m * a) for m in (1, 2, 4)]
    qp = [(m * a) ** -0.5 for m in (1, 2, 4)]
    assert pickands_proxy(*qe) == pytest.approx(0.0, abs=1e-12)
    assert pickands_proxy(*qp) == pytest.approx(0.5, abs=1e-12)
    assert np.isnan(pickands_proxy(1.0, 1.0, 0.5))


@pytest.mark.parametrize("law,truth", [("expon", 0.0), ("pareto2", 0.5)])
def test_xi_proxy_on_iid_tails(law, truth):
    noise = {"expon": lambda r, n: r.exponential(size=n),
             "pareto2": lambda r, n: (1 - r.random(n)) ** -0.5}[law]
    s = iid_tail(noise)
    # the tail does not depend on T, so a wide kernel is unbiased and keeps
    # enough top observations per point for the identity to show
    xi = qr_xi_proxy(s, np.linspace(-1.5, 1.5, 5), h=1.0)
    assert np.all(np.abs(xi - truth) < 0.15)


def test_qr_avg_levels_and_m1():
    np.testing.assert_allclose(qr_avg_levels(0.01, 6), 1 - 0.01 * (np.arange(1, 7) - 0.5) / 6)
    s = generate(DGPSpec("clean", 0.0, 1500, 3))
    grid = np.array([-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(qr_avg_shortfall(s, grid, 0.05, M=1),
                                  qr_quantile_curve(s, grid, 1 - 0.025).q_hat)
    with pytest.raises(ValueError):
        qr_avg_shortfall(s, grid, 0.05, M=0)


def test_qr_avg_exponential_shortfall():
    s = iid_tail(lambda r, n: r.exponential(size=n), seed=4)
    grid = np.linspace(-1.5, 1.5, 5)
    alpha = 0.1
    q_true = -np.log(alpha)
    avg = qr_avg_shortfall(s, grid, alpha)
    np.testing.assert_allclose(avg, q_true + 1.0, rtol=0.15)
    assert np.all(avg >= qr_quantile_curve(s, grid, 1 - alpha).q_hat - 1e-4)


def test_rpwm_constant_weights_equal_return_level():
    rng = np.random.default_rng(0)
    r = rng.standard_t(3, 3000)
    u = 2.0
    a = np.abs(r)
    xi, sig = pwm_fit(a[a > u] - u)
    n_up = int((r > u).sum())
    out = residual_pwm_return_level(np.array([0.0]), r, np.zeros(3000), np.array([0.0]), 0.001, u, h=1.0)
    assert out.q_hat[0] == pytest.approx(return_level(u, xi, sig, n_up, 3000, 0.001), rel=1e-10)


def test_rpwm_matches_hybrid_on_homogeneous_tail():
    s = generate(DGPSpec("sinusoidal_pareto", 0.1, 5000, 6))
    grid = default_grid(s.T, 9)
    nf = crossfit_nuisances(s)
    core = estimate_adrf(s, grid, "welsch", nuisance=nf)
    r = nf.outcome_residuals(s) - (core.at(s.T) - np.mean(nf.g_hat))
    rep = build_tail_report(r)
    tf = tail_functionals(core, r, s.Y, s.T, pdhte_curve(s.Y, s.T, grid), rep, 0.001)
    rp = residual_pwm_return_level(core, r, s.T, grid, 0.001, rep.u_star)
    gpd = tf.q_mode == GPD
    assert gpd.any()
    # single deep-tail points carry 20-30% noise each; compare the curves' levels
    assert np.mean(rp.q_hat[gpd]) == pytest.approx(np.mean(tf.q_alpha[gpd]), rel=0.20)
