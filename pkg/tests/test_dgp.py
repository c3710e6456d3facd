import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tailadrf.dgp import (
    DGP_NAMES,
    HEAVY_DGPS,
    PANEL_DGPS,
    DGPSpec,
    Sample,
    covariate_effect,
    generate,
    oracle_curves,
    regime_label,
    structural_theta,
    truth_regime,
    xi_true,
)


def test_structural_theta_values():
    assert structural_theta(0.0) == 0.0
    assert structural_theta(1.0) == pytest.approx(1.5)
    assert structural_theta(-1.0) == pytest.approx(-1.5)


def test_eleven_dgps():
    assert len(PANEL_DGPS) == 10 and "confounded" in DGP_NAMES and len(HEAVY_DGPS) == 6


def test_spec_validation():
    with pytest.raises(ValueError):
        DGPSpec("nope")
    with pytest.raises(ValueError):
        DGPSpec("clean", contamination_p=1.5)
    with pytest.raises(ValueError):
        Sample(X=np.zeros((3, 2)), T=np.zeros(3), Y=np.array([0.0, np.nan, 1.0]))


@given(st.sampled_from(DGP_NAMES), st.sampled_from([0.0, 0.05, 0.1, 0.2]), st.integers(0, 2**63))
def test_generate_deterministic(name, p, seed):
    a = generate(DGPSpec(name, p, 200, seed))
    b = generate(DGPSpec(name, p, 200, seed))
    assert np.array_equal(a.X, b.X) and np.array_equal(a.T, b.T) and np.array_equal(a.Y, b.Y)


def test_clean_noise_unit_sd():
    s = generate(DGPSpec("clean", 0.0, 50_000, 1))
    eps = s.Y - structural_theta(s.T) - covariate_effect(s.X)
    assert np.std(eps) == pytest.approx(1.0, abs=0.02)


def test_confounded_correlation():
    s = generate(DGPSpec("confounded", 0.1, 6000, 2))
    assert np.corrcoef(s.T, s.X[:, 0])[0, 1] > 0.3


def test_panel_treatment_independent_of_covariates():
    s = generate(DGPSpec("sinusoidal_pareto", 0.1, 50_000, 3))
    for j in range(s.X.shape[1]):
        assert abs(np.corrcoef(s.T, s.X[:, j])[0, 1]) < 0.05


def test_pareto_contamination_hill():
    s = generate(DGPSpec("sinusoidal_pareto", 1.0, 1_000_000, 4))
    a = np.sort(np.abs(s.Y - structural_theta(s.T) - covariate_effect(s.X)))
    k = 100_000
    hill = np.mean(np.log(a[-k:] / a[-k - 1]))
    assert hill == pytest.approx(2.0 / 3.0, abs=0.1)


def test_oracle_clean_matches_structural():
    grid = np.linspace(-1.5, 1.5, 5)
    o = oracle_curves(DGPSpec("clean", 0.0, 100, 0), grid, 0.01, n_oracle=40_000)
    # sd of Y(t) is sqrt(1 + 0.25); allow five standard errors
    assert np.max(np.abs(o.theta - structural_theta(grid))) < 5 * np.sqrt(1.25 / 40_000)
    assert np.all(o.q_alpha >= o.theta) and np.all(o.s_alpha >= o.q_alpha)


def test_oracle_rejects_alpha_half():
    with pytest.raises(ValueError):
        oracle_curves(DGPSpec("clean"), np.zeros(1), 0.5)


def test_two_paretos_truth():
    xi = xi_true("sinusoidal_two_paretos", 0.1, np.array([-1.0, 1.0]))
    assert xi[0] == pytest.approx(0.667, abs=1e-3) and xi[1] == pytest.approx(0.333, abs=1e-3)


def test_regime_labels():
    assert regime_label(0.5) == "frechet" and regime_label(0.0) == "gumbel"
    assert regime_label(-1.0) == "weibull" and regime_label(np.nan) == "refused"
    grid = np.linspace(-2, 2, 25)
    for name in HEAVY_DGPS:
        assert truth_regime(name, 0.1, grid) == "frechet"
    assert truth_regime("sinusoidal_pareto", 0.0, grid) == "gumbel"
