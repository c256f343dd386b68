import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from growthsde.models import (DomainError, ModelKind, ModelSpec, analytic_mean, diffusion,
                              diffusion_deriv, drift, from_linear, girsanov_shape,
                              gompertz_mean_limit, to_linear)
from growthsde.simulate import RngStream, TimeGrid, exact_ensemble

G = ModelSpec(ModelKind.GOMPERTZ, 0.6, 0.1)
V = ModelSpec(ModelKind.VON_BERTALANFFY, 0.6, 0.1, 1.0)
L = ModelSpec(ModelKind.LOGISTIC, 0.6, 0.1)

positive = st.floats(1e-3, 10.0)


def test_parse_accepts_variants():
    assert ModelKind.parse("Von-Bertalanffy") is ModelKind.VON_BERTALANFFY
    assert ModelKind.parse(" GOMPERTZ ") is ModelKind.GOMPERTZ
    with pytest.raises(ValueError):
        ModelKind.parse("richards")


@pytest.mark.parametrize("field", ["drift_param", "sigma", "l_infinity"])
@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_spec_rejects_nonpositive(field, bad):
    kw = dict(kind="gompertz", drift_param=0.6, sigma=0.1, l_infinity=1.0)
    kw[field] = bad
    with pytest.raises(DomainError):
        ModelSpec(**kw)


def test_drift_examples():
    assert drift(G, 1.0) == 0.0
    assert drift(V, 1.0) == 0.0
    assert drift(L, 0.5) == pytest.approx(0.15, abs=1e-15)


def test_diffusion_examples():
    assert diffusion(G, 0.5) == pytest.approx(0.05)
    assert diffusion(V, 1.0) == 0.0
    assert diffusion(L, 0.2) == pytest.approx(0.02)


def test_diffusion_deriv_examples():
    assert diffusion_deriv(G, 0.3) == 0.1
    assert diffusion_deriv(V, 0.3) == -0.1
    assert diffusion_deriv(L, 0.3) == 0.1
    assert np.all(diffusion_deriv(V, np.array([0.1, 0.2])) == -0.1)


@pytest.mark.parametrize("spec", [G, V, L])
def test_domain_errors_not_nan(spec):
    bad = 0.0 if spec.kind is not ModelKind.VON_BERTALANFFY else 1.5
    with pytest.raises(DomainError):
        drift(spec, bad)
    with pytest.raises(DomainError):
        diffusion(spec, math.nan)


@given(x=st.floats(0.01, 0.98), kind=st.sampled_from(list(ModelKind)))
def test_diffusion_deriv_matches_central_difference(x, kind):
    spec = ModelSpec(kind, 0.6, 0.1)
    h = 1e-5
    fd = (diffusion(spec, x + h) - diffusion(spec, x - h)) / (2 * h)
    assert fd == pytest.approx(diffusion_deriv(spec, x), rel=1e-8)


def test_linear_examples():
    assert to_linear(G, 1.0) == 0.0
    assert to_linear(V, 0.25) == 0.75
    assert from_linear(G, 0.0) == 1.0
    assert from_linear(V, 0.75) == 0.25
    assert from_linear(L, 0.3) == 0.3
    with pytest.raises(DomainError):
        from_linear(V, -0.1)
    with pytest.raises(DomainError):
        to_linear(G, 0.0)
    with pytest.raises(DomainError):
        to_linear(V, 1.2)


@given(kind=st.sampled_from(list(ModelKind)),
       xs=st.lists(st.floats(1e-6, 0.999999), min_size=1, max_size=50))
def test_linear_round_trip(kind, xs):
    spec = ModelSpec(kind, 0.6, 0.1)
    x = np.array(xs)
    np.testing.assert_allclose(from_linear(spec, to_linear(spec, x)), x, rtol=1e-12, atol=1e-15)


def test_analytic_mean_examples():
    assert analytic_mean(G, 0.0, 0.3) == pytest.approx(0.3, rel=1e-15)
    assert gompertz_mean_limit(G) == pytest.approx(0.995841, abs=1.5e-6)
    assert gompertz_mean_limit(G) == pytest.approx(math.exp(-0.01 / 2.4), rel=1e-14)
    assert analytic_mean(G, 200.0, 0.001) == pytest.approx(gompertz_mean_limit(G), rel=1e-12)
    assert abs(analytic_mean(V, 100.0, 0.001) - 1.0) <= 1e-15
    with pytest.raises(NotImplementedError):
        analytic_mean(L, 1.0, 0.5)


@given(b=positive, s=st.floats(1e-3, 1.0), x0=st.floats(1e-4, 2.0), t=st.floats(0, 20))
def test_gompertz_mean_is_lognormal_mean(b, s, x0, t):
    # independent route: E exp(Y) with Y Gaussian of the OU law
    m = math.log(x0) * math.exp(-b * t) - s * s / (2 * b) * (1 - math.exp(-b * t))
    v = s * s * (1 - math.exp(-2 * b * t)) / (2 * b)
    assert analytic_mean(ModelSpec("gompertz", b, s), t, x0) == pytest.approx(
        math.exp(m + v / 2), rel=1e-12)


def test_gompertz_mean_monte_carlo():
    grid = TimeGrid(0.0, 1.0, 10)
    paths = exact_ensemble(G, 0.05, grid, RngStream(1, 2), 100_000)
    term = np.array([p.values[-1] for p in paths])
    se = term.std(ddof=1) / math.sqrt(term.size)
    assert abs(term.mean() - analytic_mean(G, 1.0, 0.05)) < 3 * se


@given(kind=st.sampled_from(list(ModelKind)), x=st.floats(0.01, 0.99),
       alpha=positive, s=st.floats(0.01, 1.0))
def test_girsanov_shape_reproduces_coefficients(kind, x, alpha, s):
    spec = ModelSpec(kind, alpha, s)
    shape = girsanov_shape(kind)
    assert alpha * shape.f_eval(x) == pytest.approx(drift(spec, x), rel=1e-12, abs=1e-300)
    assert s * shape.g_eval(x) == pytest.approx(diffusion(spec, x), rel=1e-12)
