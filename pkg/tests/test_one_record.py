import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from growthsde.models import ModelKind, ModelSpec
from growthsde.one_record import (CrossSection, TruncNormalParams, build_composite_path,
                                  one_record_study, sample_trunc_normal)
from growthsde.simulate import RngStream, TimeGrid

G = ModelSpec(ModelKind.GOMPERTZ, 0.6, 0.1)


def test_effectively_untruncated_mean():
    x = sample_trunc_normal(TruncNormalParams(-1e10, 2.0, 0.25), RngStream(1), size=100_000)
    assert abs(x.mean() - 2.0) < 3 * 0.5 / math.sqrt(x.size)


def test_half_normal_support_and_mean():
    x = sample_trunc_normal(TruncNormalParams(1.0, 1.0, 4.0), RngStream(2), size=1_000_000)
    assert np.all(x > 1.0)
    half_sd = 2.0 * math.sqrt(1 - 2 / math.pi)
    assert abs(x.mean() - (1.0 + 2.0 * math.sqrt(2 / math.pi))) < 3 * half_sd / math.sqrt(x.size)


@pytest.mark.parametrize("lower,mean,var", [(0.0, 1.0, 1.0), (2.0, 0.0, 1.0), (7.0, 0.0, 1.0),
                                            (-0.3, 0.1, 0.01)])
def test_matches_scipy_truncnorm(lower, mean, var):
    sd = math.sqrt(var)
    x = sample_trunc_normal(TruncNormalParams(lower, mean, var), RngStream(3), size=20_000)
    ref = stats.truncnorm((lower - mean) / sd, np.inf, loc=mean, scale=sd)
    assert stats.kstest(x, ref.cdf).pvalue > 0.001


def test_scalar_draw_and_errors():
    assert isinstance(sample_trunc_normal(TruncNormalParams(0.0, 0.0, 1.0), RngStream(4)), float)
    with pytest.raises(ValueError):
        TruncNormalParams(0.0, 0.0, 0.0)
    with pytest.raises(ArithmeticError):
        sample_trunc_normal(TruncNormalParams(10.0, 0.0, 1.0), RngStream(4))


def test_cross_section_validation():
    with pytest.raises(ValueError):
        CrossSection([0.0, 1.0], [np.array([0.1, 0.2])])
    with pytest.raises(ValueError):
        CrossSection([0.0, 1.0], [np.array([0.1, 0.2]), np.array([0.3])])
    with pytest.raises(ValueError):
        CrossSection([1.0, 0.0], [np.array([0.1, 0.2])] * 2)
    with pytest.raises(ValueError):
        CrossSection([0.0, 1.0], [np.array([0.1, np.nan])] * 2)
    cs = CrossSection([0.0, 1.0], [[0.1, 0.2, 0.3], [0.4, 0.5]])
    assert list(cs.sizes) == [3, 2]


def test_identical_individuals_give_the_common_path():
    common = np.linspace(0.01, 0.9, 21)
    cs = CrossSection.from_matrix(np.arange(21.0), np.tile(common, (5, 1)))
    path = build_composite_path(cs, RngStream(5))
    assert np.array_equal(path.values, common) and path.fallback_count == 0


@given(seed=st.integers(0, 10_000), m=st.integers(2, 12), n=st.integers(1, 15),
       policy=st.sampled_from(["max", "restart"]))
def test_composite_values_come_from_columns(seed, m, n, policy):
    gen = np.random.default_rng(seed)
    matrix = np.sort(gen.uniform(0.01, 0.99, (m, n + 1)), axis=1)
    cs = CrossSection.from_matrix(np.arange(n + 1.0), matrix)
    path = build_composite_path(cs, RngStream(seed), policy)
    for k in range(n + 1):
        assert path.values[k] in matrix[:, k]
    assert 0 <= path.fallback_count <= n


def test_fallback_policies():
    # the second column sits far below the first, so no candidate ever qualifies
    cs = CrossSection([0.0, 1.0], [np.array([0.90, 0.91, 0.92]), np.array([0.1, 0.2, 0.3])])
    p = build_composite_path(cs, RngStream(6), "max")
    assert p.values[1] == 0.3 and p.fallback_count == 1
    p = build_composite_path(cs, RngStream(6), "restart")
    assert p.values[1] in (0.1, 0.2, 0.3) and p.fallback_count == 1
    with pytest.raises(ValueError):
        build_composite_path(cs, RngStream(6), "nearest")


def test_composite_is_reproducible():
    gen = np.random.default_rng(7)
    cs = CrossSection.from_matrix(np.arange(11.0), np.sort(gen.random((20, 11)), axis=1))
    a = build_composite_path(cs, RngStream(8))
    b = build_composite_path(cs, RngStream(8))
    assert np.array_equal(a.values, b.values)


def test_cross_section_csv_round_trip(tmp_path):
    cs = CrossSection([0.0, 0.5, 1.0], [[0.1, 0.2], [0.3, 0.25, 0.4], [0.5, 0.6]])
    cs.write_csv(tmp_path / "cs.csv")
    back = CrossSection.read_csv(tmp_path / "cs.csv")
    assert np.array_equal(back.times, cs.times)
    for a, b in zip(back.columns, cs.columns):
        assert np.array_equal(a, b)
    (tmp_path / "bad.csv").write_text("t,x\n")
    with pytest.raises(ValueError):
        CrossSection.read_csv(tmp_path / "bad.csv")


def test_study_shapes_and_reproducibility():
    grid = TimeGrid(0.0, 10.0, 1000)
    path, cs = one_record_study(G, 20, grid, 1.0, 100.0, 10, RngStream(9),
                                return_cross_section=True)
    assert path.values.size == 101 and path.kind is ModelKind.GOMPERTZ
    assert cs.sizes.tolist() == [20] * 101
    again = one_record_study(G, 20, grid, 1.0, 100.0, 10, RngStream(9))
    assert np.array_equal(path.values, again.values)
    for k in range(101):
        assert path.values[k] in cs.columns[k]
    with pytest.raises(ValueError):
        one_record_study(G, 1, grid, 1.0, 100.0, 10, RngStream(9))
    with pytest.raises(ValueError):
        one_record_study(G, 20, grid, 1.0, 100.0, 7, RngStream(9))


def test_vonbert_initials_scale_with_asymptote():
    spec = ModelSpec(ModelKind.VON_BERTALANFFY, 0.6, 0.1, 50.0)
    _, cs = one_record_study(spec, 30, TimeGrid(0.0, 1.0, 100), 2.0, 2.0, 10, RngStream(10),
                             return_cross_section=True)
    assert np.all(cs.columns[0] < 50.0) and cs.columns[0].mean() > 5.0


def _study_composite(kind, seed):
    spec = ModelSpec(kind, 0.6, 0.1)
    return one_record_study(spec, 100, TimeGrid(0.0, 10.0, 10_000), 1.0, 100.0, 10,
                            RngStream(60, seed))


def test_study_settings_give_1001_points():
    assert _study_composite(ModelKind.GOMPERTZ, 0).values.size == 1001


@pytest.mark.slow
def test_vonbert_composite_mostly_non_decreasing():
    up = steps = 0
    for seed in range(100):
        d = np.diff(_study_composite(ModelKind.VON_BERTALANFFY, seed).values)
        up += int(np.sum(d >= 0))
        steps += d.size
    assert up / steps >= 0.95


@pytest.mark.slow
@pytest.mark.parametrize("kind", list(ModelKind))
def test_fallback_rarely_needed(kind):
    clean = sum(_study_composite(kind, seed).fallback_count == 0 for seed in range(20))
    assert clean >= 0.95 * 20


@pytest.mark.slow
def test_gompertz_composite_em_lands_near_truth():
    from growthsde.em import EmConfig, em_gompertz
    trace = em_gompertz(_study_composite(ModelKind.GOMPERTZ, 0),
                        EmConfig(50, 25, 0.001, theta0=(0.5, 0.2)), RngStream(61))
    assert 0.5 <= trace.drift_ml <= 0.7 and 0.05 <= trace.sigma_ml <= 0.15
