import math

import numpy as np
import pytest
from scipy import stats

from carbon_trace_simulator.stochastic_models import (
    BetaParams,
    MarginalCeiParams,
    NormalParams,
    RngStream,
    WeibullParams,
    WindTurbineParams,
    base_load_sample,
    der_factor_quantile,
    ev_demand_sample,
    expected_wind_power,
    marginal_cei,
    truncated_normal_quantile,
    weibull_quantile,
    weibull_sample,
    wind_power,
    wind_power_curve,
)

TURBINE = WindTurbineParams(p_rate=2.0, v_in=3.0, v_rate=12.0, v_out=25.0)


def test_weibull_quantile_at_zero():
    assert weibull_quantile(0.0, 8.0, 2.0) == 0.0


def test_weibull_quantile_at_scale():
    u = 1.0 - math.exp(-1.0)
    assert weibull_quantile(u, 8.0, 2.0) == pytest.approx(8.0, rel=1e-12)


def test_weibull_quantile_median():
    assert weibull_quantile(0.5, 8.0, 2.0) == pytest.approx(8.0 * math.sqrt(math.log(2.0)), rel=1e-12)


@pytest.mark.parametrize(
    "speed, expected",
    [(0.0, 0.0), (2.9, 0.0), (7.5, 1.0), (12.0, 2.0), (20.0, 2.0), (25.0, 2.0), (25.1, 0.0)],
)
def test_wind_power_curve(speed, expected):
    assert wind_power(speed, TURBINE) == pytest.approx(expected)


def test_wind_power_curve_vectorised():
    out = wind_power_curve(np.array([0.0, 7.5, 30.0]), 2.0, 3.0, 12.0, 25.0)
    assert out.tolist() == pytest.approx([0.0, 1.0, 0.0])


def test_expected_wind_power_matches_sampling():
    wind = WeibullParams(8.0, 2.0)
    u = RngStream(11, 0).uniform(200_000)
    sampled = wind_power_curve(weibull_quantile(u, wind.lam, wind.k), 2.0, 3.0, 12.0, 25.0).mean()
    assert expected_wind_power(TURBINE, wind) == pytest.approx(sampled, rel=2e-2)


def test_expected_wind_power_zero_rating():
    t = WindTurbineParams(0.0, 3.0, 12.0, 25.0)
    assert expected_wind_power(t, WeibullParams(8.0, 2.0)) == 0.0


def test_base_load_without_spread_is_exact():
    assert base_load_sample(NormalParams(42.5, 0.0), RngStream(0, 0)) == 42.5


def test_base_load_moments():
    u = RngStream(1, 0).uniform((2, 1_000_000))
    draws = truncated_normal_quantile(u[0], u[1], 100.0, 10.0)
    assert draws.mean() == pytest.approx(100.0, rel=1e-3)
    assert draws.std() == pytest.approx(10.0, rel=5e-3)


def test_base_load_is_truncated_at_zero():
    draws = [base_load_sample(NormalParams(0.0, 1.0), RngStream(5, i)) for i in range(2000)]
    assert min(draws) >= 0.0


def test_ev_demand_zero_uniform():
    assert weibull_quantile(0.0, 2.0, 1.0) == 0.0


def test_ev_demand_exponential_mean():
    u = RngStream(2, 0).uniform(1_000_000)
    assert weibull_quantile(u, 2.0, 1.0).mean() == pytest.approx(2.0, rel=1e-2)


def test_ev_demand_shares_the_weibull_transform():
    p = WeibullParams(3.0, 1.5)
    assert ev_demand_sample(p, RngStream(3, 7)) == weibull_sample(p, RngStream(3, 7))


@pytest.mark.parametrize("lam, k", [(8.0, 2.0), (6.0, 1.5), (10.0, 3.0)])
def test_weibull_fidelity(lam, k):
    n = 100_000
    draws = weibull_quantile(RngStream(4, int(lam * 10)).uniform(n), lam, k)
    assert draws.mean() == pytest.approx(WeibullParams(lam, k).mean(), rel=1e-2)
    ks = stats.kstest(draws, "weibull_min", args=(k, 0.0, lam))
    assert ks.statistic < 1.63 / math.sqrt(n)


def test_rng_stream_is_reproducible():
    a = RngStream(7, 3).uniform(5)
    b = RngStream(7, 3).uniform(5)
    c = RngStream(7, 4).uniform(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_der_factor_median_of_symmetric_beta():
    assert der_factor_quantile(0.5, 2.0, 2.0) == pytest.approx(0.5)
    assert BetaParams(2.0, 6.0).mean() == pytest.approx(0.25)


def test_marginal_cei_constant_segments():
    p = MarginalCeiParams(0.9, 0.0, 0.9, 0.0, 100.0, 200.0)
    for output in (0.0, 50.0, 100.0, 150.0, 200.0):
        assert marginal_cei(output, p) == pytest.approx(0.9)


def test_marginal_cei_intercept():
    p = MarginalCeiParams(0.95, 0.0005, 0.78, 0.0004, 200.0, 300.0)
    assert marginal_cei(1e-9, p) == pytest.approx(0.95)


def test_marginal_cei_design_point_uses_lower_segment():
    p = MarginalCeiParams(0.95, 0.0005, 0.78, 0.0004, 200.0, 300.0)
    assert marginal_cei(200.0, p) == pytest.approx(0.85)
    assert p.design_intensity() == pytest.approx(0.85)
    assert marginal_cei(250.0, p) == pytest.approx(0.78 + 0.0004 * 250.0)


@pytest.mark.parametrize("output", [-1.0, 300.1])
def test_marginal_cei_out_of_range(output):
    p = MarginalCeiParams(0.95, 0.0005, 0.78, 0.0004, 200.0, 300.0)
    with pytest.raises(ValueError):
        marginal_cei(output, p)
