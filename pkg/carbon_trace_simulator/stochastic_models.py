"""
Probability models of the stochastic inputs and the output-dependent
carbon intensity of conventional units.

Every sampler is an inverse-CDF transform of uniforms drawn from an
RngStream, so a fixed (seed, stream index) pair always yields the same
values. The vectorised `*_quantile` helpers are what the Monte Carlo
engine uses; the scalar `*_sample` functions wrap them for single draws.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special


@dataclass(frozen=True)
class WeibullParams:
    """Weibull distribution; `lam` is the scale (m/s or MW), `k` the shape."""

    lam: float
    k: float

    def mean(self) -> float:
        return self.lam * math.gamma(1.0 + 1.0 / self.k)

    def cdf(self, x: float) -> float:
        if x < 0:
            return 0.0
        return 1.0 - math.exp(-((x / self.lam) ** self.k))


@dataclass(frozen=True)
class WindTurbineParams:
    p_rate: float
    v_in: float
    v_rate: float
    v_out: float


@dataclass(frozen=True)
class NormalParams:
    mu: float
    sigma: float


@dataclass(frozen=True)
class MarginalCeiParams:
    """Piecewise-linear intensity curve of a conventional unit (tCO2/MWh)."""

    a_down: float
    b_down: float
    a_over: float
    b_over: float
    p_rate: float
    p_lim: float

    def design_intensity(self) -> float:
        """Intensity at the design-optimal output, used as the average factor."""
        return marginal_cei(self.p_rate, self)


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


class RngStream:
    """
    Uniform stream for one scenario, derived from (seed, index).

    The stream is rebuilt from its two integers on demand, so it can be
    recreated in any worker process and yields the same sequence there.
    """

    def __init__(self, seed: int, index: int):
        self.seed = int(seed)
        self.index = int(index)
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.index,))
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    def uniform(self, size=None):
        return self._generator.random(size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, index={self.index})"


def weibull_quantile(u, lam, k):
    """x = lam * (-ln(1 - u))^(1/k); works on scalars and arrays."""
    return lam * np.power(-np.log1p(-np.asarray(u, dtype=float)), 1.0 / np.asarray(k))


def weibull_sample(p: WeibullParams, rng: RngStream) -> float:
    return float(weibull_quantile(rng.uniform(), p.lam, p.k))


def ev_demand_sample(p: WeibullParams, rng: RngStream) -> float:
    """Aggregate charging power of one station (MW); same transform as wind speed."""
    return weibull_sample(p, rng)


def wind_power_curve(x, p_rate, v_in, v_rate, v_out):
    """Vectorised turbine curve: ramp on [v_in, v_rate], flat up to v_out, 0 outside."""
    x = np.asarray(x, dtype=float)
    ramp = p_rate * (x - v_in) / (v_rate - v_in)
    return np.where(
        x < v_in,
        0.0,
        np.where(x < v_rate, ramp, np.where(x <= v_out, p_rate, 0.0)),
    )


def wind_power(x: float, t: WindTurbineParams) -> float:
    return float(wind_power_curve(x, t.p_rate, t.v_in, t.v_rate, t.v_out))


def expected_wind_power(t: WindTurbineParams, wind: WeibullParams) -> float:
    """Mean turbine output (MW) under a Weibull wind-speed distribution."""
    if t.p_rate == 0:
        return 0.0

    def ramp_density(v):
        pdf = (wind.k / wind.lam) * (v / wind.lam) ** (wind.k - 1) * math.exp(
            -((v / wind.lam) ** wind.k)
        )
        return wind_power(v, t) * pdf

    ramp_part, _ = integrate.quad(ramp_density, t.v_in, t.v_rate)
    flat_part = t.p_rate * (wind.cdf(t.v_out) - wind.cdf(t.v_rate))
    return ramp_part + flat_part


def normal_quantile(u, mu, sigma):
    """Normal inverse CDF; sigma == 0 returns mu exactly."""
    u = np.asarray(u, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    with np.errstate(invalid="ignore"):
        spread = np.where(sigma > 0, sigma * special.ndtri(u), 0.0)
    return mu + spread


def truncated_normal_quantile(u_first, u_retry, mu, sigma):
    """
    Normal draw truncated below at 0: a negative first draw is replaced by
    the retry draw, and a negative retry is clamped to 0.
    """
    first = normal_quantile(u_first, mu, sigma)
    retry = normal_quantile(u_retry, mu, sigma)
    value = np.where(first >= 0, first, retry)
    return np.maximum(value, 0.0)


def base_load_sample(p: NormalParams, rng: RngStream) -> float:
    # both uniforms are always consumed so the stream position stays fixed
    u_first, u_retry = rng.uniform(2)
    return float(truncated_normal_quantile(u_first, u_retry, p.mu, p.sigma))


def der_factor_quantile(u, alpha, beta):
    """Capacity factor of a DER-PV unit in [0, 1]."""
    return special.betaincinv(alpha, beta, np.asarray(u, dtype=float))


def der_factor_sample(p: BetaParams, rng: RngStream) -> float:
    return float(der_factor_quantile(rng.uniform(), p.alpha, p.beta))


def piecewise_cei(p_gi, a_down, b_down, a_over, b_over, p_rate):
    """Vectorised marginal intensity; P_Gi == P_Grate belongs to the lower segment."""
    p_gi = np.asarray(p_gi, dtype=float)
    return np.where(p_gi <= p_rate, a_down - b_down * p_gi, a_over + b_over * p_gi)


def marginal_cei(p_gi: float, p: MarginalCeiParams) -> float:
    """
    Marginal carbon intensity (tCO2/MWh) of a conventional unit at output p_gi.

    Raises:
        ValueError: If p_gi lies outside [0, P_Glim].
    """
    if p_gi < 0 or p_gi > p.p_lim + 1e-9:
        raise ValueError(f"output {p_gi} MW outside [0, {p.p_lim}] MW")
    return float(piecewise_cei(p_gi, p.a_down, p.b_down, p.a_over, p.b_over, p.p_rate))
