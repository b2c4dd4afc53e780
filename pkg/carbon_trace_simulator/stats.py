"""
Mergeable streaming statistics over many tracked components at once.

Moments follow the pairwise update of Chan et al., so accumulators built on
separate chunks merge to the same result as a single pass. Histograms use a
fixed range per component; values outside it land in the edge bins.
"""

from dataclasses import dataclass

import numpy as np

DEFAULT_BINS = 100
PILOT_HEADROOM = 1.05


@dataclass(frozen=True)
class Distribution:
    component: str
    edges: np.ndarray
    pdf: np.ndarray
    cdf: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def pilot_range(values: np.ndarray):
    """
    Histogram range [0, 1.05 x max] per component from a pilot sample of
    shape (n, components); an all-zero component gets [0, 1].
    """
    upper = PILOT_HEADROOM * np.max(values, axis=0, initial=0.0)
    upper = np.where(upper > 0, upper, 1.0)
    return np.zeros_like(upper), upper


class StatsAccumulator:
    def __init__(self, components, lower, upper, bins=DEFAULT_BINS):
        if bins < 2:
            raise ValueError(f"need at least 2 histogram bins, got {bins}")
        self.components = tuple(components)
        c = len(self.components)
        self.bins = bins
        self.lower = np.broadcast_to(np.asarray(lower, dtype=float), (c,)).copy()
        self.upper = np.broadcast_to(np.asarray(upper, dtype=float), (c,)).copy()
        if np.any(self.upper <= self.lower):
            raise ValueError("histogram upper bound must exceed the lower bound")
        self.count = 0
        self.mean = np.zeros(c)
        self.m2 = np.zeros(c)
        self.min = np.full(c, np.inf)
        self.max = np.full(c, -np.inf)
        self.hist = np.zeros((c, bins), dtype=np.int64)

    @property
    def width(self) -> np.ndarray:
        return (self.upper - self.lower) / self.bins

    def empty_like(self) -> "StatsAccumulator":
        return StatsAccumulator(self.components, self.lower, self.upper, self.bins)

    def add(self, values):
        """Adds one sample (one value per component)."""
        self.add_batch(np.asarray(values, dtype=float)[np.newaxis, :])

    def add_batch(self, values):
        """Adds samples of shape (n, components), in row order."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.components):
            raise ValueError(
                f"expected shape (n, {len(self.components)}), got {values.shape}"
            )
        n = values.shape[0]
        if n == 0:
            return

        batch = self.empty_like()
        batch.count = n
        batch.mean = values.mean(axis=0)
        batch.m2 = ((values - batch.mean) ** 2).sum(axis=0)
        batch.min = values.min(axis=0)
        batch.max = values.max(axis=0)

        bins = np.floor((values - self.lower) / self.width).astype(np.int64)
        bins = np.clip(bins, 0, self.bins - 1)
        flat = bins + np.arange(len(self.components)) * self.bins
        batch.hist = np.bincount(
            flat.ravel(), minlength=len(self.components) * self.bins
        ).reshape(len(self.components), self.bins)

        self._absorb(batch)

    def _absorb(self, other):
        if other.count == 0:
            return
        if self.count == 0:
            self.count = other.count
            self.mean = other.mean.copy()
            self.m2 = other.m2.copy()
            self.min = other.min.copy()
            self.max = other.max.copy()
            self.hist = other.hist.copy()
            return
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / n)
        self.m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        self.min = np.minimum(self.min, other.min)
        self.max = np.maximum(self.max, other.max)
        self.hist = self.hist + other.hist
        self.count = n

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        """Returns a new accumulator holding both sample sets."""
        if other.components != self.components or other.bins != self.bins:
            raise ValueError("cannot merge accumulators over different components")
        merged = self.empty_like()
        merged._absorb(self)
        merged._absorb(other)
        return merged

    @property
    def variance(self) -> np.ndarray:
        """Population variance (0 for a single sample)."""
        if self.count == 0:
            return np.zeros_like(self.mean)
        return self.m2 / self.count

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def index(self, component) -> int:
        return self.components.index(component)

    def quantiles(self, qs=(0.05, 0.5, 0.95)) -> np.ndarray:
        """Quantiles read off the histogram CDF by linear interpolation, shape (components, len(qs))."""
        if self.count == 0:
            raise ValueError("no samples")
        cdf = np.cumsum(self.hist, axis=1) / self.count
        prev = np.concatenate([np.zeros((len(self.components), 1)), cdf[:, :-1]], axis=1)
        out = np.empty((len(self.components), len(qs)))
        for c in range(len(self.components)):
            for j, q in enumerate(qs):
                b = int(np.searchsorted(cdf[c], q, side="left"))
                b = min(b, self.bins - 1)
                mass = cdf[c, b] - prev[c, b]
                frac = (q - prev[c, b]) / mass if mass > 0 else 0.0
                out[c, j] = self.lower[c] + self.width[c] * (b + frac)
        return out


def empirical_distribution(acc: StatsAccumulator, component) -> Distribution:
    """
    PDF (count / (N x bin width)) and CDF (running probability) of one
    tracked component.
    """
    if acc.count < 1:
        raise ValueError("empirical distribution needs at least one sample")
    c = acc.index(component) if not isinstance(component, int) else component
    counts = acc.hist[c]
    width = acc.width[c]
    edges = acc.lower[c] + width * np.arange(acc.bins + 1)
    return Distribution(
        component=acc.components[c],
        edges=edges,
        pdf=counts / (acc.count * width),
        cdf=np.cumsum(counts) / acc.count,
    )
