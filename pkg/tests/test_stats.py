import numpy as np
import pytest

from carbon_trace_simulator.stats import (
    StatsAccumulator,
    empirical_distribution,
    pilot_range,
)


def accumulator(values, lower=0.0, upper=1.0, bins=10):
    values = np.asarray(values, dtype=float).reshape(len(values), -1)
    acc = StatsAccumulator([f"c{i}" for i in range(values.shape[1])], lower, upper, bins)
    acc.add_batch(values)
    return acc


def test_moments_match_numpy():
    values = np.random.default_rng(1).normal(5.0, 2.0, size=(1000, 3))
    acc = accumulator(values, 0.0, 10.0)
    assert acc.count == 1000
    assert np.allclose(acc.mean, values.mean(axis=0), rtol=1e-12)
    assert np.allclose(acc.variance, values.var(axis=0), rtol=1e-10)
    assert np.array_equal(acc.min, values.min(axis=0))
    assert np.array_equal(acc.max, values.max(axis=0))


def test_merge_equals_single_pass():
    values = np.random.default_rng(2).exponential(3.0, size=(997, 2))
    single = accumulator(values, 0.0, 20.0, 50)
    merged = single.empty_like()
    for chunk in np.array_split(values, 7):
        merged = merged.merge(accumulator(chunk, 0.0, 20.0, 50))
    assert merged.count == single.count
    assert np.allclose(merged.mean, single.mean, rtol=1e-12)
    assert np.allclose(merged.variance, single.variance, rtol=1e-10)
    assert np.array_equal(merged.hist, single.hist)


def test_add_one_at_a_time():
    values = np.linspace(0.0, 1.0, 11)
    acc = StatsAccumulator(["x"], 0.0, 1.0, 10)
    for v in values:
        acc.add([v])
    assert acc.mean[0] == pytest.approx(0.5)
    assert acc.variance[0] == pytest.approx(values.var())


def test_single_sample_has_zero_variance():
    acc = accumulator([[4.2]], 0.0, 5.0)
    assert acc.variance.tolist() == [0.0]
    assert acc.std.tolist() == [0.0]


def test_equal_samples_fill_one_bin():
    acc = accumulator(np.full(40, 2.5), 0.0, 10.0, 20)
    dist = empirical_distribution(acc, "c0")
    assert np.count_nonzero(dist.pdf) == 1
    assert dist.pdf.sum() * acc.width[0] == pytest.approx(1.0)


def test_out_of_range_values_land_in_edge_bins():
    acc = accumulator([[-1.0], [0.5], [3.0]], 0.0, 1.0, 4)
    assert acc.hist[0].tolist() == [1, 0, 1, 1]


def test_uniform_pdf_is_flat():
    n, bins = 200_000, 20
    acc = accumulator(np.random.default_rng(3).uniform(size=n), 0.0, 1.0, bins)
    dist = empirical_distribution(acc, "c0")
    # per-bin density has std sqrt(p (1 - p) / n) / width
    p = 1.0 / bins
    sigma = np.sqrt(p * (1 - p) / n) / p
    assert np.all(np.abs(dist.pdf - 1.0) < 4 * sigma)


def test_cdf_ends_at_one():
    acc = accumulator(np.random.default_rng(4).gamma(2.0, size=(333, 2)), 0.0, 15.0, 30)
    for component in acc.components:
        dist = empirical_distribution(acc, component)
        assert dist.cdf[-1] == 1.0
        assert np.all(np.diff(dist.cdf) >= 0)
        assert len(dist.edges) == 31
        assert dist.centers[0] == pytest.approx(0.25)


def test_quantiles_of_a_uniform_sample():
    acc = accumulator(np.random.default_rng(5).uniform(size=100_000), 0.0, 1.0, 100)
    q = acc.quantiles((0.05, 0.5, 0.95))[0]
    assert q == pytest.approx([0.05, 0.5, 0.95], abs=0.01)


def test_quantiles_need_samples():
    with pytest.raises(ValueError):
        StatsAccumulator(["x"], 0.0, 1.0).quantiles()


def test_distribution_needs_samples():
    with pytest.raises(ValueError):
        empirical_distribution(StatsAccumulator(["x"], 0.0, 1.0), "x")


def test_empty_accumulator_has_zero_variance():
    assert StatsAccumulator(["x"], 0.0, 1.0).variance.tolist() == [0.0]


@pytest.mark.parametrize(
    "args",
    [
        (["x"], 0.0, 1.0, 1),
        (["x"], 1.0, 1.0, 10),
        (["x"], 2.0, 1.0, 10),
    ],
)
def test_invalid_histogram(args):
    with pytest.raises(ValueError):
        StatsAccumulator(*args)


def test_wrong_shape():
    with pytest.raises(ValueError):
        StatsAccumulator(["x", "y"], 0.0, 1.0).add_batch(np.zeros((3, 3)))


def test_merge_rejects_other_components():
    a = StatsAccumulator(["x"], 0.0, 1.0)
    b = StatsAccumulator(["y"], 0.0, 1.0)
    with pytest.raises(ValueError):
        a.merge(b)


def test_merge_leaves_inputs_alone():
    a = accumulator([[0.2], [0.4]])
    b = accumulator([[0.6]])
    merged = a.merge(b)
    assert (a.count, b.count, merged.count) == (2, 1, 3)


def test_pilot_range():
    lower, upper = pilot_range(np.array([[1.0, 0.0], [4.0, 0.0], [2.0, 0.0]]))
    assert lower.tolist() == [0.0, 0.0]
    assert upper.tolist() == pytest.approx([4.2, 1.0])
