from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from carbon_trace_simulator.dispatch_powerflow import GridModel, dispatch, solve_flow
from carbon_trace_simulator.errors import (
    InputError,
    ScenarioError,
    UnknownGeneratorError,
)
from carbon_trace_simulator.mcs_engine import (
    RunConfig,
    ScenarioRunner,
    expected_scenario,
    run_mcs,
    run_responsibility,
    run_scenario,
    sample_scenario,
    trace_single,
    tracked_components,
)
from carbon_trace_simulator.network_model import network_from_dict
from carbon_trace_simulator.stochastic_models import expected_wind_power

from .networks import conventional, sample


@pytest.fixture
def shaky_two_bus(two_bus_dict):
    """Two-bus system whose load (100 +- 30 MW) often exceeds the 110 MW unit."""
    two_bus_dict["generators"] = [conventional("G1", "1", p_lim=110.0)]
    two_bus_dict["loads"][0]["normal"]["sigma"] = 30.0
    return network_from_dict(two_bus_dict)


def test_sampling_is_reproducible(standard):
    model = GridModel(standard)
    a = sample_scenario(model, 17, 42)
    b = sample_scenario(model, 17, 42)
    for field in ("wind_speed", "der_factor", "base_load", "ev_demand"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
    assert not np.array_equal(a.base_load, sample_scenario(model, 18, 42).base_load)
    assert not np.array_equal(a.base_load, sample_scenario(model, 17, 43).base_load)


def test_sample_shapes(standard):
    model = GridModel(standard)
    s = sample_scenario(model, 0, 0)
    assert s.wind_speed.shape == (2,)
    assert s.der_factor.shape == (30,)
    assert s.base_load.shape == (len(standard.loads),)
    assert s.ev_demand.shape == (len(standard.ev_stations),)
    assert np.all(s.base_load >= 0)
    assert np.all((s.der_factor >= 0) & (s.der_factor <= 1))


def test_tracked_components(wind_two_bus):
    model = GridModel(wind_two_bus)
    assert tracked_components(model) == ("total", "losses", "load:1", "load:2", "gen:G1", "gen:W1")
    assert tracked_components(model, ("intensities",)) == ("intensity:1", "intensity:2")


def test_two_bus_rates(two_bus):
    runner = ScenarioRunner(two_bus, mode="full", track=("total", "loads"))
    assert runner.components == ("total", "load:2")
    assert runner.rates(expected_scenario(runner.model)).tolist() == pytest.approx([80.0, 80.0])


def test_all_renewable_scenario(wind_two_bus):
    runner = ScenarioRunner(wind_two_bus, mode="full", track=("total", "generators"))
    rates = runner.rates(sample([20.0, 30.0], wind_speed=[12.0]))
    assert rates.tolist() == pytest.approx([0.0, 0.0, 0.0], abs=1e-9)


@pytest.mark.parametrize("name", ["nine_bus", "standard"])
def test_rates_agree_between_modes(request, name):
    net = request.getfixturevalue(name)
    full = ScenarioRunner(net, mode="full", track=("total", "losses", "loads", "generators"))
    virtual = ScenarioRunner(net, mode="virtual", track=full.track)
    for idx in range(5):
        s = sample_scenario(full.model, idx, 8)
        assert np.allclose(full.rates(s), virtual.rates(s), rtol=0, atol=1e-10)


def test_intensity_tracking(nine_bus):
    runner = ScenarioRunner(nine_bus, mode="virtual", track=("intensities",))
    rates = runner.rates(expected_scenario(runner.model))
    assert rates.shape == (9,)
    assert rates[1] == pytest.approx(rates[0])


def test_failure_is_tagged_with_the_index(shaky_two_bus):
    runner = ScenarioRunner(shaky_two_bus, mode="full")
    s = sample([150.0])
    with pytest.raises(ScenarioError) as info:
        run_scenario(runner, s)
    assert info.value.index == 0
    assert info.value.exit_code == 2


def test_single_sample_has_zero_variance(nine_bus):
    result = run_mcs(RunConfig(samples=1, bins=10), nine_bus)
    acc = result.levels[0].accumulator
    assert acc.count == 1
    assert not acc.variance.any()


def test_runs_are_deterministic(nine_bus):
    cfg = RunConfig(samples=60, seed=9, chunk_size=16, pilot_samples=20)
    a = run_mcs(cfg, nine_bus).levels[0].accumulator
    b = run_mcs(cfg, nine_bus).levels[0].accumulator
    assert np.array_equal(a.mean, b.mean)
    assert np.array_equal(a.m2, b.m2)
    assert np.array_equal(a.hist, b.hist)


def test_seed_changes_the_result(nine_bus):
    a = run_mcs(RunConfig(samples=30, seed=1), nine_bus).levels[0].accumulator
    b = run_mcs(RunConfig(samples=30, seed=2), nine_bus).levels[0].accumulator
    assert not np.array_equal(a.mean, b.mean)


def test_worker_count_does_not_change_the_result(nine_bus):
    base = RunConfig(samples=100, seed=3, chunk_size=25, pilot_samples=40)
    one_level = run_mcs(base, nine_bus).levels[0]
    two_level = run_mcs(replace(base, workers=2), nine_bus).levels[0]
    assert two_level.partitions == one_level.partitions >= 1
    one, two = one_level.accumulator, two_level.accumulator
    assert np.array_equal(one.mean, two.mean)
    assert np.array_equal(one.m2, two.m2)
    assert np.array_equal(one.hist, two.hist)


def test_virtual_mode_matches_full_mode(nine_bus):
    full = run_mcs(RunConfig(samples=40, mode="full"), nine_bus).levels[0]
    virtual = run_mcs(RunConfig(samples=40, mode="virtual"), nine_bus).levels[0]
    assert np.allclose(full.accumulator.mean, virtual.accumulator.mean, rtol=1e-12, atol=1e-10)
    assert virtual.partitions >= 1
    assert full.partitions == 0


def test_failing_scenario_aborts_the_run(shaky_two_bus):
    with pytest.raises(ScenarioError):
        run_mcs(RunConfig(samples=50, mode="full"), shaky_two_bus)


def test_skip_failures(shaky_two_bus):
    level = run_mcs(RunConfig(samples=50, mode="full", skip_failures=True), shaky_two_bus).levels[0]
    assert level.failed
    assert level.failed == sorted(level.failed)
    assert level.accumulator.count + len(level.failed) == 50


def test_penetration_levels(standard):
    result = run_mcs(RunConfig(samples=40, penetrations=(0.0, 0.6)), standard)
    assert [l.penetration for l in result.levels] == [0.0, 0.6]
    idx = result.components.index("total")
    low = result.level(0.0).accumulator.mean[idx]
    high = result.level(0.6).accumulator.mean[idx]
    assert high < low
    wind = [result.components.index(c) for c in ("gen:WF1", "gen:WF2")]
    assert not result.level(0.0).accumulator.mean[wind].any()


def test_conservation_in_every_level(nine_bus):
    result = run_mcs(RunConfig(samples=30, track=("total", "losses", "loads")), nine_bus)
    acc = result.levels[0].accumulator
    total = acc.mean[acc.index("total")]
    parts = acc.mean[1:].sum()
    assert parts == pytest.approx(total, rel=1e-9)


def test_responsibility_adds_up(nine_bus):
    (level,) = run_responsibility(RunConfig(samples=20), nine_bus, "G1")
    assert level.samples == 20
    assert level.bus_ids == tuple(str(i) for i in range(1, 10))
    assert level.total == pytest.approx(level.mean_generator_rate, rel=1e-9)
    assert np.all((level.mean_share >= 0) & (level.mean_share <= 1 + 1e-12))
    # the substation bus takes power from G1 alone
    assert level.mean_share[0] == pytest.approx(1.0)


def test_responsibility_modes_agree(nine_bus):
    (full,) = run_responsibility(RunConfig(samples=10, mode="full"), nine_bus, "G1")
    (virtual,) = run_responsibility(RunConfig(samples=10, mode="virtual"), nine_bus, "G1")
    assert np.allclose(full.mean_share, virtual.mean_share, rtol=0, atol=1e-10)
    assert np.allclose(full.mean_load_rate, virtual.mean_load_rate, rtol=0, atol=1e-10)


def test_responsibility_of_unknown_generator(nine_bus):
    with pytest.raises(UnknownGeneratorError):
        run_responsibility(RunConfig(samples=5), nine_bus, "G42")


def test_trace_single_expected_scenario(nine_bus):
    sol = trace_single(nine_bus)
    assert sol.node_ids == tuple(str(i) for i in range(1, 10))
    assert sol.conservation_error() <= 1e-9


def test_trace_single_indexed_scenario(nine_bus):
    sol = trace_single(nine_bus, index=4, seed=2, mode="virtual")
    runner = ScenarioRunner(nine_bus, mode="full")
    expected = runner.solve(sample_scenario(runner.model, 4, 2))
    assert np.allclose(sol.bus_intensity, expected.bus_intensity, rtol=0, atol=1e-10)


def test_trace_single_from_flow_file(tmp_path, nine_bus):
    model = GridModel(nine_bus)
    flow, _ = solve_flow(model, dispatch(model, expected_scenario(model)))
    path = tmp_path / "flows.csv"
    pd.DataFrame(
        {"branch_id": model.branch_ids, "p_send_mw": flow.p_send, "p_recv_mw": flow.p_recv}
    ).to_csv(path, index=False)

    from_file = trace_single(nine_bus, flow_csv=path)
    computed = trace_single(nine_bus)
    assert np.allclose(from_file.bus_intensity, computed.bus_intensity, rtol=0, atol=1e-9)


@pytest.mark.parametrize(
    "options",
    [
        {"samples": 0},
        {"bins": 1},
        {"mode": "fast"},
        {"cei_policy": "median"},
        {"track": ("everything",)},
        {"workers": 0},
        {"chunk_size": 0},
        {"penetrations": (0.2, 1.0)},
    ],
)
def test_bad_run_config(options):
    with pytest.raises(InputError):
        RunConfig(**options)


def test_bad_mode_for_runner(nine_bus):
    with pytest.raises(InputError):
        ScenarioRunner(nine_bus, mode="fast")


@pytest.mark.slow
def test_sampled_wind_power_mean(wind_two_bus):
    runner = ScenarioRunner(wind_two_bus, mode="full", track=("generators",))
    w = runner.model.generator_index["W1"]
    farm = wind_two_bus.generator("W1")
    outputs = []
    for idx in range(100_000):
        s = sample_scenario(runner.model, idx, 0)
        outputs.append(dispatch(runner.model, s).output[w])
    outputs = np.array(outputs)
    # 50 MW of load absorbs the whole farm, so nothing is curtailed
    assert outputs.max() <= 50.0 + 1e-9
    expected = expected_wind_power(farm.turbine, farm.weibull)
    assert outputs.mean() == pytest.approx(expected, abs=4 * outputs.std() / np.sqrt(len(outputs)))


@pytest.mark.slow
def test_emissions_fall_with_penetration(standard):
    levels = (0.0, 0.2, 0.4, 0.6, 0.8)
    result = run_mcs(RunConfig(samples=5000, penetrations=levels), standard)
    idx = result.components.index("total")
    means = [l.accumulator.mean[idx] for l in result.levels]
    assert [l.penetration for l in result.levels] == list(levels)
    assert all(a > b for a, b in zip(means, means[1:]))
    assert not any(l.failed for l in result.levels)


@pytest.mark.slow
@pytest.mark.parametrize("workers", [4, 16])
def test_many_workers(nine_bus, workers):
    cfg = RunConfig(samples=2000, seed=5, chunk_size=100)
    one = run_mcs(cfg, nine_bus).levels[0].accumulator
    many = run_mcs(replace(cfg, workers=workers), nine_bus).levels[0].accumulator
    assert np.array_equal(one.mean, many.mean)
    assert np.array_equal(one.hist, many.hist)
