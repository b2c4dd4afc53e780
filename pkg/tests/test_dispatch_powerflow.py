from dataclasses import replace

import numpy as np
import pytest

from carbon_trace_simulator.dispatch_powerflow import (
    GridModel,
    bus_balance,
    dc_power_flow,
    dispatch,
    estimate_losses,
    flow_signature,
    load_flow_csv,
    solve_flow,
)
from carbon_trace_simulator.errors import FlowFileError, InfeasibleDispatchError
from carbon_trace_simulator.mcs_engine import expected_scenario, sample_scenario
from carbon_trace_simulator.network_model import network_from_dict

from .networks import conventional, sample


@pytest.fixture
def two_units():
    def build(p_lim_2=200.0):
        return GridModel(
            network_from_dict(
                {
                    "buses": [
                        {"id": "1", "kind": "slack"},
                        {"id": "2", "kind": "transmission", "base_load_ref": 0},
                    ],
                    "branches": [{"id": "L1", "from_bus": "1", "to_bus": "2", "susceptance": 10.0}],
                    "generators": [
                        conventional("G1", "1", participation=2.0),
                        conventional("G2", "2", p_rate=20.0, p_lim=p_lim_2, participation=1.0),
                    ],
                    "loads": [{"bus": "2", "normal": {"mu": 90.0, "sigma": 0.0}}],
                }
            )
        )

    return build


def test_single_unit_covers_the_load(two_bus):
    d = dispatch(GridModel(two_bus), sample([100.0]))
    assert d.output.tolist() == pytest.approx([100.0])
    assert d.intensity.tolist() == pytest.approx([0.8])


def test_res_equal_to_load(wind_two_bus):
    d = dispatch(GridModel(wind_two_bus), sample([20.0, 30.0], wind_speed=[12.0]))
    assert d.output.tolist() == pytest.approx([0.0, 50.0])
    assert d.curtailment.tolist() == [0.0, 0.0]


def test_surplus_res_is_curtailed(wind_two_bus):
    d = dispatch(GridModel(wind_two_bus), sample([10.0, 20.0], wind_speed=[15.0]))
    assert d.output.tolist() == pytest.approx([0.0, 30.0])
    assert d.curtailment.tolist() == pytest.approx([0.0, 20.0])


def test_participation_split(two_units):
    d = dispatch(two_units(), sample([90.0]))
    assert d.output.tolist() == pytest.approx([60.0, 30.0])


def test_clamped_unit_passes_residual_to_slack(two_units):
    d = dispatch(two_units(p_lim_2=20.0), sample([90.0]))
    assert d.output.tolist() == pytest.approx([70.0, 20.0])


def test_infeasible_net_load(two_units):
    with pytest.raises(InfeasibleDispatchError):
        dispatch(two_units(p_lim_2=20.0), sample([500.0]))


def test_average_policy_uses_design_intensity(standard):
    model = GridModel(standard)
    s = expected_scenario(model)
    d = dispatch(model, s, "average")
    assert d.intensity[model.conv].tolist() == pytest.approx(model.design_intensity.tolist())


def test_two_bus_flow(two_bus):
    flow = dc_power_flow(GridModel(two_bus), {"1": 50.0, "2": -50.0})
    assert flow.p_send[0] == pytest.approx(50.0)


def test_triangle_split(triangle):
    model = GridModel(triangle)
    flow = dc_power_flow(model, {"1": 90.0, "2": -90.0})
    a, b, c = (flow.p_send[model.branch_index[k]] for k in "ABC")
    assert a == pytest.approx(60.0, rel=1e-12)
    assert c == pytest.approx(30.0, rel=1e-12)
    # branch B runs 2 -> 3, the flow goes 3 -> 2
    assert b == pytest.approx(-30.0, rel=1e-12)


def test_zero_injections(triangle):
    flow = dc_power_flow(GridModel(triangle), np.zeros(3))
    assert not flow.p_send.any()


def test_flow_is_linear(triangle):
    model = GridModel(triangle)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=3), rng.normal(size=3)
    combined = dc_power_flow(model, 2.0 * x - 3.0 * y).p_send
    separate = 2.0 * dc_power_flow(model, x).p_send - 3.0 * dc_power_flow(model, y).p_send
    assert np.allclose(combined, separate, rtol=0, atol=1e-12)


def test_lossless_branches_keep_the_flow(two_bus):
    model = GridModel(two_bus)
    first = dc_power_flow(model, {"2": -100.0})
    second = estimate_losses(first, model)
    assert not second.loss.any()
    assert np.array_equal(second.p_send, second.p_recv)


def test_one_megawatt_loss(two_bus_dict):
    two_bus_dict["branches"][0]["resistance"] = 0.01
    model = GridModel(network_from_dict(two_bus_dict))
    flow = estimate_losses(dc_power_flow(model, {"2": -100.0}), model)
    assert flow.loss[0] == pytest.approx(1.0)
    assert flow.p_send[0] == pytest.approx(101.0)
    assert flow.p_recv[0] == pytest.approx(100.0)
    assert flow.injection[model.slack] == pytest.approx(101.0)
    assert np.allclose(bus_balance(model, flow), 0.0, atol=1e-9)


def test_idle_branch_gets_no_loss(two_bus_dict):
    two_bus_dict["branches"][0]["resistance"] = 0.01
    model = GridModel(network_from_dict(two_bus_dict))
    carried = np.array([10.0])
    loss = model.resistance * (carried / model.base_mva) ** 2 * model.base_mva
    # bus 2 injects exactly the half loss withdrawn from it, so the second pass carries nothing
    first = replace(dc_power_flow(model, {"2": 0.5 * loss[0]}), p_send=carried)
    flow = estimate_losses(first, model)
    assert flow.loss.tolist() == [0.0]
    assert flow.p_send[0] == flow.p_recv[0]
    assert flow.p_send[0] == pytest.approx(-0.5 * loss[0])
    assert np.allclose(bus_balance(model, flow), 0.0, atol=1e-12)


def test_closer_generation_loses_less(line_three_bus):
    model = GridModel(line_three_bus)
    far = estimate_losses(dc_power_flow(model, {"3": -50.0}), model)
    near = estimate_losses(dc_power_flow(model, {"2": 50.0, "3": -50.0}), model)
    assert near.loss.sum() < far.loss.sum()


def test_energy_balance_after_losses(nine_bus):
    model = GridModel(nine_bus)
    for idx in range(20):
        flow, d = solve_flow(model, dispatch(model, sample_scenario(model, idx, 3)))
        gap = d.output.sum() - d.bus_consumption.sum() - flow.loss.sum()
        assert abs(gap) <= 1e-6
        assert np.abs(bus_balance(model, flow)).max() <= 1e-9


def test_slack_limit_after_losses(two_bus_dict):
    two_bus_dict["branches"][0]["resistance"] = 0.05
    two_bus_dict["generators"][0]["p_lim"] = 100.0
    two_bus_dict["generators"][0]["cei"]["p_lim"] = 100.0
    model = GridModel(network_from_dict(two_bus_dict))
    d = dispatch(model, sample([100.0]))
    with pytest.raises(InfeasibleDispatchError):
        solve_flow(model, d)


def test_signature_tracks_directions_only(nine_bus):
    model = GridModel(nine_bus)
    flow, _ = solve_flow(model, dispatch(model, expected_scenario(model)))
    same = flow_signature(model, flow.p_send)
    assert flow_signature(model, 2.0 * flow.p_send) == same
    assert flow_signature(model, -flow.p_send) != same


def test_flow_file_round_trip(tmp_path, two_bus):
    model = GridModel(two_bus)
    path = tmp_path / "flows.csv"
    path.write_text("branch_id,p_send_mw,p_recv_mw\nL1,101.0,100.0\n", encoding="utf-8")
    flow = load_flow_csv(path, model)
    assert flow.loss.tolist() == pytest.approx([1.0])
    assert flow.injection.tolist() == pytest.approx([101.0, -100.0])


@pytest.mark.parametrize(
    "content",
    [
        "branch_id,p_send_mw\nL1,100.0\n",
        "branch_id,p_send_mw,p_recv_mw\nL7,100.0,100.0\n",
        "branch_id,p_send_mw,p_recv_mw\nL1,100.0,-100.0\n",
        "branch_id,p_send_mw,p_recv_mw\nL1,100.0,101.0\n",
    ],
)
def test_bad_flow_file(tmp_path, two_bus, content):
    path = tmp_path / "flows.csv"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(FlowFileError):
        load_flow_csv(path, GridModel(two_bus))


def test_missing_flow_file(tmp_path, two_bus):
    with pytest.raises(FlowFileError, match="missing.csv"):
        load_flow_csv(tmp_path / "missing.csv", GridModel(two_bus))
