import networkx as nx
import pytest

from carbon_trace_simulator.network_model import network_from_dict
from carbon_trace_simulator.synthetic import nine_bus_fixture, standard_fixture

from .networks import conventional


@pytest.fixture
def two_bus_dict():
    """Slack unit at bus 1 (constant 0.8 tCO2/MWh) feeding 100 MW at bus 2."""
    return {
        "base_mva": 100.0,
        "buses": [
            {"id": "1", "kind": "slack"},
            {"id": "2", "kind": "transmission", "base_load_ref": 0},
        ],
        "branches": [
            {"id": "L1", "from_bus": "1", "to_bus": "2", "susceptance": 10.0, "resistance": 0.0}
        ],
        "generators": [conventional("G1", "1")],
        "loads": [{"bus": "2", "normal": {"mu": 100.0, "sigma": 0.0}}],
    }


@pytest.fixture
def two_bus(two_bus_dict):
    return network_from_dict(two_bus_dict)


@pytest.fixture
def wind_two_bus():
    """
    Slack unit at bus 1 with 20 MW of load; a 50 MW wind farm at bus 2 with
    30 MW of load.
    """
    return network_from_dict(
        {
            "buses": [
                {"id": "1", "kind": "slack", "base_load_ref": 0},
                {"id": "2", "kind": "transmission", "base_load_ref": 1},
            ],
            "branches": [{"id": "L1", "from_bus": "1", "to_bus": "2", "susceptance": 10.0}],
            "generators": [
                conventional("G1", "1"),
                {
                    "id": "W1",
                    "bus": "2",
                    "kind": "wind",
                    "p_rate": 50.0,
                    "turbine": {"p_rate": 50.0, "v_in": 3.0, "v_rate": 12.0, "v_out": 25.0},
                    "weibull": {"lambda": 8.0, "k": 2.0},
                },
            ],
            "loads": [
                {"bus": "1", "normal": {"mu": 20.0, "sigma": 0.0}},
                {"bus": "2", "normal": {"mu": 30.0, "sigma": 0.0}},
            ],
        }
    )


@pytest.fixture
def triangle():
    """Three transmission buses, equal susceptances, slack at bus 1."""
    return network_from_dict(
        {
            "buses": [
                {"id": "1", "kind": "slack"},
                {"id": "2", "kind": "transmission"},
                {"id": "3", "kind": "transmission"},
            ],
            "branches": [
                {"id": "A", "from_bus": "1", "to_bus": "2", "susceptance": 5.0},
                {"id": "B", "from_bus": "2", "to_bus": "3", "susceptance": 5.0},
                {"id": "C", "from_bus": "1", "to_bus": "3", "susceptance": 5.0},
            ],
            "generators": [conventional("G1", "1")],
        }
    )


@pytest.fixture
def line_three_bus():
    """1 - 2 - 3 line with resistive branches, slack at bus 1."""
    return network_from_dict(
        {
            "buses": [
                {"id": "1", "kind": "slack"},
                {"id": "2", "kind": "transmission"},
                {"id": "3", "kind": "transmission"},
            ],
            "branches": [
                {"id": "A", "from_bus": "1", "to_bus": "2", "susceptance": 10.0, "resistance": 0.01},
                {"id": "B", "from_bus": "2", "to_bus": "3", "susceptance": 10.0, "resistance": 0.01},
            ],
            "generators": [conventional("G1", "1")],
        }
    )


@pytest.fixture
def nine_bus():
    return nine_bus_fixture()


@pytest.fixture(scope="session")
def standard():
    return standard_fixture()


@pytest.fixture
def make_flow_graph():
    """
    Builds a flow graph by hand.

    nodes: {bus: dict(consumption=..., injections=[(gen, MW, e)], internal_loss=...)}
    edges: [(u, v, key, flow, loss)]
    """

    def build(nodes, edges):
        g = nx.MultiDiGraph(signature="manual")
        for node, attrs in nodes.items():
            g.add_node(
                node,
                kind=attrs.get("kind", "transmission"),
                consumption=attrs.get("consumption", 0.0),
                injections=list(attrs.get("injections", [])),
                internal_loss=attrs.get("internal_loss", 0.0),
                stray=0.0,
            )
        for u, v, key, flow, loss in edges:
            g.add_edge(u, v, key=key, flow=flow, loss=loss)
        return g

    return build


@pytest.fixture
def chain_graph(make_flow_graph):
    """G1 60 MW @0.9 at bus 1 -> bus 2 (G2 40 MW @0.1, 20 MW load) -> bus 3 (80 MW load)."""
    return make_flow_graph(
        {
            "1": {"injections": [("G1", 60.0, 0.9)]},
            "2": {"injections": [("G2", 40.0, 0.1)], "consumption": 20.0},
            "3": {"consumption": 80.0},
        },
        [("1", "2", "A", 60.0, 0.0), ("2", "3", "B", 80.0, 0.0)],
    )
