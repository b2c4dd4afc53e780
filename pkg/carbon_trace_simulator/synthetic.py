"""
Synthetic test systems: the 16-bus meshed backbone with replicated 33-bus
radial feeders, and the nine-node feeder used to illustrate virtual buses.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import data
from .build_graph import build_graph, downstream_buses
from .errors import InputError
from .network_model import (
    Branch,
    Bus,
    EvStationSpec,
    Generator,
    LoadSpec,
    Network,
    with_penetration,
)
from .stochastic_models import (
    BetaParams,
    MarginalCeiParams,
    NormalParams,
    WeibullParams,
    WindTurbineParams,
)

logger = logging.getLogger(__name__)

# Nominal wind capacity before penetration scaling; only the ratio matters.
_NOMINAL_WIND_MW = 100.0


@dataclass(frozen=True)
class SyntheticConfig:
    n_feeders: int = 30
    der_per_feeder: int = 1
    der_capacity_fraction: float = 0.2
    penetration: float = 0.2
    seed: int = 0
    wind_capacity_cap_mw: float | None = None
    load_sigma_fraction: float = 0.1
    ev_lambda_fraction: float = 0.3
    ev_shape: float = 2.0
    der_beta: tuple[float, float] = (2.0, 2.0)

    def build(self) -> "Network":
        return build_synthetic(**asdict(self))


def feeder_bus_id(feeder: int, bus: int) -> str:
    return f"F{feeder:02d}-{bus:02d}"


def _conventional(unit) -> Generator:
    gen_id, bus, p_rate, p_lim, participation, a_down, b_down, a_over, b_over = unit
    return Generator(
        id=gen_id,
        bus=bus,
        kind="conventional",
        p_rate=p_rate,
        p_lim=p_lim,
        cei=MarginalCeiParams(a_down, b_down, a_over, b_over, p_rate, p_lim),
        participation_factor=participation,
    )


def _wind_farm(farm) -> Generator:
    gen_id, bus, v_in, v_rate, v_out, lam, k = farm
    return Generator(
        id=gen_id,
        bus=bus,
        kind="wind",
        p_rate=_NOMINAL_WIND_MW,
        turbine=WindTurbineParams(_NOMINAL_WIND_MW, v_in, v_rate, v_out),
        weibull=WeibullParams(lam, k),
    )


class _Builder:
    """Collects elements and keeps the bus -> load/EV references in step."""

    def __init__(self):
        self.buses = []
        self.branches = []
        self.generators = []
        self.loads = []
        self.ev_stations = []

    def add_bus(self, bus_id, kind, load=None, ev=None):
        load_ref = ev_ref = None
        if load is not None:
            load_ref = len(self.loads)
            self.loads.append(LoadSpec(bus_id, load))
        if ev is not None:
            ev_ref = len(self.ev_stations)
            self.ev_stations.append(EvStationSpec(bus_id, ev))
        self.buses.append(Bus(bus_id, kind, load_ref, ev_ref))

    def add_branch(self, from_bus, to_bus, x, r):
        self.branches.append(
            Branch(
                id=f"{from_bus}~{to_bus}",
                from_bus=from_bus,
                to_bus=to_bus,
                susceptance=1.0 / x,
                resistance=r,
            )
        )

    def network(self, base_mva=data.BASE_MVA) -> Network:
        return Network(
            buses=tuple(self.buses),
            branches=tuple(self.branches),
            generators=tuple(self.generators),
            loads=tuple(self.loads),
            ev_stations=tuple(self.ev_stations),
            base_mva=base_mva,
        )


def _local_load(net: Network, G, bus: str, parent: str) -> float:
    """Expected demand (MW) of the feeder subtree a bus supplies."""
    subtree = downstream_buses(G, bus, parent)
    return sum(l.normal.mu for l in net.loads if l.bus in subtree) + sum(
        ev.weibull.mean() for ev in net.ev_stations if ev.bus in subtree
    )


def build_synthetic(
    n_feeders=30,
    der_per_feeder=1,
    der_capacity_fraction=0.2,
    penetration=0.2,
    seed=0,
    **options,
) -> Network:
    """
    Builds the backbone-plus-feeders test system.

    Feeders attach round-robin to the non-slack backbone buses through a
    substation transformer branch; each gets `der_per_feeder` PV units on
    seeded-random buses below its head, sized at `der_capacity_fraction` of
    the expected load they supply. Wind capacity is then scaled to reach the
    requested RES penetration.

    Args:
        **options: Remaining SyntheticConfig fields (load spread, EV and
            DER model parameters, wind capacity cap).

    Raises:
        InputError: Bad counts or fractions.
        InfeasiblePenetrationError: Wind capacity above the cap.
    """
    cfg = SyntheticConfig(
        n_feeders=n_feeders,
        der_per_feeder=der_per_feeder,
        der_capacity_fraction=der_capacity_fraction,
        penetration=penetration,
        seed=seed,
        **options,
    )
    if cfg.n_feeders < 1:
        raise InputError(f"n_feeders must be >= 1, got {cfg.n_feeders}")
    feeder_size = len(data.feeder_loads_kw) + 1
    if not 0 <= cfg.der_per_feeder < feeder_size:
        raise InputError(f"der_per_feeder must be in [0, {feeder_size - 1}]")
    for name in ("der_capacity_fraction", "penetration"):
        if not 0 <= getattr(cfg, name) < 1:
            raise InputError(f"{name} must be in [0, 1), got {getattr(cfg, name)}")

    rng = np.random.default_rng(cfg.seed)
    sigma = cfg.load_sigma_fraction
    b = _Builder()

    for bus_id in data.backbone_buses:
        mu = data.backbone_loads.get(bus_id)
        kind = "slack" if bus_id == data.slack_bus else "transmission"
        b.add_bus(bus_id, kind, load=None if mu is None else NormalParams(mu, sigma * mu))
    for from_bus, to_bus, x, r in data.backbone_edges:
        b.add_branch(from_bus, to_bus, x, r)
    b.generators.extend(_conventional(unit) for unit in data.conventional_units)
    b.generators.extend(_wind_farm(farm) for farm in data.wind_farms)

    z_base = data.FEEDER_KV**2 / data.BASE_MVA
    hosts = [bus for bus in data.backbone_buses if bus != data.slack_bus]
    for f in range(1, cfg.n_feeders + 1):
        for local in range(1, feeder_size + 1):
            mu = data.feeder_loads_kw.get(local, 0) / 1000.0
            ev = None
            if local in data.feeder_ev_buses:
                ev = WeibullParams(cfg.ev_lambda_fraction * mu, cfg.ev_shape)
            b.add_bus(
                feeder_bus_id(f, local),
                "distribution",
                load=NormalParams(mu, sigma * mu) if mu > 0 else None,
                ev=ev,
            )
        host = hosts[(f - 1) % len(hosts)]
        b.add_branch(host, feeder_bus_id(f, 1), data.transformer_x, data.transformer_r)
        for u, v, r_ohm, x_ohm in data.feeder_edges:
            b.add_branch(feeder_bus_id(f, u), feeder_bus_id(f, v), x_ohm / z_base, r_ohm / z_base)

    net = b.network()
    G = build_graph(net)
    parents = {v: u for u, v, _, _ in data.feeder_edges}
    der_beta = BetaParams(*cfg.der_beta)
    for f in range(1, cfg.n_feeders + 1):
        picks = rng.choice(np.arange(2, feeder_size + 1), size=cfg.der_per_feeder, replace=False)
        for n, local in enumerate(sorted(int(p) for p in picks), start=1):
            bus = feeder_bus_id(f, local)
            capacity = cfg.der_capacity_fraction * _local_load(
                net, G, bus, feeder_bus_id(f, parents[local])
            )
            b.generators.append(
                Generator(
                    id=f"PV{f:02d}-{n}",
                    bus=bus,
                    kind="der_pv",
                    p_rate=capacity,
                    beta=der_beta,
                )
            )

    net = with_penetration(b.network(), cfg.penetration, cfg.wind_capacity_cap_mw)
    logger.info(
        "synthetic network: %d buses, %d branches, %d DERs, penetration %.2f",
        len(net.buses),
        len(net.branches),
        sum(g.kind == "der_pv" for g in net.generators),
        cfg.penetration,
    )
    return net


def standard_fixture(seed=0, penetration=0.2) -> Network:
    """16-bus backbone with 30 feeders and one DER per feeder (1006 buses)."""
    return build_synthetic(seed=seed, penetration=penetration)


def nine_bus_fixture() -> Network:
    """
    Nine-node radial feeder fed from a slack substation at node 1, with
    PV units at nodes 3, 5 and 8.
    """
    b = _Builder()
    for node in range(1, 10):
        mu = data.nine_bus_loads.get(node)
        b.add_bus(
            str(node),
            "slack" if node == 1 else "distribution",
            load=None if mu is None else NormalParams(mu, 0.1 * mu),
        )
    for u, v in data.nine_bus_edges:
        b.add_branch(str(u), str(v), 0.02, 0.002)

    b.generators.append(
        Generator(
            id="G1",
            bus="1",
            kind="conventional",
            p_rate=8.0,
            p_lim=20.0,
            cei=MarginalCeiParams(0.95, 0.005, 0.80, 0.004, 8.0, 20.0),
            participation_factor=1.0,
        )
    )
    net = b.network()
    G = build_graph(net)
    parents = {v: u for u, v in data.nine_bus_edges}
    for node in data.nine_bus_der_buses:
        capacity = 0.2 * _local_load(net, G, str(node), str(parents[node]))
        b.generators.append(
            Generator(
                id=f"PV{node}",
                bus=str(node),
                kind="der_pv",
                p_rate=capacity,
                beta=BetaParams(2.0, 2.0),
            )
        )
    return b.network()
