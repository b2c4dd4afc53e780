"""
Static grid description: domain types, JSON ingestion/serialization,
validation, and RES penetration scaling.

Units: power in MW, carbon intensity in tCO2/MWh, impedances per-unit on
the network's `base_mva`.
"""

import json
import logging
import math
from dataclasses import asdict, astuple, dataclass, field, replace
from pathlib import Path

import networkx as nx

from .build_graph import build_graph, feeder_components
from .errors import (
    InfeasiblePenetrationError,
    NetworkParseError,
    NetworkValidationError,
)
from .stochastic_models import (
    BetaParams,
    MarginalCeiParams,
    NormalParams,
    WeibullParams,
    WindTurbineParams,
    expected_wind_power,
    piecewise_cei,
)

logger = logging.getLogger(__name__)

BUS_KINDS = ("transmission", "distribution", "slack")
GENERATOR_KINDS = ("conventional", "wind", "der_pv")

# Required wind capacity above this multiple of the expected load is rejected.
DEFAULT_WIND_CAPACITY_CAP = 10.0


@dataclass(frozen=True)
class Bus:
    id: str
    kind: str
    base_load_ref: int | None = None
    ev_station_ref: int | None = None


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    susceptance: float
    resistance: float = 0.0
    rating: float | None = None


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    kind: str
    p_rate: float
    p_lim: float | None = None
    cei: MarginalCeiParams | None = None
    intensity: float = 0.0
    turbine: WindTurbineParams | None = None
    weibull: WeibullParams | None = None
    beta: BetaParams | None = None
    participation_factor: float = 0.0


@dataclass(frozen=True)
class LoadSpec:
    bus: str
    normal: NormalParams


@dataclass(frozen=True)
class EvStationSpec:
    bus: str
    weibull: WeibullParams


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    loads: tuple[LoadSpec, ...] = ()
    ev_stations: tuple[EvStationSpec, ...] = ()
    penetration_target: float = 0.0
    base_mva: float = 100.0

    @property
    def slack_bus(self) -> str:
        return next(b.id for b in self.buses if b.kind == "slack")

    @property
    def slack_generator(self) -> Generator:
        slack = self.slack_bus
        return next(
            g for g in self.generators if g.bus == slack and g.kind == "conventional"
        )

    def generator(self, gen_id: str) -> Generator | None:
        return next((g for g in self.generators if g.id == gen_id), None)

    def expected_load(self) -> float:
        """Expected total demand (MW): base load means plus EV station means."""
        return sum(l.normal.mu for l in self.loads) + sum(
            ev.weibull.mean() for ev in self.ev_stations
        )

    def expected_res(self) -> float:
        """Expected RES output (MW) before any curtailment."""
        total = 0.0
        for gen in self.generators:
            if gen.kind == "wind":
                total += expected_wind_power(gen.turbine, gen.weibull)
            elif gen.kind == "der_pv":
                total += gen.p_rate * gen.beta.mean()
        return total


@dataclass(frozen=True)
class Violation:
    kind: str
    element: str
    message: str


# ---------------------------------------------------------------------------
# JSON schema
# ---------------------------------------------------------------------------


def _weibull_from_dict(data):
    return WeibullParams(lam=float(data["lambda"]), k=float(data["k"]))


def _weibull_to_dict(p):
    return {"lambda": p.lam, "k": p.k}


def _element_ref(value):
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise TypeError(f"element reference must be an integer index, got {value!r}")
    return value


def _generator_from_dict(data):
    cei = data.get("cei")
    turbine = data.get("turbine")
    weibull = data.get("weibull")
    beta = data.get("beta")
    p_lim = data.get("p_lim")
    return Generator(
        id=str(data["id"]),
        bus=str(data["bus"]),
        kind=data["kind"],
        p_rate=float(data["p_rate"]),
        p_lim=None if p_lim is None else float(p_lim),
        cei=None if cei is None else MarginalCeiParams(**{k: float(v) for k, v in cei.items()}),
        intensity=float(data.get("intensity", 0.0)),
        turbine=None
        if turbine is None
        else WindTurbineParams(**{k: float(v) for k, v in turbine.items()}),
        weibull=None if weibull is None else _weibull_from_dict(weibull),
        beta=None if beta is None else BetaParams(float(beta["alpha"]), float(beta["beta"])),
        participation_factor=float(data.get("participation_factor", 0.0)),
    )


def _generator_to_dict(gen):
    data = {
        "id": gen.id,
        "bus": gen.bus,
        "kind": gen.kind,
        "p_rate": gen.p_rate,
        "intensity": gen.intensity,
        "participation_factor": gen.participation_factor,
    }
    if gen.p_lim is not None:
        data["p_lim"] = gen.p_lim
    if gen.cei is not None:
        data["cei"] = asdict(gen.cei)
    if gen.turbine is not None:
        data["turbine"] = asdict(gen.turbine)
    if gen.weibull is not None:
        data["weibull"] = _weibull_to_dict(gen.weibull)
    if gen.beta is not None:
        data["beta"] = {"alpha": gen.beta.alpha, "beta": gen.beta.beta}
    return data


def network_from_dict(data) -> Network:
    """
    Converts the parsed JSON document into a Network.

    Raises:
        NetworkParseError: If a required field is missing or has the wrong type.
    """
    try:
        buses = tuple(
            Bus(
                id=str(b["id"]),
                kind=b["kind"],
                base_load_ref=_element_ref(b.get("base_load_ref")),
                ev_station_ref=_element_ref(b.get("ev_station_ref")),
            )
            for b in data["buses"]
        )
        branches = tuple(
            Branch(
                id=str(br["id"]),
                from_bus=str(br["from_bus"]),
                to_bus=str(br["to_bus"]),
                susceptance=float(br["susceptance"]),
                resistance=float(br.get("resistance", 0.0)),
                rating=None if br.get("rating") is None else float(br["rating"]),
            )
            for br in data["branches"]
        )
        generators = tuple(_generator_from_dict(g) for g in data["generators"])
        loads = tuple(
            LoadSpec(
                bus=str(l["bus"]),
                normal=NormalParams(float(l["normal"]["mu"]), float(l["normal"]["sigma"])),
            )
            for l in data.get("loads", [])
        )
        ev_stations = tuple(
            EvStationSpec(bus=str(ev["bus"]), weibull=_weibull_from_dict(ev["weibull"]))
            for ev in data.get("ev_stations", [])
        )
        return Network(
            buses=buses,
            branches=branches,
            generators=generators,
            loads=loads,
            ev_stations=ev_stations,
            penetration_target=float(data.get("penetration_target", 0.0)),
            base_mva=float(data.get("base_mva", 100.0)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise NetworkParseError(f"network document does not match the schema: {e!r}") from e


def network_to_dict(net: Network) -> dict:
    buses = []
    for bus in net.buses:
        entry = {"id": bus.id, "kind": bus.kind}
        if bus.base_load_ref is not None:
            entry["base_load_ref"] = bus.base_load_ref
        if bus.ev_station_ref is not None:
            entry["ev_station_ref"] = bus.ev_station_ref
        buses.append(entry)

    branches = []
    for br in net.branches:
        entry = {
            "id": br.id,
            "from_bus": br.from_bus,
            "to_bus": br.to_bus,
            "susceptance": br.susceptance,
            "resistance": br.resistance,
        }
        if br.rating is not None:
            entry["rating"] = br.rating
        branches.append(entry)

    return {
        "base_mva": net.base_mva,
        "penetration_target": net.penetration_target,
        "buses": buses,
        "branches": branches,
        "generators": [_generator_to_dict(g) for g in net.generators],
        "loads": [
            {"bus": l.bus, "normal": {"mu": l.normal.mu, "sigma": l.normal.sigma}}
            for l in net.loads
        ],
        "ev_stations": [
            {"bus": ev.bus, "weibull": _weibull_to_dict(ev.weibull)} for ev in net.ev_stations
        ],
    }


def load_network(path) -> Network:
    """
    Reads and validates a network file.

    Raises:
        NetworkParseError: File missing, not JSON, or not matching the schema.
        NetworkValidationError: Any invariant violated (all violations listed).
    """
    path = Path(path)
    if not path.is_file():
        raise NetworkParseError(f"network file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise NetworkParseError(f"{path}: malformed JSON ({e})") from e

    net = network_from_dict(data)
    violations = validate(net)
    if violations:
        raise NetworkValidationError(violations)
    logger.info(
        "loaded %s: %d buses, %d branches, %d generators",
        path,
        len(net.buses),
        len(net.branches),
        len(net.generators),
    )
    return net


def save_network(net: Network, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(network_to_dict(net), indent=2) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _positive(x) -> bool:
    return math.isfinite(x) and x > 0


def _non_negative(x) -> bool:
    return math.isfinite(x) and x >= 0


def _validate_generator(gen, bus_ids, out):
    if gen.bus not in bus_ids:
        out.append(Violation("unknown_bus", gen.id, f"generator on unknown bus '{gen.bus}'"))
    if gen.kind not in GENERATOR_KINDS:
        out.append(Violation("invalid_kind", gen.id, f"unknown generator kind '{gen.kind}'"))
        return
    if not _non_negative(gen.p_rate):
        out.append(Violation("invalid_parameter", gen.id, "rated output must be finite and >= 0"))
    if not math.isfinite(gen.intensity):
        out.append(Violation("invalid_parameter", gen.id, "fixed intensity must be finite"))
    elif gen.intensity < 0:
        out.append(Violation("negative_intensity", gen.id, "fixed intensity must be >= 0"))

    if gen.kind == "conventional":
        if gen.p_lim is None or gen.cei is None:
            out.append(
                Violation("missing_parameter", gen.id, "conventional unit needs p_lim and cei")
            )
            return
        if not _non_negative(gen.p_lim):
            out.append(Violation("invalid_parameter", gen.id, "p_lim must be finite and >= 0"))
        elif gen.p_rate > gen.p_lim:
            out.append(Violation("invalid_parameter", gen.id, "p_rate exceeds p_lim"))
        if not _non_negative(gen.participation_factor):
            out.append(
                Violation("invalid_parameter", gen.id, "participation factor must be finite and >= 0")
            )
        c = gen.cei
        if not all(math.isfinite(v) for v in astuple(c)):
            out.append(Violation("invalid_parameter", gen.id, "cei parameters must be finite"))
            return
        if c.p_rate > c.p_lim:
            out.append(Violation("invalid_parameter", gen.id, "cei p_rate exceeds p_lim"))
        # both segments are linear, so their endpoints bound them
        ends = [0.0, c.p_rate, c.p_lim]
        lower = piecewise_cei(ends[:2], c.a_down, c.b_down, c.a_over, c.b_over, c.p_rate)
        upper = [c.a_over + c.b_over * c.p_rate, c.a_over + c.b_over * c.p_lim]
        if min(lower.min(), *upper) < 0:
            out.append(
                Violation("negative_intensity", gen.id, "marginal intensity < 0 on (0, p_lim]")
            )
    elif gen.kind == "wind":
        if gen.turbine is None or gen.weibull is None:
            out.append(
                Violation("missing_parameter", gen.id, "wind farm needs turbine and weibull")
            )
            return
        t = gen.turbine
        if not (math.isfinite(t.v_out) and 0 <= t.v_in < t.v_rate < t.v_out):
            out.append(
                Violation("invalid_parameter", gen.id, "need 0 <= v_in < v_rate < v_out, all finite")
            )
        if t.p_rate != gen.p_rate:
            out.append(
                Violation("invalid_parameter", gen.id, "turbine p_rate differs from p_rate")
            )
        if not (_positive(gen.weibull.lam) and _positive(gen.weibull.k)):
            out.append(Violation("invalid_parameter", gen.id, "weibull lambda and k must be > 0"))
    elif gen.kind == "der_pv":
        if gen.beta is None:
            out.append(Violation("missing_parameter", gen.id, "DER-PV unit needs beta"))
        elif not (_positive(gen.beta.alpha) and _positive(gen.beta.beta)):
            out.append(Violation("invalid_parameter", gen.id, "beta alpha and beta must be > 0"))


def validate(net: Network) -> list[Violation]:
    """
    Checks every Network invariant.

    Returns:
        list[Violation]: Empty iff the network is valid; each violation names
        the offending element id.
    """
    out = []

    seen = set()
    for bus in net.buses:
        if bus.id in seen:
            out.append(Violation("duplicate_id", bus.id, "bus id used more than once"))
        seen.add(bus.id)
        if bus.kind not in BUS_KINDS:
            out.append(Violation("invalid_kind", bus.id, f"unknown bus kind '{bus.kind}'"))
        if bus.base_load_ref is not None and (
            not 0 <= bus.base_load_ref < len(net.loads)
            or net.loads[bus.base_load_ref].bus != bus.id
        ):
            out.append(Violation("dangling_reference", bus.id, "base_load_ref does not match"))
        if bus.ev_station_ref is not None and (
            not 0 <= bus.ev_station_ref < len(net.ev_stations)
            or net.ev_stations[bus.ev_station_ref].bus != bus.id
        ):
            out.append(Violation("dangling_reference", bus.id, "ev_station_ref does not match"))
    bus_ids = seen

    seen_branches = set()
    for br in net.branches:
        if br.id in seen_branches:
            out.append(Violation("duplicate_id", br.id, "branch id used more than once"))
        seen_branches.add(br.id)
        for end in (br.from_bus, br.to_bus):
            if end not in bus_ids:
                out.append(Violation("unknown_bus", br.id, f"branch references unknown bus '{end}'"))
        if br.from_bus == br.to_bus:
            out.append(Violation("self_loop", br.id, "from_bus equals to_bus"))
        if not _positive(br.susceptance):
            out.append(Violation("invalid_parameter", br.id, "susceptance must be finite and > 0"))
        if not _non_negative(br.resistance):
            out.append(Violation("invalid_parameter", br.id, "resistance must be finite and >= 0"))
        if br.rating is not None and not _positive(br.rating):
            out.append(Violation("invalid_parameter", br.id, "rating must be finite and > 0"))

    seen_gens = set()
    for gen in net.generators:
        if gen.id in seen_gens:
            out.append(Violation("duplicate_id", gen.id, "generator id used more than once"))
        seen_gens.add(gen.id)
        _validate_generator(gen, bus_ids, out)

    load_buses = set()
    for load in net.loads:
        if load.bus not in bus_ids:
            out.append(Violation("unknown_bus", load.bus, "load on unknown bus"))
        if load.bus in load_buses:
            out.append(Violation("duplicate_id", load.bus, "more than one load on bus"))
        load_buses.add(load.bus)
        if not (_non_negative(load.normal.mu) and _non_negative(load.normal.sigma)):
            out.append(Violation("invalid_parameter", load.bus, "load needs mu >= 0, sigma >= 0"))

    for ev in net.ev_stations:
        if ev.bus not in bus_ids:
            out.append(Violation("unknown_bus", ev.bus, "EV station on unknown bus"))
        if not (_positive(ev.weibull.lam) and _positive(ev.weibull.k)):
            out.append(Violation("invalid_parameter", ev.bus, "EV weibull needs lambda, k > 0"))

    if not 0 <= net.penetration_target < 1:
        out.append(Violation("invalid_parameter", "network", "penetration_target not in [0, 1)"))
    if not _positive(net.base_mva):
        out.append(Violation("invalid_parameter", "network", "base_mva must be finite and > 0"))

    slack = [b.id for b in net.buses if b.kind == "slack"]
    if len(slack) != 1:
        out.append(
            Violation("slack_count", "network", f"expected one slack bus, found {len(slack)}")
        )
    elif not any(g.bus == slack[0] and g.kind == "conventional" for g in net.generators):
        out.append(
            Violation("slack_without_generator", slack[0], "slack bus hosts no conventional unit")
        )

    G = build_graph(net)
    if G.number_of_nodes() and not nx.is_connected(G):
        components = sorted(nx.connected_components(G), key=len)
        stray = sorted(components[0], key=str)[0]
        out.append(Violation("disconnected", stray, "network graph is not connected"))

    for feeder in feeder_components(G):
        sub = nx.Graph(G.subgraph(feeder))
        if sub.number_of_edges() != G.subgraph(feeder).number_of_edges() or not nx.is_tree(sub):
            out.append(Violation("non_radial_feeder", feeder[0], "feeder contains a cycle"))
        members = set(feeder)
        attachments = [
            (u, v)
            for u, v in G.edges(feeder)
            if (u in members) != (v in members)
        ]
        if len(attachments) != 1:
            out.append(
                Violation(
                    "feeder_attachment",
                    feeder[0],
                    f"feeder attaches to the transmission level by {len(attachments)} branches",
                )
            )

    return out


# ---------------------------------------------------------------------------
# Penetration scaling
# ---------------------------------------------------------------------------


def with_penetration(net: Network, penetration: float, wind_capacity_cap=None) -> Network:
    """
    Rescales RES capacities so expected RES output / expected load = penetration.

    DER units keep their capacity while their expected output stays below the
    target and are derated proportionally otherwise; wind farms cover the rest,
    split by their current capacity shares (equal shares if all are zero).

    Raises:
        InfeasiblePenetrationError: Required wind capacity exceeds the cap
            (default: DEFAULT_WIND_CAPACITY_CAP times the expected load).
    """
    if not 0 <= penetration < 1:
        raise InfeasiblePenetrationError(f"penetration {penetration} not in [0, 1)")

    expected_load = net.expected_load()
    target = penetration * expected_load
    ders = [g for g in net.generators if g.kind == "der_pv"]
    winds = [g for g in net.generators if g.kind == "wind"]

    der_energy = sum(g.p_rate * g.beta.mean() for g in ders)
    der_scale = 1.0 if der_energy <= target else target / der_energy
    if der_scale < 1.0 and der_energy > 0:
        logger.warning(
            "DER expected output %.3f MW exceeds target %.3f MW; derating DERs by %.3f",
            der_energy,
            target,
            der_scale,
        )
    remaining = max(target - der_energy * der_scale, 0.0)

    weights = {}
    if winds:
        total_rate = sum(g.p_rate for g in winds)
        for g in winds:
            weights[g.id] = g.p_rate / total_rate if total_rate > 0 else 1.0 / len(winds)
    unit_energy = sum(
        weights[g.id] * expected_wind_power(replace(g.turbine, p_rate=1.0), g.weibull)
        for g in winds
    )

    if remaining > 0 and unit_energy <= 0:
        raise InfeasiblePenetrationError(
            f"penetration {penetration} needs wind output but no wind farm can produce it"
        )
    wind_total = remaining / unit_energy if remaining > 0 else 0.0
    cap = (
        DEFAULT_WIND_CAPACITY_CAP * expected_load
        if wind_capacity_cap is None
        else wind_capacity_cap
    )
    if wind_total > cap:
        raise InfeasiblePenetrationError(
            f"penetration {penetration} needs {wind_total:.1f} MW of wind capacity, "
            f"above the cap of {cap:.1f} MW"
        )

    generators = []
    for g in net.generators:
        if g.kind == "der_pv":
            g = replace(g, p_rate=g.p_rate * der_scale)
        elif g.kind == "wind":
            rate = wind_total * weights[g.id]
            g = replace(g, p_rate=rate, turbine=replace(g.turbine, p_rate=rate))
        generators.append(g)

    return replace(net, generators=tuple(generators), penetration_target=penetration)
