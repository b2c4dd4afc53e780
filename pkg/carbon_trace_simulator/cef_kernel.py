"""
Carbon emission flow on a directed flow graph.

A bus mixes the power it receives (local generation plus branch inflows)
and every outflow carries the mixed intensity. Units: MW, tCO2/MWh, tCO2/h.
"""

import logging
from dataclasses import dataclass, field, replace

import networkx as nx
import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .dispatch_powerflow import FLOW_EPSILON, flow_signature
from .errors import ModelingError, NumericalError, UnknownGeneratorError

logger = logging.getLogger(__name__)

BALANCE_TOLERANCE = 1e-6
SOLVE_METHODS = ("auto", "sweep", "linear")


@dataclass(frozen=True)
class CarbonSolution:
    node_ids: tuple
    bus_intensity: np.ndarray
    consumption: np.ndarray
    branch_ids: tuple
    branch_sender: np.ndarray
    branch_loss: np.ndarray
    generator_ids: tuple
    generator_output: np.ndarray
    generator_intensity: np.ndarray
    internal_loss: np.ndarray
    method: str = "sweep"
    load_rate: np.ndarray | None = None
    loss_rate: np.ndarray | None = None
    internal_loss_rate: np.ndarray | None = None
    generator_rate: np.ndarray | None = None

    @property
    def branch_intensity(self) -> np.ndarray:
        """An edge carries its sending bus's intensity."""
        return self.bus_intensity[self.branch_sender]

    def intensity(self, bus_id) -> float:
        return float(self.bus_intensity[self.node_ids.index(bus_id)])

    def intensities(self) -> dict:
        return dict(zip(self.node_ids, self.bus_intensity.tolist()))

    def total_generation_rate(self) -> float:
        return float(self.generator_rate.sum())

    def total_load_rate(self) -> float:
        return float(self.load_rate.sum())

    def total_loss_rate(self) -> float:
        return float(self.loss_rate.sum() + self.internal_loss_rate.sum())

    def conservation_error(self) -> float:
        """Relative gap between generator emissions and load plus loss emissions."""
        generated = self.total_generation_rate()
        gap = abs(generated - self.total_load_rate() - self.total_loss_rate())
        return gap / generated if generated > 0 else gap


@dataclass(frozen=True)
class Responsibility:
    """Emissions of one generator traced to the loads and losses it supplies."""

    generator_id: str
    generator_intensity: float
    generator_rate: float
    node_ids: tuple
    share: np.ndarray
    delivered: np.ndarray
    load_rate: np.ndarray
    branch_ids: tuple
    loss_rate: np.ndarray
    internal_loss_rate: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def total(self) -> float:
        return float(self.load_rate.sum() + self.loss_rate.sum() + self.internal_loss_rate.sum())


def build_flow_graph(flow, d, model) -> nx.MultiDiGraph:
    """
    Orients every branch along its flow and attaches generation and demand.

    Node attributes: `kind`, `consumption` (MW), `injections` (list of
    (generator id, MW, tCO2/MWh)), `internal_loss` and `stray` (MW leaving
    through branches too small to keep). Edge attributes: `flow` (receiving
    end MW) and `loss` (MW); edges are keyed by branch id.

    Raises:
        NumericalError: A bus whose balance is off by more than 1e-6 MW.
    """
    g = nx.MultiDiGraph(signature=flow_signature(model, flow.p_send, FLOW_EPSILON))
    for i, bus_id in enumerate(model.bus_ids):
        g.add_node(
            bus_id,
            kind=model.bus_kind[i],
            consumption=float(d.bus_consumption[i]),
            injections=[],
            internal_loss=0.0,
            stray=0.0,
        )
    for k, gen_id in enumerate(d.generator_ids):
        g.nodes[model.bus_ids[model.gen_bus[k]]]["injections"].append(
            (gen_id, float(d.output[k]), float(d.intensity[k]))
        )

    out_from, out_to = flow.end_contributions()
    for k, branch_id in enumerate(model.branch_ids):
        u = model.bus_ids[model.from_idx[k]]
        v = model.bus_ids[model.to_idx[k]]
        p = flow.p_send[k]
        if abs(p) < FLOW_EPSILON:
            g.nodes[u]["stray"] += float(out_from[k])
            g.nodes[v]["stray"] += float(out_to[k])
            continue
        if p < 0:
            u, v = v, u
        g.add_edge(u, v, key=branch_id, flow=float(abs(flow.p_recv[k])), loss=float(flow.loss[k]))

    check_balance(g)
    return g


def check_balance(g):
    for node, attrs in g.nodes(data=True):
        supply = sum(p for _, p, _ in attrs["injections"])
        supply += sum(w for _, _, w in g.in_edges(node, data="flow"))
        demand = attrs["consumption"] + attrs["internal_loss"] + attrs["stray"]
        demand += sum(a["flow"] + a["loss"] for _, _, a in g.out_edges(node, data=True))
        if abs(supply - demand) > BALANCE_TOLERANCE:
            raise NumericalError(
                f"bus '{node}' is out of balance by {supply - demand:.3e} MW"
            )


def _generator_terms(g, generator_intensity):
    """Per-node (MW, tCO2/h) of local generation, honoring intensity overrides."""
    power = []
    emission = []
    for _, injections in g.nodes(data="injections"):
        p_sum = 0.0
        e_sum = 0.0
        for gen_id, p, e in injections:
            if generator_intensity is not None:
                e = generator_intensity.get(gen_id, 0.0)
            p_sum += p
            e_sum += p * e
        power.append(p_sum)
        emission.append(e_sum)
    return np.array(power), np.array(emission)


def _zero_throughput(node, consumption):
    if consumption > 0:
        raise ModelingError(f"bus '{node}' consumes power but no generation reaches it")
    return 0.0


def solve_linear_system(n, throughput, gen_emission, src, dst, weight, consumption, node_ids):
    """
    Solves T_i e_i - sum_{j->i} w_ji e_j = E_i for every node.

    Nodes without throughput get e = 0 (or a ModelingError if they consume).

    Raises:
        NumericalError: Singular or non-finite system.
    """
    idle = throughput <= 0
    for i in np.flatnonzero(idle):
        _zero_throughput(node_ids[i], consumption[i])

    diag = np.where(idle, 1.0, throughput)
    keep = ~idle[dst]
    A = sparse.coo_matrix(
        (
            np.concatenate([diag, -np.asarray(weight, dtype=float)[keep]]),
            (
                np.concatenate([np.arange(n), np.asarray(dst)[keep]]),
                np.concatenate([np.arange(n), np.asarray(src)[keep]]),
            ),
        ),
        shape=(n, n),
    ).tocsc()
    rhs = np.where(idle, 0.0, gen_emission)
    with np.errstate(all="ignore"):
        try:
            e = np.atleast_1d(spsolve(A, rhs))
        except RuntimeError as err:
            raise NumericalError(f"carbon intensity system is singular: {err}") from err
    if not np.all(np.isfinite(e)):
        raise NumericalError("carbon intensity system is singular")
    return e


def solve_intensities(g, method="auto", generator_intensity=None) -> CarbonSolution:
    """
    Bus carbon intensities of a flow graph.

    Args:
        g: Flow graph from build_flow_graph (or an aggregated graph).
        method: "sweep" (topological order, acyclic graphs only), "linear"
            (sparse solve, any graph) or "auto".
        generator_intensity: Optional {generator id: intensity} replacing the
            dispatched intensities; generators not listed count as 0.

    Returns:
        CarbonSolution: Intensities only; rates are filled by allocate_emissions.

    Raises:
        ModelingError: A consuming bus that no generation reaches.
        NumericalError: Singular linear system.
    """
    if method not in SOLVE_METHODS:
        raise ValueError(f"unknown solve method '{method}'")

    node_ids = tuple(g.nodes)
    index = {node: i for i, node in enumerate(node_ids)}
    n = len(node_ids)
    gen_power, gen_emission = _generator_terms(g, generator_intensity)
    consumption = np.array([c for _, c in g.nodes(data="consumption")])

    edges = list(g.edges(keys=True, data=True))
    src = np.array([index[u] for u, _, _, _ in edges], dtype=np.intp)
    dst = np.array([index[v] for _, v, _, _ in edges], dtype=np.intp)
    weight = np.array([a["flow"] for _, _, _, a in edges])
    throughput = gen_power + np.bincount(dst, weights=weight, minlength=n)

    if method == "auto":
        method = "sweep" if nx.is_directed_acyclic_graph(g) else "linear"
    logger.debug("solving %d-node flow graph by %s", n, method)

    if method == "sweep":
        if not nx.is_directed_acyclic_graph(g):
            raise ValueError("sweep needs an acyclic flow graph")
        e = np.zeros(n)
        for node in nx.topological_sort(g):
            i = index[node]
            if throughput[i] <= 0:
                e[i] = _zero_throughput(node, consumption[i])
                continue
            mixed = gen_emission[i]
            for u, _, w in g.in_edges(node, data="flow"):
                mixed += w * e[index[u]]
            e[i] = mixed / throughput[i]
    else:
        e = solve_linear_system(
            n, throughput, gen_emission, src, dst, weight, consumption, node_ids
        )

    generator_ids = []
    generator_output = []
    generator_intensity_out = []
    for _, injections in g.nodes(data="injections"):
        for gen_id, p, intensity in injections:
            generator_ids.append(gen_id)
            generator_output.append(p)
            generator_intensity_out.append(intensity)

    return CarbonSolution(
        node_ids=node_ids,
        bus_intensity=e,
        consumption=consumption,
        branch_ids=tuple(k for _, _, k, _ in edges),
        branch_sender=src,
        branch_loss=np.array([a["loss"] for _, _, _, a in edges]),
        generator_ids=tuple(generator_ids),
        generator_output=np.array(generator_output),
        generator_intensity=np.array(generator_intensity_out),
        internal_loss=np.array([l for _, l in g.nodes(data="internal_loss")]),
        method=method,
    )


def allocate_emissions(sol: CarbonSolution) -> CarbonSolution:
    """
    Emission rates (tCO2/h): loads at their bus intensity, branch losses at
    the sending bus intensity, generators at their own intensity.
    """
    e = sol.bus_intensity
    return replace(
        sol,
        load_rate=sol.consumption * e,
        loss_rate=sol.branch_loss * e[sol.branch_sender],
        internal_loss_rate=sol.internal_loss * e,
        generator_rate=sol.generator_output * sol.generator_intensity,
    )


def trace_flow_graph(g, method="auto") -> CarbonSolution:
    return allocate_emissions(solve_intensities(g, method))


def trace_generator_responsibility(g, gen_id, method="auto") -> Responsibility:
    """
    Share of every bus's power that originates at one generator, and the
    part of that generator's emissions each load and loss is responsible for.

    Raises:
        UnknownGeneratorError: No generator with that id in the graph.
    """
    actual = None
    output = 0.0
    for _, injections in g.nodes(data="injections"):
        for other_id, p, intensity in injections:
            if other_id == gen_id:
                actual, output = intensity, p
    if actual is None:
        raise UnknownGeneratorError(f"unknown generator '{gen_id}'")

    sol = solve_intensities(g, method, generator_intensity={gen_id: 1.0})
    return responsibility_from_shares(sol, gen_id, actual, output)


def responsibility_from_shares(sol: CarbonSolution, gen_id, intensity, output) -> Responsibility:
    share = sol.bus_intensity
    return Responsibility(
        generator_id=gen_id,
        generator_intensity=intensity,
        generator_rate=output * intensity,
        node_ids=sol.node_ids,
        share=share,
        delivered=sol.consumption * share,
        load_rate=sol.consumption * share * intensity,
        branch_ids=sol.branch_ids,
        loss_rate=sol.branch_loss * share[sol.branch_sender] * intensity,
        internal_loss_rate=sol.internal_loss * share * intensity,
    )
