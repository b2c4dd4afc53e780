"""
Virtual-bus contraction of a flow graph.

A virtual bus is a start bus plus every bus it alone feeds downstream; all
of its members share one carbon intensity, so the intensity solve can run on
the contracted graph and be copied back exactly.

Partitions depend only on the flow direction of the branches touching a
contractible bus, so they are cached by that signature and reused for every
scenario with the same orientation.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass

import networkx as nx
import numpy as np

from .cef_kernel import (
    FLOW_EPSILON,
    CarbonSolution,
    allocate_emissions,
    build_flow_graph,
    solve_linear_system,
)
from .dispatch_powerflow import flow_signature
from .errors import ModelingError, StalePartitionError

logger = logging.getLogger(__name__)

STAND_ALONE_KINDS = ("transmission", "slack")


@dataclass(frozen=True)
class VirtualBusPartition:
    """
    Virtual bus ids are the ids of their start buses. `members` lists each
    block in flow-graph node order, start bus first.
    """

    starts: tuple
    bus_to_virtual: dict
    members: dict
    internal_branches: frozenset
    signature: str

    @property
    def n_virtual(self) -> int:
        return len(self.starts)

    def rows(self):
        """(bus_id, virtual_bus_id, is_start) for every bus."""
        return [
            (bus, virtual, bus == virtual) for bus, virtual in self.bus_to_virtual.items()
        ]


@dataclass(frozen=True)
class AggregatedNetwork:
    """
    The contracted network of one scenario, plus what expansion needs to map
    results back onto the original buses and branches.
    """

    signature: str
    block_ids: tuple
    block_kind: tuple
    block_consumption: np.ndarray
    block_internal_loss: np.ndarray
    block_stray: np.ndarray
    edge_ids: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_flow: np.ndarray
    edge_loss: np.ndarray
    generator_ids: tuple
    gen_block: np.ndarray
    generator_output: np.ndarray
    generator_intensity: np.ndarray
    # original network
    node_ids: tuple
    bus_block: np.ndarray
    consumption: np.ndarray
    internal_loss: np.ndarray
    branch_ids: np.ndarray
    branch_sender: np.ndarray
    branch_loss: np.ndarray

    def totals(self) -> dict:
        return {
            "consumption": float(self.block_consumption.sum()),
            "generation": float(self.generator_output.sum()),
            "loss": float(self.block_internal_loss.sum() + self.edge_loss.sum()),
        }

    def to_flow_graph(self) -> nx.MultiDiGraph:
        """The contracted network as a flow graph with the usual attributes."""
        g = nx.MultiDiGraph(signature=self.signature)
        for b, block in enumerate(self.block_ids):
            g.add_node(
                block,
                kind=self.block_kind[b],
                consumption=float(self.block_consumption[b]),
                injections=[],
                internal_loss=float(self.block_internal_loss[b]),
                stray=float(self.block_stray[b]),
            )
        for k, gen_id in enumerate(self.generator_ids):
            g.nodes[self.block_ids[self.gen_block[k]]]["injections"].append(
                (gen_id, float(self.generator_output[k]), float(self.generator_intensity[k]))
            )
        for k, edge_id in enumerate(self.edge_ids):
            g.add_edge(
                self.block_ids[self.edge_src[k]],
                self.block_ids[self.edge_dst[k]],
                key=edge_id,
                flow=float(self.edge_flow[k]),
                loss=float(self.edge_loss[k]),
            )
        return g


def find_start_buses(g) -> set:
    """
    Buses that begin a virtual bus: any bus with a generator (even idle), a
    bus with in-degree 0 or >= 2, every transmission or slack bus, and each
    feeder head (a distribution bus fed by a transmission bus).
    """
    starts = set()
    for node, attrs in g.nodes(data=True):
        in_degree = g.in_degree(node)
        if attrs["injections"] or in_degree != 1 or attrs["kind"] in STAND_ALONE_KINDS:
            starts.add(node)
            continue
        (upstream,) = g.predecessors(node)
        if g.nodes[upstream]["kind"] == "transmission":
            starts.add(node)
    return starts


def _assign_blocks(g, starts):
    owner = {s: s for s in starts}
    for node in g.nodes:
        path = []
        current = node
        while current not in owner:
            if current in path:
                raise ModelingError(f"bus '{node}' has no path to a start bus")
            path.append(current)
            (current,) = g.predecessors(current)
        for bus in path:
            owner[bus] = owner[current]
    return owner


def _verify_partition(g, partition):
    for start, members in partition.members.items():
        block = set(members)
        for bus in members[1:]:
            (upstream,) = g.predecessors(bus)
            if upstream not in block or g.nodes[bus]["injections"]:
                raise ModelingError(f"virtual bus '{start}' is not a feeder subtree at '{bus}'")
    covered = sum(len(m) for m in partition.members.values())
    if covered != g.number_of_nodes():
        raise ModelingError("virtual buses do not cover the network exactly once")


def decompose(g):
    """
    Contracts a flow graph into virtual buses.

    Returns:
        tuple: (VirtualBusPartition, AggregatedNetwork).

    Raises:
        ModelingError: A bus with no path back to a start bus.
    """
    starts_set = find_start_buses(g)
    starts = tuple(node for node in g.nodes if node in starts_set)
    owner = _assign_blocks(g, starts_set)

    members = {s: [s] for s in starts}
    for node in g.nodes:
        if node not in starts_set:
            members[owner[node]].append(node)

    internal = frozenset(
        key for u, v, key in g.edges(keys=True) if v not in starts_set
    )
    partition = VirtualBusPartition(
        starts=starts,
        bus_to_virtual={node: owner[node] for node in g.nodes},
        members={s: tuple(m) for s, m in members.items()},
        internal_branches=internal,
        signature=g.graph.get("signature", ""),
    )
    _verify_partition(g, partition)

    aggregated = _aggregate_graph(g, partition)
    logger.info("decomposed %d buses into %d virtual buses", g.number_of_nodes(), len(starts))
    return partition, aggregated


def _aggregate_graph(g, partition):
    node_ids = tuple(g.nodes)
    index = {node: i for i, node in enumerate(node_ids)}
    block_pos = {s: b for b, s in enumerate(partition.starts)}
    bus_block = np.array([block_pos[partition.bus_to_virtual[n]] for n in node_ids], dtype=np.intp)
    n_blocks = len(partition.starts)

    consumption = np.array([c for _, c in g.nodes(data="consumption")])
    internal_loss = np.array([l for _, l in g.nodes(data="internal_loss")])
    stray = np.array([s for _, s in g.nodes(data="stray")])

    edges = list(g.edges(keys=True, data=True))
    sender = np.array([index[u] for u, _, _, _ in edges], dtype=np.intp)
    receiver = np.array([index[v] for _, v, _, _ in edges], dtype=np.intp)
    flow = np.array([a["flow"] for _, _, _, a in edges])
    loss = np.array([a["loss"] for _, _, _, a in edges])
    is_internal = np.array([k in partition.internal_branches for _, _, k, _ in edges], dtype=bool)

    generator_ids = []
    gen_bus = []
    output = []
    intensity = []
    for node, injections in g.nodes(data="injections"):
        for gen_id, p, e in injections:
            generator_ids.append(gen_id)
            gen_bus.append(index[node])
            output.append(p)
            intensity.append(e)

    inter = ~is_internal
    edge_ids = np.array([k for _, _, k, _ in edges], dtype=object)
    return AggregatedNetwork(
        signature=partition.signature,
        block_ids=partition.starts,
        block_kind=tuple(g.nodes[s]["kind"] for s in partition.starts),
        block_consumption=np.bincount(bus_block, weights=consumption, minlength=n_blocks),
        block_internal_loss=np.bincount(bus_block, weights=internal_loss, minlength=n_blocks)
        + np.bincount(bus_block[sender[is_internal]], weights=loss[is_internal], minlength=n_blocks),
        block_stray=np.bincount(bus_block, weights=stray, minlength=n_blocks),
        edge_ids=edge_ids[inter],
        edge_src=bus_block[sender[inter]],
        edge_dst=bus_block[receiver[inter]],
        edge_flow=flow[inter],
        edge_loss=loss[inter],
        generator_ids=tuple(generator_ids),
        gen_block=bus_block[np.array(gen_bus, dtype=np.intp)],
        generator_output=np.array(output),
        generator_intensity=np.array(intensity),
        node_ids=node_ids,
        bus_block=bus_block,
        consumption=consumption,
        internal_loss=internal_loss,
        branch_ids=edge_ids,
        branch_sender=sender,
        branch_loss=loss,
    )


@dataclass(frozen=True)
class CompiledPartition:
    """A partition laid out on GridModel indices for the array aggregation path."""

    partition: VirtualBusPartition
    bus_block: np.ndarray
    internal: np.ndarray
    block_kind: tuple

    @classmethod
    def compile(cls, partition: VirtualBusPartition, model) -> "CompiledPartition":
        block_pos = {s: b for b, s in enumerate(partition.starts)}
        bus_block = np.array(
            [block_pos[partition.bus_to_virtual[bus]] for bus in model.bus_ids], dtype=np.intp
        )
        internal = np.array([k in partition.internal_branches for k in model.branch_ids], dtype=bool)
        kinds = tuple(model.bus_kind[model.bus_index[s]] for s in partition.starts)
        return cls(partition, bus_block, internal, kinds)


def aggregate(compiled: CompiledPartition, model, flow, d) -> AggregatedNetwork:
    """
    Contracts one scenario's flows onto a cached partition without building
    a flow graph. The result carries the scenario's own signature, so
    expand_solution rejects it if the partition no longer applies.
    """
    partition = compiled.partition
    n_blocks = partition.n_virtual
    bus_block = compiled.bus_block

    p = flow.p_send
    flowing = np.abs(p) >= FLOW_EPSILON
    forward = p > 0
    sender = np.where(forward, model.from_idx, model.to_idx)
    receiver = np.where(forward, model.to_idx, model.from_idx)

    internal = compiled.internal & flowing
    inter = flowing & ~compiled.internal
    omitted = ~flowing

    out_from, out_to = flow.end_contributions()
    stray = np.bincount(
        bus_block[model.from_idx[omitted]], weights=out_from[omitted], minlength=n_blocks
    ) + np.bincount(bus_block[model.to_idx[omitted]], weights=out_to[omitted], minlength=n_blocks)

    order = model.gen_order
    return AggregatedNetwork(
        signature=flow_signature(model, p, FLOW_EPSILON),
        block_ids=partition.starts,
        block_kind=compiled.block_kind,
        block_consumption=np.bincount(bus_block, weights=d.bus_consumption, minlength=n_blocks),
        block_internal_loss=np.bincount(
            bus_block[sender[internal]], weights=flow.loss[internal], minlength=n_blocks
        ),
        block_stray=stray,
        edge_ids=model.branch_id_array[inter],
        edge_src=bus_block[sender[inter]],
        edge_dst=bus_block[receiver[inter]],
        edge_flow=np.abs(flow.p_recv[inter]),
        edge_loss=flow.loss[inter],
        generator_ids=tuple(d.generator_ids[k] for k in order),
        gen_block=bus_block[model.gen_bus[order]],
        generator_output=d.output[order],
        generator_intensity=d.intensity[order],
        node_ids=model.bus_ids,
        bus_block=bus_block,
        consumption=d.bus_consumption,
        internal_loss=np.zeros(model.n_bus),
        branch_ids=model.branch_id_array[flowing],
        branch_sender=sender[flowing],
        branch_loss=flow.loss[flowing],
    )


def solve_aggregated(agg: AggregatedNetwork, generator_intensity=None) -> CarbonSolution:
    """
    Intensities of the virtual buses.

    Args:
        generator_intensity: Optional {generator id: intensity} override, as
            in solve_intensities.
    """
    n = len(agg.block_ids)
    intensity = agg.generator_intensity
    if generator_intensity is not None:
        intensity = np.array([generator_intensity.get(g, 0.0) for g in agg.generator_ids])
    gen_power = np.bincount(agg.gen_block, weights=agg.generator_output, minlength=n)
    gen_emission = np.bincount(
        agg.gen_block, weights=agg.generator_output * intensity, minlength=n
    )
    throughput = gen_power + np.bincount(agg.edge_dst, weights=agg.edge_flow, minlength=n)
    e = solve_linear_system(
        n,
        throughput,
        gen_emission,
        agg.edge_src,
        agg.edge_dst,
        agg.edge_flow,
        agg.block_consumption,
        agg.block_ids,
    )
    return CarbonSolution(
        node_ids=agg.block_ids,
        bus_intensity=e,
        consumption=agg.block_consumption,
        branch_ids=agg.edge_ids,
        branch_sender=agg.edge_src,
        branch_loss=agg.edge_loss,
        generator_ids=agg.generator_ids,
        generator_output=agg.generator_output,
        generator_intensity=agg.generator_intensity,
        internal_loss=agg.block_internal_loss,
        method="linear",
    )


def expand_solution(
    agg_sol: CarbonSolution, partition: VirtualBusPartition, aggregated: AggregatedNetwork
) -> CarbonSolution:
    """
    Copies each virtual bus's intensity to its members and recomputes the
    emission rates on the original buses and branches.

    Raises:
        StalePartitionError: The aggregated scenario's flow directions differ
            from those the partition was built for.
    """
    if aggregated.signature != partition.signature:
        raise StalePartitionError(
            "flow directions changed since the partition was built; decompose again"
        )
    if tuple(agg_sol.node_ids) != tuple(partition.starts):
        raise StalePartitionError("solution does not belong to this partition")

    e = agg_sol.bus_intensity[aggregated.bus_block]
    expanded = CarbonSolution(
        node_ids=aggregated.node_ids,
        bus_intensity=e,
        consumption=aggregated.consumption,
        branch_ids=aggregated.branch_ids,
        branch_sender=aggregated.branch_sender,
        branch_loss=aggregated.branch_loss,
        generator_ids=aggregated.generator_ids,
        generator_output=aggregated.generator_output,
        generator_intensity=aggregated.generator_intensity,
        internal_loss=aggregated.internal_loss,
        method=agg_sol.method,
    )
    return allocate_emissions(expanded)


class PartitionCache:
    """Least-recently-used store of compiled partitions keyed by signature."""

    def __init__(self, model, maxsize=64):
        self.model = model
        self.maxsize = maxsize
        self.hits = 0
        self.misses = 0
        # signatures looked up since the caller last cleared it
        self.used = set()
        self._entries = OrderedDict()

    def __len__(self):
        return len(self._entries)

    def lookup(self, flow, d) -> CompiledPartition:
        signature = flow_signature(self.model, flow.p_send, FLOW_EPSILON)
        self.used.add(signature)
        entry = self._entries.get(signature)
        if entry is not None:
            self.hits += 1
            self._entries.move_to_end(signature)
            return entry

        self.misses += 1
        logger.debug("partition cache miss (%d cached)", len(self._entries))
        partition, _ = decompose(build_flow_graph(flow, d, self.model))
        entry = CompiledPartition.compile(partition, self.model)
        self._entries[signature] = entry
        if len(self._entries) > self.maxsize:
            self._entries.popitem(last=False)
        return entry


def trace_virtual(model, flow, d, cache: PartitionCache, generator_intensity=None):
    """
    Per-bus carbon solution of one scenario through the contracted network.

    With `generator_intensity` the expanded intensities are shares (see
    trace_generator_responsibility).
    """
    compiled = cache.lookup(flow, d)
    aggregated = aggregate(compiled, model, flow, d)
    return expand_solution(
        solve_aggregated(aggregated, generator_intensity), compiled.partition, aggregated
    )
