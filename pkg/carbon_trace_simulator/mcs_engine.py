"""
Monte Carlo orchestration: sample -> dispatch -> flow -> carbon trace, with
streaming statistics per tracked component.

Scenarios are split into fixed-size chunks by index. Each chunk gets its own
accumulator and chunks are merged in index order, so the statistics do not
depend on how many worker processes ran them.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cef_kernel import (
    build_flow_graph,
    responsibility_from_shares,
    trace_flow_graph,
    trace_generator_responsibility,
)
from .dispatch_powerflow import (
    GridModel,
    ScenarioSample,
    dispatch,
    load_flow_csv,
    settle_slack,
    solve_flow,
)
from .errors import (
    CarbonTraceError,
    InputError,
    NumericalError,
    ScenarioError,
    UnknownGeneratorError,
)
from .network_model import Network, with_penetration
from .stats import DEFAULT_BINS, StatsAccumulator, pilot_range
from .stochastic_models import (
    RngStream,
    der_factor_quantile,
    truncated_normal_quantile,
    weibull_quantile,
)
from .virtual_bus import PartitionCache, decompose, trace_virtual

logger = logging.getLogger(__name__)

MODES = ("full", "virtual")
TRACK_GROUPS = ("total", "losses", "loads", "ev", "generators", "intensities")
DEFAULT_TRACK = ("total", "losses", "loads", "ev", "generators")
CONSERVATION_TOLERANCE = 1e-9


@dataclass(frozen=True)
class RunConfig:
    samples: int = 1000
    seed: int = 0
    mode: str = "virtual"
    penetrations: tuple[float, ...] | None = None
    track: tuple[str, ...] = DEFAULT_TRACK
    bins: int = DEFAULT_BINS
    pilot_samples: int = 1000
    workers: int = 1
    skip_failures: bool = False
    cei_policy: str = "marginal"
    chunk_size: int = 250

    def __post_init__(self):
        if self.samples < 1:
            raise InputError(f"samples must be >= 1, got {self.samples}")
        if self.bins < 2:
            raise InputError(f"bins must be >= 2, got {self.bins}")
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.cei_policy not in ("marginal", "average"):
            raise InputError(f"unknown cei policy '{self.cei_policy}'")
        unknown = set(self.track) - set(TRACK_GROUPS)
        if unknown:
            raise InputError(f"unknown tracked groups {sorted(unknown)}")
        if self.workers < 1 or self.chunk_size < 1 or self.pilot_samples < 1:
            raise InputError("workers, chunk_size and pilot_samples must be >= 1")
        for p in self.penetrations or ():
            if not 0 <= p < 1:
                raise InputError(f"penetration {p} not in [0, 1)")


@dataclass
class LevelResult:
    penetration: float
    accumulator: StatsAccumulator
    failed: list[int] = field(default_factory=list)
    loop_seconds: float = 0.0
    partitions: int = 0


@dataclass
class ResultSet:
    config: RunConfig
    components: tuple[str, ...]
    levels: list[LevelResult]
    wall_seconds: float = 0.0

    def level(self, penetration) -> LevelResult:
        return next(l for l in self.levels if l.penetration == penetration)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _as_model(net_or_model) -> GridModel:
    return net_or_model if isinstance(net_or_model, GridModel) else GridModel(net_or_model)


def sample_scenario(net_or_model, idx: int, seed: int) -> ScenarioSample:
    """
    One draw of every stochastic element from stream (seed, idx).

    Uniforms are always consumed in the same order (wind, DER, base load
    pairs, EV) so a scenario never depends on any other.
    """
    model = _as_model(net_or_model)
    rng = RngStream(seed, idx)
    u_wind = rng.uniform(len(model.wind))
    u_der = rng.uniform(len(model.der))
    u_load = rng.uniform((2, len(model.load_bus)))
    u_ev = rng.uniform(len(model.ev_bus))

    return ScenarioSample(
        index=idx,
        wind_speed=weibull_quantile(u_wind, model.wind_weibull[:, 0], model.wind_weibull[:, 1]),
        der_factor=der_factor_quantile(u_der, model.der_beta[:, 0], model.der_beta[:, 1]),
        base_load=truncated_normal_quantile(
            u_load[0], u_load[1], model.load_normal[:, 0], model.load_normal[:, 1]
        ),
        ev_demand=weibull_quantile(u_ev, model.ev_weibull[:, 0], model.ev_weibull[:, 1]),
    )


def expected_scenario(net_or_model, idx: int = -1) -> ScenarioSample:
    """Every stochastic input at its mean."""
    model = _as_model(net_or_model)
    net = model.net
    return ScenarioSample(
        index=idx,
        wind_speed=np.array([net.generators[k].weibull.mean() for k in model.wind]),
        der_factor=np.array([net.generators[k].beta.mean() for k in model.der]),
        base_load=model.load_normal[:, 0].copy(),
        ev_demand=np.array([ev.weibull.mean() for ev in net.ev_stations]),
    )


# ---------------------------------------------------------------------------
# Scenario evaluation
# ---------------------------------------------------------------------------


def tracked_components(model: GridModel, track=DEFAULT_TRACK) -> tuple[str, ...]:
    components = []
    if "total" in track:
        components.append("total")
    if "losses" in track:
        components.append("losses")
    if "loads" in track:
        components += [f"load:{model.bus_ids[i]}" for i in model.load_bus]
    if "ev" in track:
        components += [f"ev:{model.bus_ids[i]}" for i in model.ev_bus]
    if "generators" in track:
        components += [f"gen:{g}" for g in model.generator_ids]
    if "intensities" in track:
        components += [f"intensity:{b}" for b in model.bus_ids]
    return tuple(components)


class ScenarioRunner:
    """Evaluates scenarios of one network in one process."""

    def __init__(self, net: Network, mode="virtual", cei_policy="marginal", track=DEFAULT_TRACK):
        if mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got '{mode}'")
        self.model = GridModel(net)
        self.mode = mode
        self.cei_policy = cei_policy
        self.track = tuple(track)
        self.components = tracked_components(self.model, self.track)
        self.cache = PartitionCache(self.model) if mode == "virtual" else None

    def serves(self, net, mode, cei_policy, track) -> bool:
        return (
            self.model.net is net
            and self.mode == mode
            and self.cei_policy == cei_policy
            and self.track == tuple(track)
        )

    def flows(self, s: ScenarioSample):
        d = dispatch(self.model, s, self.cei_policy)
        return solve_flow(self.model, d, self.cei_policy)

    def solve(self, s: ScenarioSample):
        """Carbon solution (rates filled) of one scenario on the original buses."""
        flow, d = self.flows(s)
        if self.mode == "virtual":
            sol = trace_virtual(self.model, flow, d, self.cache)
        else:
            g = build_flow_graph(flow, d, self.model)
            sol = trace_flow_graph(g)
        error = sol.conservation_error()
        if error > CONSERVATION_TOLERANCE:
            raise NumericalError(f"emission conservation violated (relative error {error:.2e})")
        return sol

    def rates(self, s: ScenarioSample, sol=None) -> np.ndarray:
        sol = sol if sol is not None else self.solve(s)
        model = self.model
        e = sol.bus_intensity
        parts = []
        if "total" in self.track:
            parts.append([sol.total_generation_rate()])
        if "losses" in self.track:
            parts.append([sol.total_loss_rate()])
        if "loads" in self.track:
            parts.append(s.base_load * e[model.load_bus])
        if "ev" in self.track:
            parts.append(s.ev_demand * e[model.ev_bus])
        if "generators" in self.track:
            by_model = np.empty(len(model.generator_ids))
            by_model[model.gen_order] = sol.generator_rate
            parts.append(by_model)
        if "intensities" in self.track:
            parts.append(e)
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def responsibility(self, s: ScenarioSample, gen_id: str):
        flow, d = self.flows(s)
        k = self.model.generator_index[gen_id]
        if self.mode == "virtual":
            shares = trace_virtual(self.model, flow, d, self.cache, generator_intensity={gen_id: 1.0})
            return responsibility_from_shares(
                shares, gen_id, float(d.intensity[k]), float(d.output[k])
            )
        return trace_generator_responsibility(build_flow_graph(flow, d, self.model), gen_id)


def reference_flow_graph(net: Network, cei_policy="marginal"):
    """Flow graph of the expected-value scenario, used to orient the network."""
    model = GridModel(net)
    d = dispatch(model, expected_scenario(model), cei_policy)
    flow, d = solve_flow(model, d, cei_policy)
    return build_flow_graph(flow, d, model)


def reference_partition(net: Network, cei_policy="marginal"):
    """Virtual-bus decomposition of the expected-value scenario."""
    return decompose(reference_flow_graph(net, cei_policy))


def trace_single(
    net: Network,
    index=None,
    seed=0,
    mode="full",
    cei_policy="marginal",
    flow_csv=None,
):
    """
    Carbon solution of one scenario: the expected-value scenario when
    `index` is None, otherwise scenario `index` of stream `seed`.

    With `flow_csv`, branch flows come from the file and only the dispatch
    is computed here; the slack unit is settled against the file's flows.
    """
    runner = ScenarioRunner(net, mode, cei_policy)
    model = runner.model
    s = expected_scenario(model) if index is None else sample_scenario(model, index, seed)
    if flow_csv is None:
        return runner.solve(s)

    d = dispatch(model, s, cei_policy)
    flow = load_flow_csv(flow_csv, model)
    d = settle_slack(model, d, flow, cei_policy)
    if mode == "virtual":
        return trace_virtual(model, flow, d, runner.cache)
    g = build_flow_graph(flow, d, model)
    return trace_flow_graph(g)


def run_scenario(runner: ScenarioRunner, s: ScenarioSample) -> np.ndarray:
    """
    Tracked emission rates of one scenario.

    Raises:
        ScenarioError: Any failure, tagged with the scenario index.
    """
    try:
        return runner.rates(s)
    except CarbonTraceError as e:
        raise ScenarioError(s.index, e) from e


# ---------------------------------------------------------------------------
# Chunked execution
# ---------------------------------------------------------------------------

_RUNNER: ScenarioRunner | None = None


def _init_worker(net, mode, cei_policy, track):
    global _RUNNER
    _RUNNER = ScenarioRunner(net, mode, cei_policy, track)


def _evaluate(start, stop, seed, skip_failures):
    """Rows, failed indices and the partition signatures used by one chunk."""
    cache = _RUNNER.cache
    if cache is not None:
        cache.used.clear()
    rows = []
    failed = []
    for idx in range(start, stop):
        s = sample_scenario(_RUNNER.model, idx, seed)
        try:
            rows.append(run_scenario(_RUNNER, s))
        except ScenarioError as e:
            if not skip_failures:
                raise
            failed.append(idx)
            logger.warning("skipping scenario %d: %s", idx, e.cause)
    width = len(_RUNNER.components)
    used = frozenset(cache.used) if cache is not None else frozenset()
    return np.array(rows).reshape(-1, width), failed, used


def _pilot_chunk(start, stop, seed, skip_failures):
    return _evaluate(start, stop, seed, skip_failures)


def _stats_chunk(start, stop, seed, skip_failures, lower, upper, bins):
    rows, failed, used = _evaluate(start, stop, seed, skip_failures)
    acc = StatsAccumulator(_RUNNER.components, lower, upper, bins)
    acc.add_batch(rows)
    return acc, failed, used


def _responsibility_chunk(start, stop, seed, skip_failures, gen_id):
    model = _RUNNER.model
    n_demand = model.n_bus
    totals = {
        "share": np.zeros(n_demand),
        "delivered": np.zeros(n_demand),
        "load": np.zeros(n_demand),
        "loss": 0.0,
        "generator": 0.0,
    }
    count = 0
    failed = []
    for idx in range(start, stop):
        s = sample_scenario(model, idx, seed)
        try:
            r = _RUNNER.responsibility(s, gen_id)
            gap = abs(r.total() - r.generator_rate)
            if gap > CONSERVATION_TOLERANCE * max(r.generator_rate, 1.0):
                raise NumericalError(
                    f"responsibility of '{gen_id}' does not add up (gap {gap:.2e} tCO2/h)"
                )
        except CarbonTraceError as e:
            if not skip_failures:
                raise ScenarioError(idx, e) from e
            failed.append(idx)
            logger.warning("skipping scenario %d: %s", idx, e)
            continue
        totals["share"] += r.share
        totals["delivered"] += r.delivered
        totals["load"] += r.load_rate
        totals["loss"] += float(r.loss_rate.sum() + r.internal_loss_rate.sum())
        totals["generator"] += r.generator_rate
        count += 1
    return totals, count, failed


def _chunks(start, stop, size):
    return [(a, min(a + size, stop)) for a in range(start, stop, size)]


def _map_chunks(fn, chunks, extra, cfg: RunConfig, net: Network, track):
    """Runs fn(start, stop, *extra) per chunk; results come back in chunk order."""
    if cfg.workers == 1 or len(chunks) == 1:
        if _RUNNER is None or not _RUNNER.serves(net, cfg.mode, cfg.cei_policy, track):
            _init_worker(net, cfg.mode, cfg.cei_policy, track)
        results = []
        for a, b in chunks:
            results.append(fn(a, b, *extra))
            logger.debug("scenarios %d-%d done", a, b - 1)
        return results, _RUNNER
    with ProcessPoolExecutor(
        max_workers=cfg.workers,
        initializer=_init_worker,
        initargs=(net, cfg.mode, cfg.cei_policy, track),
    ) as pool:
        futures = [pool.submit(fn, a, b, *extra) for a, b in chunks]
        return [f.result() for f in futures], None


def _levels(cfg: RunConfig, net: Network):
    if cfg.penetrations is None:
        return [(net.penetration_target, net)]
    return [(p, with_penetration(net, p)) for p in cfg.penetrations]


def run_mcs(cfg: RunConfig, net: Network) -> ResultSet:
    """
    Runs cfg.samples scenarios for every penetration level.

    A pilot pass over the first min(samples, pilot_samples) scenarios fixes
    the histogram range of every component; the main pass reuses the pilot
    rows for chunks it already covers.

    Raises:
        ScenarioError: First failing scenario (in index order), unless
            cfg.skip_failures is set.
    """
    started = time.perf_counter()
    levels = []
    components = None
    for penetration, level_net in _levels(cfg, net):
        logger.info(
            "level %.2f: %d scenarios, mode %s, %d worker(s)",
            penetration,
            cfg.samples,
            cfg.mode,
            cfg.workers,
        )
        loop_start = time.perf_counter()
        n_pilot = min(cfg.samples, cfg.pilot_samples)
        pilot_chunks = _chunks(0, n_pilot, cfg.chunk_size)
        results, runner = _map_chunks(
            _pilot_chunk, pilot_chunks, (cfg.seed, cfg.skip_failures), cfg, level_net, cfg.track
        )
        pilot_rows = [rows for rows, _, _ in results]
        failed = [i for _, f, _ in results for i in f]
        used = set().union(*(u for _, _, u in results))
        components = (runner.components if runner else None) or _components_for(
            level_net, cfg.track
        )
        lower, upper = pilot_range(np.concatenate(pilot_rows).reshape(-1, len(components)))

        all_chunks = _chunks(0, cfg.samples, cfg.chunk_size)
        covered = {c: rows for c, rows in zip(pilot_chunks, pilot_rows)}
        pending = [c for c in all_chunks if c not in covered]
        computed, runner = _map_chunks(
            _stats_chunk,
            pending,
            (cfg.seed, cfg.skip_failures, lower, upper, cfg.bins),
            cfg,
            level_net,
            cfg.track,
        ) if pending else ([], runner)
        by_chunk = dict(zip(pending, computed))

        acc = StatsAccumulator(components, lower, upper, cfg.bins)
        for chunk in all_chunks:
            if chunk in by_chunk:
                part, chunk_failed, chunk_used = by_chunk[chunk]
                failed += chunk_failed
                used |= chunk_used
            else:
                part = StatsAccumulator(components, lower, upper, cfg.bins)
                part.add_batch(covered[chunk])
            acc = acc.merge(part)

        loop_seconds = time.perf_counter() - loop_start
        if acc.count == 0:
            raise NumericalError(f"every scenario failed at penetration {penetration}")
        failed = sorted(set(failed))
        if failed:
            logger.warning("%d scenario(s) skipped at penetration %.2f", len(failed), penetration)
        levels.append(
            LevelResult(
                penetration=penetration,
                accumulator=acc,
                failed=failed,
                loop_seconds=loop_seconds,
                partitions=len(used),
            )
        )
        logger.info("level %.2f done in %.2f s", penetration, loop_seconds)

    return ResultSet(
        config=cfg,
        components=components,
        levels=levels,
        wall_seconds=time.perf_counter() - started,
    )


def _components_for(net, track):
    return tracked_components(GridModel(net), track)


@dataclass
class ResponsibilityLevel:
    penetration: float
    generator_id: str
    bus_ids: tuple
    mean_share: np.ndarray
    mean_delivered_mw: np.ndarray
    mean_load_rate: np.ndarray
    mean_loss_rate: float
    mean_generator_rate: float
    samples: int
    failed: list[int] = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(self.mean_load_rate.sum() + self.mean_loss_rate)


def run_responsibility(cfg: RunConfig, net: Network, gen_id: str) -> list[ResponsibilityLevel]:
    """
    Monte Carlo of one generator's responsibility traced to every bus's
    demand and to the losses, per penetration level.

    Raises:
        UnknownGeneratorError: No generator with that id.
    """
    if net.generator(gen_id) is None:
        raise UnknownGeneratorError(f"unknown generator '{gen_id}'")

    out = []
    for penetration, level_net in _levels(cfg, net):
        chunks = _chunks(0, cfg.samples, cfg.chunk_size)
        results, _ = _map_chunks(
            _responsibility_chunk,
            chunks,
            (cfg.seed, cfg.skip_failures, gen_id),
            cfg,
            level_net,
            ("total",),
        )
        bus_ids = tuple(b.id for b in level_net.buses)
        share = np.zeros(len(bus_ids))
        delivered = np.zeros(len(bus_ids))
        load = np.zeros(len(bus_ids))
        loss = generator = 0.0
        count = 0
        failed = []
        for totals, n, f in results:
            share += totals["share"]
            delivered += totals["delivered"]
            load += totals["load"]
            loss += totals["loss"]
            generator += totals["generator"]
            count += n
            failed += f
        if count == 0:
            raise NumericalError(f"every scenario failed at penetration {penetration}")
        out.append(
            ResponsibilityLevel(
                penetration=penetration,
                generator_id=gen_id,
                bus_ids=bus_ids,
                mean_share=share / count,
                mean_delivered_mw=delivered / count,
                mean_load_rate=load / count,
                mean_loss_rate=loss / count,
                mean_generator_rate=generator / count,
                samples=count,
                failed=failed,
            )
        )
    return out
