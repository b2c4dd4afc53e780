"""
Result files, console tables and the mode-comparison benchmark.

Data files are CSV written through pandas, each with a `<name>.meta.json`
sidecar. Anything time-dependent goes to run_metadata.json / timing.json so
that the CSVs of two identical runs are byte-identical.
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from .errors import EquivalenceError
from .mcs_engine import RunConfig, reference_partition, run_mcs
from .stats import empirical_distribution
from .utils import git_describe, network_summary

logger = logging.getLogger(__name__)

EQUIVALENCE_ATOL = 1e-10
EQUIVALENCE_RTOL = 1e-12
WARMUP_SAMPLES = 20


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------


def summary_frame(result) -> pd.DataFrame:
    """One row per (penetration, component): moments, extremes and quantiles."""
    frames = []
    for level in result.levels:
        acc = level.accumulator
        q = acc.quantiles()
        frames.append(
            pd.DataFrame(
                {
                    "penetration": level.penetration,
                    "component": acc.components,
                    "count": acc.count,
                    "mean": acc.mean,
                    "variance": acc.variance,
                    "std": acc.std,
                    "min": acc.min,
                    "max": acc.max,
                    "p5": q[:, 0],
                    "p50": q[:, 1],
                    "p95": q[:, 2],
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def histogram_frame(level) -> pd.DataFrame:
    """Long-format PDF/CDF series of every component of one level."""
    acc = level.accumulator
    frames = []
    for component in acc.components:
        dist = empirical_distribution(acc, component)
        frames.append(
            pd.DataFrame(
                {
                    "component": component,
                    "bin": np.arange(acc.bins),
                    "bin_left": dist.edges[:-1],
                    "bin_right": dist.edges[1:],
                    "pdf": dist.pdf,
                    "cdf": dist.cdf,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def totals_frame(result) -> pd.DataFrame:
    """
    Mean emission per level of the system, the losses, all EV stations and
    each generator (tCO2/h).
    """
    rows = []
    for level in result.levels:
        acc = level.accumulator
        means = dict(zip(acc.components, acc.mean))
        row = {"penetration": level.penetration}
        for name in ("total", "losses"):
            if name in means:
                row[name] = means[name]
        ev = [v for c, v in means.items() if c.startswith("ev:")]
        if ev:
            row["ev_stations"] = float(np.sum(ev))
        row.update({c: v for c, v in means.items() if c.startswith("gen:")})
        row["failed"] = len(level.failed)
        rows.append(row)
    return pd.DataFrame(rows)


def responsibility_frame(levels) -> pd.DataFrame:
    """Per demand bus mean share and responsibility, plus losses and a totals row."""
    frames = []
    for level in levels:
        # buses whose demand this generator actually supplies, even at zero intensity
        demand = level.mean_delivered_mw > 0
        body = pd.DataFrame(
            {
                "penetration": level.penetration,
                "generator": level.generator_id,
                "component": [f"demand:{b}" for b in np.array(level.bus_ids, dtype=object)[demand]],
                "share": level.mean_share[demand],
                "delivered_mw": level.mean_delivered_mw[demand],
                "responsibility_tco2_h": level.mean_load_rate[demand],
            }
        )
        tail = pd.DataFrame(
            {
                "penetration": level.penetration,
                "generator": level.generator_id,
                "component": ["losses", "total", "generator_emission"],
                "share": [np.nan, np.nan, np.nan],
                "delivered_mw": [np.nan, np.nan, np.nan],
                "responsibility_tco2_h": [
                    level.mean_loss_rate,
                    level.total,
                    level.mean_generator_rate,
                ],
            }
        )
        frames += [body, tail]
    return pd.concat(frames, ignore_index=True)


def partition_frame(partition) -> pd.DataFrame:
    return pd.DataFrame(partition.rows(), columns=["bus_id", "virtual_bus_id", "is_start"])


def scenario_frames(sol):
    """Per-bus intensities and per-branch intensity / loss emission of one solution."""
    buses = pd.DataFrame(
        {
            "bus_id": list(sol.node_ids),
            "e_i": sol.bus_intensity,
            "load_rate": sol.load_rate,
        }
    )
    branches = pd.DataFrame(
        {
            "branch_id": list(sol.branch_ids),
            "l_ij": sol.branch_intensity,
            "loss_mw": sol.branch_loss,
            "loss_rate": sol.loss_rate,
        }
    )
    return buses, branches


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def write_csv(df: pd.DataFrame, path, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    sidecar = path.with_name(path.name + ".meta.json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def run_meta(cfg: RunConfig, penetration=None) -> dict:
    meta = {
        "seed": cfg.seed,
        "samples": cfg.samples,
        "mode": cfg.mode,
        "bins": cfg.bins,
        "cei_policy": cfg.cei_policy,
    }
    if penetration is not None:
        meta["penetration"] = penetration
    elif cfg.penetrations is not None:
        meta["penetrations"] = list(cfg.penetrations)
    return meta


def level_tag(penetration) -> str:
    return f"{penetration:.4f}".rstrip("0").rstrip(".").replace(".", "p") or "0"


def write_run_outputs(result, out_dir, network_path=None) -> list[Path]:
    """
    Writes summary.csv, totals.csv, histograms_<level>.csv (with sidecars),
    run_metadata.json and timing.json into out_dir.
    """
    out = Path(out_dir)
    cfg = result.config
    written = [
        write_csv(summary_frame(result), out / "summary.csv", run_meta(cfg)),
        write_csv(totals_frame(result), out / "totals.csv", run_meta(cfg)),
    ]
    for level in result.levels:
        written.append(
            write_csv(
                histogram_frame(level),
                out / f"histograms_{level_tag(level.penetration)}.csv",
                run_meta(cfg, level.penetration),
            )
        )

    metadata = run_meta(cfg)
    metadata.update(
        {
            "penetrations": [l.penetration for l in result.levels],
            "network": None if network_path is None else str(network_path),
            "git_describe": git_describe(),
            "wall_seconds": result.wall_seconds,
            "failed_scenarios": {str(l.penetration): l.failed for l in result.levels},
            "partitions": {str(l.penetration): l.partitions for l in result.levels},
            "workers": cfg.workers,
        }
    )
    (out / "run_metadata.json").write_text(json.dumps(metadata, indent=2) + "\n", encoding="utf-8")
    timing = {
        "mode": cfg.mode,
        "wall_seconds": result.wall_seconds,
        "loop_seconds": {str(l.penetration): l.loop_seconds for l in result.levels},
    }
    (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n", encoding="utf-8")
    written += [out / "run_metadata.json", out / "timing.json"]
    logger.info("wrote %d files to %s", len(written), out)
    return written


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    samples: int
    full_seconds: float
    virtual_seconds: float
    nodes_full: int
    nodes_virtual: int

    @property
    def speedup(self) -> float:
        return self.full_seconds / self.virtual_seconds if self.virtual_seconds > 0 else float("inf")


@dataclass(frozen=True)
class BenchReport:
    rows: tuple[BenchRow, ...]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "samples": [r.samples for r in self.rows],
                "full_seconds": [r.full_seconds for r in self.rows],
                "virtual_seconds": [r.virtual_seconds for r in self.rows],
                "speedup": [r.speedup for r in self.rows],
                "nodes_full": [r.nodes_full for r in self.rows],
                "nodes_virtual": [r.nodes_virtual for r in self.rows],
            }
        )

    def scaling_r2(self, column="virtual_seconds") -> float:
        """R^2 of a straight-line fit of wall time against sample count."""
        df = self.frame()
        x = df["samples"].to_numpy(dtype=float)
        y = df[column].to_numpy(dtype=float)
        if len(x) < 2:
            return 1.0
        slope, intercept = np.polyfit(x, y, 1)
        residual = y - (slope * x + intercept)
        total = ((y - y.mean()) ** 2).sum()
        return 1.0 - (residual**2).sum() / total if total > 0 else 1.0


def check_equivalence(full, virtual):
    """
    Raises:
        EquivalenceError: Per-component means of the two modes differ.
    """
    for lf, lv in zip(full.levels, virtual.levels):
        a = lf.accumulator.mean
        b = lv.accumulator.mean
        if not np.allclose(a, b, rtol=EQUIVALENCE_RTOL, atol=EQUIVALENCE_ATOL):
            worst = int(np.argmax(np.abs(a - b)))
            raise EquivalenceError(
                f"full and virtual modes disagree on '{full.components[worst]}' "
                f"({a[worst]!r} vs {b[worst]!r}); refusing to report timings"
            )


def run_bench(net, sample_counts, cfg: RunConfig | None = None) -> BenchReport:
    """
    Times the scenario loop of both modes on the same seeds for each sample
    count, after a discarded warm-up run of each mode.

    Raises:
        EquivalenceError: The modes disagree.
    """
    cfg = cfg or RunConfig()
    partition, _ = reference_partition(net, cfg.cei_policy)
    nodes_full, nodes_virtual = len(partition.bus_to_virtual), partition.n_virtual

    for mode in ("full", "virtual"):
        run_mcs(replace(cfg, mode=mode, samples=WARMUP_SAMPLES), net)

    rows = []
    for n in sample_counts:
        full = run_mcs(replace(cfg, mode="full", samples=n), net)
        virtual = run_mcs(replace(cfg, mode="virtual", samples=n), net)
        check_equivalence(full, virtual)
        row = BenchRow(
            samples=n,
            full_seconds=sum(l.loop_seconds for l in full.levels),
            virtual_seconds=sum(l.loop_seconds for l in virtual.levels),
            nodes_full=nodes_full,
            nodes_virtual=nodes_virtual,
        )
        logger.info(
            "bench N=%d: full %.3f s, virtual %.3f s, speedup %.1fx",
            n,
            row.full_seconds,
            row.virtual_seconds,
            row.speedup,
        )
        rows.append(row)
    return BenchReport(tuple(rows))


# ---------------------------------------------------------------------------
# Console tables
# ---------------------------------------------------------------------------


def print_summary(console: Console, result, limit=12):
    for level in result.levels:
        acc = level.accumulator
        q = acc.quantiles()
        table = Table(
            title=f"Emission rates at penetration {level.penetration:.2f} (tCO2/h, N={acc.count})",
            show_header=True,
            header_style="bold cyan",
        )
        table.add_column("Component", style="cyan")
        for name in ("Mean", "Std", "P5", "P50", "P95"):
            table.add_column(name, style="green", justify="right")
        shown = [c for c in acc.components if not c.startswith(("load:", "intensity:"))]
        shown += [c for c in acc.components if c.startswith("load:")][:limit]
        for component in shown:
            i = acc.index(component)
            table.add_row(
                component,
                f"{acc.mean[i]:.4f}",
                f"{acc.std[i]:.4f}",
                f"{q[i, 0]:.4f}",
                f"{q[i, 1]:.4f}",
                f"{q[i, 2]:.4f}",
            )
        console.print(table)
        if level.failed:
            console.print(f"[yellow]{len(level.failed)} scenario(s) skipped[/yellow]")


def print_bench(console: Console, report: BenchReport):
    table = Table(title="Full vs virtual-bus mode", show_header=True, header_style="bold cyan")
    table.add_column("Samples", style="bold yellow", justify="right")
    table.add_column("Full (s)", style="green", justify="right")
    table.add_column("Virtual (s)", style="green", justify="right")
    table.add_column("Speedup", style="magenta", justify="right")
    table.add_column("Nodes", style="dim", justify="right")
    for r in report.rows:
        table.add_row(
            str(r.samples),
            f"{r.full_seconds:.3f}",
            f"{r.virtual_seconds:.3f}",
            f"{r.speedup:.1f}x",
            f"{r.nodes_full} -> {r.nodes_virtual}",
        )
    console.print(table)
    console.print(f"Virtual-mode linear scaling R^2: [green]{report.scaling_r2():.4f}[/green]")


def print_network_status(console: Console, net):
    summary = network_summary(net)
    table = Table(title="Network Status", show_header=True, header_style="bold cyan")
    table.add_column("Metric", style="dim")
    table.add_column("Value", style="green")
    table.add_row("Buses", str(summary["buses"]))
    for kind, count in summary["bus_kinds"].items():
        table.add_row(f"  {kind}", str(count))
    table.add_row("Branches", str(summary["branches"]))
    table.add_row("Generators", str(summary["generators"]))
    for kind, count in summary["generator_kinds"].items():
        table.add_row(f"  {kind}", str(count))
    table.add_row("Loads", str(summary["loads"]))
    table.add_row("EV stations", str(summary["ev_stations"]))
    table.add_row("Expected load (MW)", f"{summary['expected_load_mw']:.3f}")
    table.add_row("Expected RES (MW)", f"{summary['expected_res_mw']:.3f}")
    table.add_row("RES penetration", f"{summary['penetration']:.3f}")
    console.print(table)

    gens = Table(title="Generators", show_header=True, header_style="bold magenta")
    gens.add_column("#", style="bold yellow")
    gens.add_column("Id", style="cyan")
    gens.add_column("Bus", style="cyan")
    gens.add_column("Kind")
    gens.add_column("Rated (MW)", style="green", justify="right")
    for idx, g in enumerate(net.generators, start=1):
        if g.kind == "der_pv" and idx > 10:
            continue
        gens.add_row(str(idx), g.id, g.bus, g.kind, f"{g.p_rate:.3f}")
    console.print(gens)


def print_violations(console: Console, violations):
    table = Table(title="Validation", show_header=True, header_style="bold red")
    table.add_column("#", style="bold yellow")
    table.add_column("Kind", style="red")
    table.add_column("Element", style="cyan")
    table.add_column("Message")
    for idx, v in enumerate(violations, start=1):
        table.add_row(str(idx), v.kind, escape(v.element), escape(v.message))
    console.print(table)
