"""
Carbon Trace Simulator - command line surface.

Every command takes a network file (JSON, schema in the package README);
without --network the standard synthetic fixture is built in memory.
Exit codes: 0 success, 1 bad input or validation, 2 numerical failure.
"""

from pathlib import Path

import typer
from rich.console import Console
from rich.markup import escape
from rich.panel import Panel
from rich.table import Table

from .errors import CarbonTraceError, NetworkValidationError, NumericalError
from .mcs_engine import (
    DEFAULT_TRACK,
    RunConfig,
    reference_partition,
    run_mcs,
    run_responsibility,
    trace_single,
)
from .network_model import load_network, save_network
from .reporting import (
    partition_frame,
    print_bench,
    print_network_status,
    print_summary,
    print_violations,
    responsibility_frame,
    run_bench,
    run_meta,
    scenario_frames,
    write_csv,
    write_run_outputs,
)
from .stats import DEFAULT_BINS
from .synthetic import SyntheticConfig, nine_bus_fixture, standard_fixture
from .utils import configure_logging

app = typer.Typer(
    help="Carbon Trace Simulator - stochastic carbon emission flow of power networks",
    no_args_is_help=True,
)
console = Console()

BENCH_GRID = [1000, 5000, 10000, 20000]

NetworkOption = typer.Option(None, "--network", "-n", help="Network JSON file (default: standard fixture)")
SeedOption = typer.Option(0, "--seed", help="Seed of the scenario streams")
ModeOption = typer.Option("virtual", "--mode", help="full or virtual")
PenetrationOption = typer.Option(
    None, "--penetration", "-p", help="RES penetration level in [0, 1); repeatable"
)
WorkersOption = typer.Option(
    1, "--workers", "-w", envvar="CARBONTRACE_WORKERS", help="Worker processes"
)
CeiOption = typer.Option("marginal", "--cei-policy", help="marginal or average generator intensity")


@app.callback()
def main(
    verbose: int = typer.Option(0, "--verbose", "-v", count=True, help="-v info, -vv debug"),
):
    """Stochastic carbon emission flow tracing with virtual-bus contraction."""
    configure_logging(verbose)


def _fail(e: CarbonTraceError):
    if isinstance(e, NetworkValidationError):
        print_violations(console, e.violations)
    console.print(f"[red]✗ {escape(str(e))}[/red]")
    raise typer.Exit(e.exit_code)


def _network(path: Path | None):
    return standard_fixture() if path is None else load_network(path)


def _penetrations(values):
    return tuple(values) if values else None


@app.command()
def run(
    network: Path | None = NetworkOption,
    samples: int = typer.Option(1000, "--samples", "-N", help="Scenarios per penetration level"),
    seed: int = SeedOption,
    mode: str = ModeOption,
    penetration: list[float] | None = PenetrationOption,
    out: Path = typer.Option(Path("results"), "--out", "-o", help="Output directory"),
    workers: int = WorkersOption,
    skip_failures: bool = typer.Option(False, "--skip-failures", help="Skip failing scenarios"),
    bins: int = typer.Option(DEFAULT_BINS, "--bins", help="Histogram bins per component"),
    cei_policy: str = CeiOption,
    track: list[str] | None = typer.Option(
        None,
        "--track",
        help="Tracked groups: total, losses, loads, ev, generators, intensities; repeatable",
    ),
):
    """
    Monte Carlo run: writes summary.csv, totals.csv and histogram CSVs.

    Example:
      run --network net.json --samples 1000 --seed 42 --penetration 0.4 --out d/
    """
    try:
        net = _network(network)
        cfg = RunConfig(
            samples=samples,
            seed=seed,
            mode=mode,
            penetrations=_penetrations(penetration),
            track=tuple(track) if track else DEFAULT_TRACK,
            bins=bins,
            workers=workers,
            skip_failures=skip_failures,
            cei_policy=cei_policy,
        )
        result = run_mcs(cfg, net)
        written = write_run_outputs(result, out, network)
    except CarbonTraceError as e:
        _fail(e)

    print_summary(console, result)
    console.print(
        f"[green]✓ {len(written)} files written to {out} in {result.wall_seconds:.2f} s[/green]"
    )


@app.command()
def bench(
    network: Path | None = NetworkOption,
    samples: list[int] | None = typer.Option(
        None, "--samples", "-N", help="Sample counts to time; repeatable (default 1000 5000 10000 20000)"
    ),
    seed: int = SeedOption,
    penetration: list[float] | None = PenetrationOption,
    workers: int = WorkersOption,
    cei_policy: str = CeiOption,
    out: Path | None = typer.Option(None, "--out", "-o", help="Write bench.csv here"),
):
    """Times full vs virtual-bus mode on identical scenarios."""
    try:
        net = _network(network)
        cfg = RunConfig(
            seed=seed,
            penetrations=_penetrations(penetration),
            workers=workers,
            cei_policy=cei_policy,
            track=("total", "losses", "loads", "ev", "generators"),
        )
        report = run_bench(net, samples or BENCH_GRID, cfg)
    except CarbonTraceError as e:
        _fail(e)

    print_bench(console, report)
    if out is not None:
        meta = run_meta(cfg)
        meta.pop("samples")
        meta["sample_counts"] = list(samples or BENCH_GRID)
        path = write_csv(report.frame(), out / "bench.csv", meta)
        console.print(f"[green]✓ Written {path}[/green]")


@app.command()
def decompose(
    network: Path | None = NetworkOption,
    out: Path | None = typer.Option(None, "--out", "-o", help="Partition CSV path"),
    cei_policy: str = CeiOption,
):
    """Virtual-bus partition of the expected-value scenario (bus_id, virtual_bus_id, is_start)."""
    try:
        net = _network(network)
        partition, _ = reference_partition(net, cei_policy)
    except CarbonTraceError as e:
        _fail(e)

    df = partition_frame(partition)
    if out is not None:
        write_csv(df, out, {"network": str(network), "cei_policy": cei_policy})
        console.print(f"[green]✓ Written {out}[/green]")
    else:
        console.print(df.to_csv(index=False), end="", markup=False, highlight=False)

    table = Table(title="Virtual Buses", show_header=True, header_style="bold cyan")
    table.add_column("Metric", style="dim")
    table.add_column("Value", style="green")
    table.add_row("Buses", str(len(partition.bus_to_virtual)))
    table.add_row("Virtual buses", str(partition.n_virtual))
    table.add_row("Contracted branches", str(len(partition.internal_branches)))
    console.print(table)


@app.command()
def responsibility(
    generator: str = typer.Argument(..., help="Generator id"),
    network: Path | None = NetworkOption,
    samples: int = typer.Option(1000, "--samples", "-N"),
    seed: int = SeedOption,
    mode: str = ModeOption,
    penetration: list[float] | None = PenetrationOption,
    workers: int = WorkersOption,
    skip_failures: bool = typer.Option(False, "--skip-failures"),
    cei_policy: str = CeiOption,
    out: Path = typer.Option(Path("responsibility.csv"), "--out", "-o"),
):
    """Mean responsibility of every load and of the losses for one generator's emissions."""
    try:
        net = _network(network)
        cfg = RunConfig(
            samples=samples,
            seed=seed,
            mode=mode,
            penetrations=_penetrations(penetration),
            workers=workers,
            skip_failures=skip_failures,
            cei_policy=cei_policy,
        )
        levels = run_responsibility(cfg, net, generator)
        for level in levels:
            gap = abs(level.total - level.mean_generator_rate)
            if gap > 1e-9 * max(level.mean_generator_rate, 1.0):
                raise NumericalError(
                    f"responsibility total {level.total!r} differs from the emission "
                    f"of '{generator}' ({level.mean_generator_rate!r})"
                )
        write_csv(responsibility_frame(levels), out, run_meta(cfg) | {"generator": generator})
    except CarbonTraceError as e:
        _fail(e)

    table = Table(title=f"Responsibility for {generator}", show_header=True, header_style="bold cyan")
    table.add_column("Penetration", style="bold yellow", justify="right")
    table.add_column("Emission (tCO2/h)", style="green", justify="right")
    table.add_column("Loads", style="green", justify="right")
    table.add_column("Losses", style="green", justify="right")
    for level in levels:
        table.add_row(
            f"{level.penetration:.2f}",
            f"{level.mean_generator_rate:.4f}",
            f"{level.mean_load_rate.sum():.4f}",
            f"{level.mean_loss_rate:.4f}",
        )
    console.print(table)
    console.print(f"[green]✓ Written {out}[/green]")


@app.command()
def trace(
    network: Path | None = NetworkOption,
    scenario: int | None = typer.Option(
        None, "--scenario", help="Scenario index (default: expected values)"
    ),
    seed: int = SeedOption,
    mode: str = typer.Option("full", "--mode", help="full or virtual"),
    flows: Path | None = typer.Option(
        None, "--flows", help="Branch flow CSV (branch_id, p_send, p_recv[, loss])"
    ),
    cei_policy: str = CeiOption,
    out: Path = typer.Option(Path("trace"), "--out", "-o", help="Output directory"),
):
    """Traces one scenario and dumps bus and branch intensities."""
    try:
        net = _network(network)
        sol = trace_single(net, scenario, seed, mode, cei_policy, flows)
    except CarbonTraceError as e:
        _fail(e)

    meta = {"seed": seed, "scenario": scenario, "mode": mode, "cei_policy": cei_policy}
    buses, branches = scenario_frames(sol)
    write_csv(buses, out / "buses.csv", meta)
    write_csv(branches, out / "branches.csv", meta)

    table = Table(title="Scenario Trace", show_header=True, header_style="bold cyan")
    table.add_column("Metric", style="dim")
    table.add_column("Value", style="green")
    table.add_row("Generation emission (tCO2/h)", f"{sol.total_generation_rate():.6f}")
    table.add_row("Load emission (tCO2/h)", f"{sol.total_load_rate():.6f}")
    table.add_row("Loss emission (tCO2/h)", f"{sol.total_loss_rate():.6f}")
    table.add_row("Min / max intensity", f"{sol.bus_intensity.min():.4f} / {sol.bus_intensity.max():.4f}")
    table.add_row("Conservation error", f"{sol.conservation_error():.2e}")
    console.print(table)
    console.print(f"[green]✓ Written {out}/buses.csv and {out}/branches.csv[/green]")


@app.command()
def validate(network: Path = typer.Argument(..., help="Network JSON file")):
    """Lists every violation of a network file."""
    try:
        net = load_network(network)
    except CarbonTraceError as e:
        _fail(e)
    console.print(f"[green]✓ {network} is valid ({len(net.buses)} buses)[/green]")


@app.command()
def status(network: Path | None = NetworkOption):
    """Displays a summary of the network."""
    try:
        net = _network(network)
    except CarbonTraceError as e:
        _fail(e)
    print_network_status(console, net)


@app.command("build-synthetic")
def build_synthetic(
    out: Path = typer.Argument(..., help="Network JSON file to write"),
    feeders: int = typer.Option(30, "--feeders", help="Number of 33-bus feeders"),
    der_per_feeder: int = typer.Option(1, "--der-per-feeder"),
    der_fraction: float = typer.Option(0.2, "--der-fraction", help="DER capacity / local load"),
    penetration: float = typer.Option(0.2, "--penetration", "-p"),
    seed: int = typer.Option(0, "--seed", help="Seed of DER placement"),
    wind_cap: float | None = typer.Option(None, "--wind-cap", help="Max total wind capacity (MW)"),
    nine_bus: bool = typer.Option(False, "--nine-bus", help="Write the nine-node feeder instead"),
):
    """Writes a synthetic test network."""
    try:
        if nine_bus:
            net = nine_bus_fixture()
        else:
            net = SyntheticConfig(
                n_feeders=feeders,
                der_per_feeder=der_per_feeder,
                der_capacity_fraction=der_fraction,
                penetration=penetration,
                seed=seed,
                wind_capacity_cap_mw=wind_cap,
            ).build()
    except CarbonTraceError as e:
        _fail(e)
    save_network(net, out)
    console.print(
        Panel(
            f"[green]✓ {len(net.buses)} buses, {len(net.branches)} branches, "
            f"{len(net.generators)} generators[/green]\nWritten to [cyan]{out}[/cyan]",
            title="Synthetic network",
            border_style="cyan",
        )
    )


if __name__ == "__main__":
    app()
