"""
Per-scenario dispatch, DC power flow and the two-pass loss estimate.

A GridModel compiles a Network into index arrays and factorizes the reduced
susceptance matrix once; every scenario then reuses it read-only.
"""

import hashlib
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import FlowFileError, InfeasibleDispatchError, NumericalError
from .network_model import Network
from .stochastic_models import (
    der_factor_quantile,
    piecewise_cei,
    wind_power_curve,
)

logger = logging.getLogger(__name__)

CEI_POLICIES = ("marginal", "average")
FLOW_EPSILON = 1e-9


@dataclass(frozen=True)
class ScenarioSample:
    """One draw of every stochastic element, in Network element order."""

    index: int
    wind_speed: np.ndarray
    der_factor: np.ndarray
    base_load: np.ndarray
    ev_demand: np.ndarray


@dataclass(frozen=True)
class DispatchResult:
    generator_ids: tuple[str, ...]
    output: np.ndarray
    intensity: np.ndarray
    curtailment: np.ndarray
    bus_consumption: np.ndarray


@dataclass(frozen=True)
class FlowSolution:
    """
    Branch flows are signed (positive = from_bus -> to_bus). `p_send` is the
    sending-end flow and `p_recv` the receiving-end flow; for a lossless
    branch they are equal.
    """

    p_send: np.ndarray
    p_recv: np.ndarray
    loss: np.ndarray
    injection: np.ndarray
    slack_residual: float

    def end_contributions(self):
        """Net power leaving each branch end (from-end, to-end)."""
        mean = 0.5 * (self.p_send + self.p_recv)
        return mean + 0.5 * self.loss, -mean + 0.5 * self.loss


class GridModel:
    """
    Array form of a Network with the factorized reduced susceptance matrix.

    Built once per process; it is not meant to be pickled.
    """

    def __init__(self, net: Network):
        self.net = net
        self.base_mva = net.base_mva
        self.bus_ids = tuple(b.id for b in net.buses)
        self.bus_index = {bus_id: i for i, bus_id in enumerate(self.bus_ids)}
        self.bus_kind = tuple(b.kind for b in net.buses)
        self.n_bus = len(self.bus_ids)
        self.slack = self.bus_index[net.slack_bus]

        self.branch_ids = tuple(br.id for br in net.branches)
        self.branch_index = {br_id: i for i, br_id in enumerate(self.branch_ids)}
        self.from_idx = np.array([self.bus_index[br.from_bus] for br in net.branches], dtype=np.intp)
        self.to_idx = np.array([self.bus_index[br.to_bus] for br in net.branches], dtype=np.intp)
        self.susceptance = np.array([br.susceptance for br in net.branches])
        self.resistance = np.array([br.resistance for br in net.branches])

        gens = net.generators
        self.generator_ids = tuple(g.id for g in gens)
        self.generator_index = {g_id: i for i, g_id in enumerate(self.generator_ids)}
        self.gen_bus = np.array([self.bus_index[g.bus] for g in gens], dtype=np.intp)
        self.gen_kind = np.array([g.kind for g in gens])
        self.fixed_intensity = np.array([g.intensity for g in gens])

        self.conv = np.flatnonzero(self.gen_kind == "conventional")
        self.wind = np.flatnonzero(self.gen_kind == "wind")
        self.der = np.flatnonzero(self.gen_kind == "der_pv")
        self.slack_gen = int(self.generator_index[net.slack_generator.id])

        conv = [gens[i] for i in self.conv]
        self.p_lim = np.array([g.p_lim for g in conv])
        self.participation = np.array([g.participation_factor for g in conv])
        self.cei = np.array(
            [[g.cei.a_down, g.cei.b_down, g.cei.a_over, g.cei.b_over, g.cei.p_rate] for g in conv]
        ).reshape(-1, 5)
        self.design_intensity = np.array([g.cei.design_intensity() for g in conv])
        self.slack_pos = int(np.flatnonzero(self.conv == self.slack_gen)[0])

        winds = [gens[i] for i in self.wind]
        self.turbine = np.array(
            [[g.turbine.p_rate, g.turbine.v_in, g.turbine.v_rate, g.turbine.v_out] for g in winds]
        ).reshape(-1, 4)
        self.wind_weibull = np.array([[g.weibull.lam, g.weibull.k] for g in winds]).reshape(-1, 2)

        ders = [gens[i] for i in self.der]
        self.der_rate = np.array([g.p_rate for g in ders])
        self.der_beta = np.array([[g.beta.alpha, g.beta.beta] for g in ders]).reshape(-1, 2)

        self.load_bus = np.array([self.bus_index[l.bus] for l in net.loads], dtype=np.intp)
        self.load_normal = np.array([[l.normal.mu, l.normal.sigma] for l in net.loads]).reshape(-1, 2)
        self.ev_bus = np.array([self.bus_index[ev.bus] for ev in net.ev_stations], dtype=np.intp)
        self.ev_weibull = np.array(
            [[ev.weibull.lam, ev.weibull.k] for ev in net.ev_stations]
        ).reshape(-1, 2)

        # generators grouped by bus, the order a flow graph lists them in
        self.gen_order = np.argsort(self.gen_bus, kind="stable")
        self.branch_id_array = np.array(self.branch_ids, dtype=object)

        # a distribution bus without generation may be merged into a virtual
        # bus; only branches touching such a bus can change the partition
        has_generator = np.zeros(self.n_bus, dtype=bool)
        has_generator[self.gen_bus] = True
        self.contractible = (np.array(self.bus_kind) == "distribution") & ~has_generator
        self.signature_branches = np.flatnonzero(
            self.contractible[self.from_idx] | self.contractible[self.to_idx]
        )

        self._non_slack = np.array([i for i in range(self.n_bus) if i != self.slack], dtype=np.intp)
        self._lu = self._factorize()

    def _factorize(self):
        n = self.n_bus
        f, t, b = self.from_idx, self.to_idx, self.susceptance
        B = sparse.coo_matrix(
            (np.concatenate([b, b, -b, -b]), (np.concatenate([f, t, f, t]), np.concatenate([f, t, t, f]))),
            shape=(n, n),
        ).tocsc()
        reduced = B[self._non_slack][:, self._non_slack].tocsc()
        if reduced.shape[0] == 0:
            return None
        try:
            return splu(reduced)
        except RuntimeError as e:
            raise NumericalError(
                f"susceptance matrix is singular ({e}); is the network connected?"
            ) from e

    def injection_vector(self, injections) -> np.ndarray:
        """Accepts a per-bus array or a {bus_id: MW} mapping."""
        if isinstance(injections, dict):
            vec = np.zeros(self.n_bus)
            for bus_id, value in injections.items():
                vec[self.bus_index[bus_id]] = value
            return vec
        return np.asarray(injections, dtype=float)

    def solve_angles(self, injections: np.ndarray) -> np.ndarray:
        theta = np.zeros(self.n_bus)
        if self._lu is not None:
            theta[self._non_slack] = self._lu.solve(injections[self._non_slack] / self.base_mva)
        if not np.all(np.isfinite(theta)):
            raise NumericalError("DC power flow produced non-finite angles")
        return theta


def dispatch(model: GridModel, s: ScenarioSample, cei_policy: str = "marginal") -> DispatchResult:
    """
    Fills the gap between demand and RES output with the conventional fleet.

    RES outputs follow the turbine curves and DER factors; surplus RES is
    curtailed proportionally. Conventional units share the net load by
    participation factor, clamped to [0, P_Glim]; the residual goes to the
    slack unit and, once it is at its limit, to the units with headroom.

    Raises:
        InfeasibleDispatchError: Net load above the fleet's total P_Glim.
    """
    if cei_policy not in CEI_POLICIES:
        raise ValueError(f"unknown cei policy '{cei_policy}'")

    n_gen = len(model.generator_ids)
    output = np.zeros(n_gen)
    curtailment = np.zeros(n_gen)

    consumption = np.bincount(model.load_bus, weights=s.base_load, minlength=model.n_bus)
    consumption += np.bincount(model.ev_bus, weights=s.ev_demand, minlength=model.n_bus)
    demand = float(consumption.sum())

    available = np.zeros(n_gen)
    t = model.turbine
    available[model.wind] = wind_power_curve(s.wind_speed, t[:, 0], t[:, 1], t[:, 2], t[:, 3])
    available[model.der] = model.der_rate * s.der_factor
    res_total = float(available.sum())

    net_load = demand - res_total
    if net_load < 0:
        scale = demand / res_total
        output[:] = available * scale
        curtailment[:] = available - output[:]
        net_load = 0.0
    else:
        output[:] = available

    total_pf = model.participation.sum()
    if total_pf > 0:
        shares = net_load * model.participation / total_pf
    else:
        shares = np.zeros(len(model.conv))
    shares = np.clip(shares, 0.0, model.p_lim)

    residual = net_load - shares.sum()
    if residual > 0:
        headroom = model.p_lim[model.slack_pos] - shares[model.slack_pos]
        to_slack = min(residual, headroom)
        shares[model.slack_pos] += to_slack
        residual -= to_slack
    if residual > 1e-9:
        headroom = model.p_lim - shares
        if headroom.sum() + 1e-9 < residual:
            raise InfeasibleDispatchError(
                f"net load {net_load:.3f} MW exceeds the conventional fleet limit "
                f"{model.p_lim.sum():.3f} MW"
            )
        shares += residual * headroom / headroom.sum()
    output[model.conv] = shares

    intensity = model.fixed_intensity.copy()
    intensity[model.conv] = conventional_intensity(model, shares, cei_policy)

    return DispatchResult(
        generator_ids=model.generator_ids,
        output=output,
        intensity=intensity,
        curtailment=curtailment,
        bus_consumption=consumption,
    )


def conventional_intensity(model: GridModel, p_conv, cei_policy: str) -> np.ndarray:
    if cei_policy == "average":
        return model.design_intensity.copy()
    c = model.cei
    return piecewise_cei(p_conv, c[:, 0], c[:, 1], c[:, 2], c[:, 3], c[:, 4])


def bus_injections(model: GridModel, d: DispatchResult) -> np.ndarray:
    generation = np.bincount(model.gen_bus, weights=d.output, minlength=model.n_bus)
    return generation - d.bus_consumption


def dc_power_flow(model: GridModel, injections) -> FlowSolution:
    """
    Lossless DC flow with the slack angle fixed at 0.

    The slack entry of `injections` is ignored and replaced by whatever the
    slack bus has to inject; the difference is reported as `slack_residual`.
    """
    inj = model.injection_vector(injections).copy()
    theta = model.solve_angles(inj)
    flow = model.susceptance * (theta[model.from_idx] - theta[model.to_idx]) * model.base_mva

    requested = inj[model.slack]
    inj[model.slack] = -(inj.sum() - requested)
    return FlowSolution(
        p_send=flow,
        p_recv=flow.copy(),
        loss=np.zeros_like(flow),
        injection=inj,
        slack_residual=float(inj[model.slack] - requested),
    )


def estimate_losses(flow: FlowSolution, model: GridModel) -> FlowSolution:
    """
    Adds resistive losses and re-solves the flow.

    Losses are estimated from the lossless flow as r * (P / base)^2 * base.
    The second solve withdraws half of each branch loss at either end, so the
    slack picks up the total loss and every bus balances exactly. A lossy
    branch whose second-pass flow vanishes carries no power and gets no loss;
    the second pass is then repeated without it.

    Raises:
        NumericalError: A loss larger than the flow that carries it.
    """
    loss = model.resistance * (flow.p_send / model.base_mva) ** 2 * model.base_mva
    if not loss.any():
        return replace(flow, loss=loss)

    while True:
        half = 0.5 * loss
        withdrawn = np.bincount(model.from_idx, weights=half, minlength=model.n_bus)
        withdrawn += np.bincount(model.to_idx, weights=half, minlength=model.n_bus)
        second = dc_power_flow(model, flow.injection - withdrawn)
        p_mid = second.p_send
        idle = (np.abs(p_mid) < FLOW_EPSILON) & (loss > 0)
        if not idle.any():
            break
        logger.debug("dropping the loss of %d idle branches", int(idle.sum()))
        loss = np.where(idle, 0.0, loss)

    sign = np.sign(p_mid)
    p_send = sign * (np.abs(p_mid) + half)
    p_recv = sign * (np.abs(p_mid) - half)
    bad = np.flatnonzero(p_send * p_recv < 0)
    if bad.size:
        raise NumericalError(
            f"loss exceeds the carried flow on branch '{model.branch_ids[bad[0]]}'"
        )

    injection = second.injection + withdrawn
    return FlowSolution(
        p_send=p_send,
        p_recv=p_recv,
        loss=loss,
        injection=injection,
        slack_residual=float(injection[model.slack] - flow.injection[model.slack])
        + flow.slack_residual,
    )


def settle_slack(
    model: GridModel, d: DispatchResult, flow: FlowSolution, cei_policy: str = "marginal"
) -> DispatchResult:
    """
    Sets the slack unit's output to what the slack bus actually injects and
    refreshes its intensity.

    Raises:
        InfeasibleDispatchError: The slack unit would leave [0, P_Glim].
    """
    at_slack = model.gen_bus == model.slack
    others = d.output[at_slack].sum() - d.output[model.slack_gen]
    slack_output = float(
        flow.injection[model.slack] + d.bus_consumption[model.slack] - others
    )
    limit = model.p_lim[model.slack_pos]
    if slack_output < -1e-9 or slack_output > limit + 1e-6:
        raise InfeasibleDispatchError(
            f"slack unit '{model.generator_ids[model.slack_gen]}' would produce "
            f"{slack_output:.3f} MW, outside [0, {limit:.3f}] MW"
        )
    slack_output = max(slack_output, 0.0)

    output = d.output.copy()
    output[model.slack_gen] = slack_output
    intensity = d.intensity.copy()
    intensity[model.conv] = conventional_intensity(model, output[model.conv], cei_policy)
    return replace(d, output=output, intensity=intensity)


def solve_flow(model: GridModel, d: DispatchResult, cei_policy: str = "marginal"):
    """dc_power_flow -> estimate_losses -> settle_slack for one dispatched scenario."""
    flow = estimate_losses(dc_power_flow(model, bus_injections(model, d)), model)
    return flow, settle_slack(model, d, flow, cei_policy)


def flow_signature(model: GridModel, p_send: np.ndarray, epsilon: float = FLOW_EPSILON) -> str:
    """Digest of the flow direction (+1, -1, or 0 below epsilon) of the signature branches."""
    p = p_send[model.signature_branches]
    signs = np.where(np.abs(p) < epsilon, 0, np.sign(p)).astype(np.int8)
    return hashlib.blake2b(signs.tobytes(), digest_size=16).hexdigest()


def bus_balance(model: GridModel, flow: FlowSolution) -> np.ndarray:
    """Per-bus mismatch: injection minus net power leaving through branches."""
    out_from, out_to = flow.end_contributions()
    leaving = np.bincount(model.from_idx, weights=out_from, minlength=model.n_bus)
    leaving += np.bincount(model.to_idx, weights=out_to, minlength=model.n_bus)
    return flow.injection - leaving


def load_flow_csv(path, model: GridModel) -> FlowSolution:
    """
    Reads externally computed branch flows (branch_id, p_send_mw, p_recv_mw).

    Branches absent from the file carry no flow. Bus injections are derived
    from the flows.

    Raises:
        FlowFileError: Missing file or columns, unknown branch, or a receiving
            flow larger than (or opposite to) its sending flow.
    """
    path = Path(path)
    if not path.is_file():
        raise FlowFileError(f"flow file not found: {path}")
    df = pd.read_csv(path, dtype={"branch_id": str})
    missing = {"branch_id", "p_send_mw", "p_recv_mw"} - set(df.columns)
    if missing:
        raise FlowFileError(f"{path}: missing columns {sorted(missing)}")

    p_send = np.zeros(len(model.branch_ids))
    p_recv = np.zeros(len(model.branch_ids))
    for row in df.itertuples(index=False):
        idx = model.branch_index.get(row.branch_id)
        if idx is None:
            raise FlowFileError(f"{path}: unknown branch '{row.branch_id}'")
        p_send[idx] = row.p_send_mw
        p_recv[idx] = row.p_recv_mw

    loss = np.abs(p_send) - np.abs(p_recv)
    bad = np.flatnonzero((p_send * p_recv < 0) | (loss < -1e-12))
    if bad.size:
        raise FlowFileError(
            f"{path}: branch '{model.branch_ids[bad[0]]}' has inconsistent send/receive flows"
        )
    loss = np.maximum(loss, 0.0)

    flow = FlowSolution(p_send, p_recv, loss, np.zeros(model.n_bus), 0.0)
    out_from, out_to = flow.end_contributions()
    injection = np.bincount(model.from_idx, weights=out_from, minlength=model.n_bus)
    injection += np.bincount(model.to_idx, weights=out_to, minlength=model.n_bus)
    logger.info("read %d branch flows from %s", len(df), path)
    return replace(flow, injection=injection)
