"""Queue state, virtual queues, delay accounting, and Lyapunov constants.

Three queue families drive the controller: the real batch backlogs Q, the
delay-aware virtual queues H (same service as Q, constant virtual arrival
rate epsilon while backlog persists, hard reset once the backlog clears), and
the shifted battery levels Z. Their bounds, the admissible control-parameter
range V_max, and the optimality-loss constants are computed here so the
simulator can assert them on every trajectory.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .model import ConfigError, ControlDecision, ScenarioConfig, SlotInputs

# Ledger entries below this many servers are float dust from fluid draining.
_DRAIN_EPS = 1e-9


@dataclass(frozen=True)
class LyapunovConstants:
    """Derived control constants and bound diagnostics for one scenario."""

    v: float                     # effective control parameter
    v_max: float
    eps: np.ndarray              # (n_batch,) virtual arrival rates
    gamma_max: np.ndarray        # (N,) $/MWh
    gamma_min: np.ndarray        # (N,)
    q_max: np.ndarray            # (n_batch,) servers
    h_max: np.ndarray            # (n_batch,) servers
    r_max: np.ndarray            # (n_batch,) slots, int
    omega0: float
    omega1: float
    omega2: float

    def as_dict(self) -> dict:
        return {
            "v": self.v, "v_max": self.v_max,
            "eps": self.eps.tolist(),
            "gamma_max": self.gamma_max.tolist(),
            "gamma_min": self.gamma_min.tolist(),
            "q_max": self.q_max.tolist(), "h_max": self.h_max.tolist(),
            "r_max": self.r_max.tolist(),
            "omega0": self.omega0, "omega1": self.omega1, "omega2": self.omega2,
        }


@dataclass(frozen=True)
class DelaySample:
    site: int
    qtype: int
    arrival_slot: int
    served_slot: int

    @property
    def delay(self) -> int:
        return self.served_slot - self.arrival_slot


class DelayLedger:
    """FIFO fluid drain of batch arrivals, one lane per (site, type).

    Arrivals are pushed with their slot index; service amounts drain lanes in
    arrival order. A batch's delay is the slot in which its last unit drains,
    minus its arrival slot.
    """

    def __init__(self, n_batch: int):
        self.lanes: list[deque] = [deque() for _ in range(n_batch)]

    def copy(self) -> "DelayLedger":
        out = DelayLedger(len(self.lanes))
        out.lanes = [deque((slot, rem) for slot, rem in lane) for lane in self.lanes]
        return out

    def push(self, k: int, slot: int, amount: float) -> None:
        if amount > 0.0:
            self.lanes[k].append((slot, float(amount)))

    def drain(self, k: int, slot: int, amount: float) -> list[tuple[int, int]]:
        """Serve ``amount`` from lane k; returns (arrival_slot, served_slot) pairs."""
        done: list[tuple[int, int]] = []
        lane = self.lanes[k]
        left = float(amount)
        while lane and left > _DRAIN_EPS:
            arr, rem = lane[0]
            if rem <= left + _DRAIN_EPS:
                lane.popleft()
                left -= rem
                done.append((arr, slot))
            else:
                lane[0] = (arr, rem - left)
                left = 0.0
        return done

    def backlog(self, k: int) -> float:
        return sum(rem for _, rem in self.lanes[k])

    def pending(self) -> list[tuple[int, int, float]]:
        """(lane, arrival_slot, remaining) for everything not yet served."""
        out = []
        for k, lane in enumerate(self.lanes):
            out.extend((k, slot, rem) for slot, rem in lane)
        return out


@dataclass
class SystemState:
    """All stateful quantities carried between slots."""

    q: np.ndarray            # (n_batch,) backlog, servers
    h: np.ndarray            # (n_batch,) virtual queue, servers
    z: np.ndarray            # (N,) shifted energy, MWh
    d_level: np.ndarray      # (N,) physical stored energy, MWh
    c_prev: np.ndarray       # (N,) previous generator output, MW
    ledger: DelayLedger
    slot: int = 0

    def copy(self) -> "SystemState":
        return SystemState(self.q.copy(), self.h.copy(), self.z.copy(),
                           self.d_level.copy(), self.c_prev.copy(),
                           self.ledger.copy(), self.slot)


def gamma_bounds(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-site price thresholds gamma_max / gamma_min.

    The marginal-generation-cost bounds come from the configured quadratic
    over [0, c_max]: A'(c) = 2*delta1*c + delta2.
    """
    gmax = np.empty(cfg.n_sites)
    gmin = np.empty(cfg.n_sites)
    for i, s in enumerate(cfg.sites):
        a_min = s.gen.delta2
        a_max = 2.0 * s.gen.delta1 * s.gen.c_max + s.gen.delta2
        gmax[i] = max(s.grid.x_max, s.grid.w_max, a_max)
        gmin[i] = min(s.grid.x_min, s.grid.w_min, a_min)
    return gmax, gmin


def compute_constants(cfg: ScenarioConfig) -> LyapunovConstants:
    """All derived constants; raises ConfigError when V_max is undefined or
    the configured V exceeds it."""
    cfg.validate()
    gmax, gmin = gamma_bounds(cfg)
    v_max = math.inf
    for i, s in enumerate(cfg.sites):
        num = (s.ess.d_max - s.ess.d_min
               - (s.ess.eta_c * s.ess.u_cmax + s.ess.u_dmax / s.ess.eta_d))
        den = s.ess.eta_d * gmax[i] - gmin[i] / s.ess.eta_c
        if den <= 0:
            raise ConfigError(
                f"sites[{i}]: eta_d*gamma_max - gamma_min/eta_c = {den:.6g} <= 0; "
                "V_max undefined")
        if num <= 0:
            raise ConfigError(
                f"sites[{i}].ess: capacity window leaves no room for V_max")
        v_max = min(v_max, num / den)
    v = v_max if cfg.v is None else cfg.v
    if v > v_max * (1 + 1e-12):
        raise ConfigError(f"v: {v:.6g} exceeds V_max = {v_max:.6g}")

    nb = cfg.n_batch
    eps = np.empty(nb)
    q_max = np.empty(nb)
    h_max = np.empty(nb)
    r_max = np.empty(nb, dtype=np.int64)
    for i, q, bc in cfg.flat_batch():
        k = cfg.batch_offsets[i] + q
        s = cfg.sites[i]
        growth = v * s.beta * s.grid.x_max / cfg.w
        if cfg.queue_epsilon is not None:
            eps[k] = cfg.queue_epsilon[k]
        else:
            eps[k] = (2.0 * growth + bc.pi_max) / (bc.delay_tolerance - 1)
        if eps[k] <= 0:
            raise ConfigError(f"queue_epsilon[{i},{q}]: must be > 0")
        q_max[k] = growth + bc.pi_max
        h_max[k] = growth + eps[k]
        r_max[k] = math.ceil((q_max[k] + h_max[k]) / eps[k])
        if cfg.queue_epsilon is None and r_max[k] > bc.delay_tolerance:
            raise ConfigError(
                f"batch[{i},{q}]: derived delay bound {r_max[k]} exceeds "
                f"tolerance {bc.delay_tolerance}")
        if eps[k] > bc.x_max:
            warnings.warn(
                f"batch[{i},{q}]: epsilon = {eps[k]:.4g} exceeds x_max = "
                f"{bc.x_max:.4g}; the worst-case queue bounds are not "
                "guaranteed by the boundedness theorem", stacklevel=2)

    omega0 = 0.0
    omega1 = 0.0
    omega2 = 0.0
    for i, s in enumerate(cfg.sites):
        for q, bc in enumerate(s.batch):
            k = cfg.batch_offsets[i] + q
            omega0 += cfg.w * (bc.pi_max ** 2 + bc.x_max ** 2
                               + max(eps[k] ** 2, bc.x_max ** 2)) / 2.0
        omega0 += max((s.ess.eta_c * s.ess.u_cmax) ** 2,
                      (s.ess.u_dmax / s.ess.eta_d) ** 2) / 2.0
        omega1 += v * (1.0 - s.gen.ramp_frac) * s.gen.c_max * gmax[i]
        omega2 += (s.ess.depreciation * (s.ess.u_cmax ** 2 + s.ess.u_dmax ** 2)
                   + s.gen.delta1 * s.gen.c_max ** 2 + s.gen.delta2 * s.gen.c_max)
    return LyapunovConstants(v=v, v_max=v_max, eps=eps, gamma_max=gmax,
                             gamma_min=gmin, q_max=q_max, h_max=h_max,
                             r_max=r_max, omega0=omega0, omega1=omega1,
                             omega2=omega2)


def warn_epsilon_vs_mean_arrivals(cfg: ScenarioConfig, constants: LyapunovConstants,
                                  pi: np.ndarray) -> list[str]:
    """Theorem hypothesis check epsilon <= E{pi}; returns warning strings.

    ``pi`` is a (T, n_batch) trace; the empirical mean stands in for the
    unknown distributional mean.
    """
    msgs = []
    means = pi.mean(axis=0)
    for i, q, _ in cfg.flat_batch():
        k = cfg.batch_offsets[i] + q
        if constants.eps[k] > means[k]:
            msgs.append(
                f"batch[{i},{q}]: epsilon = {constants.eps[k]:.4g} exceeds the "
                f"empirical mean arrival rate {means[k]:.4g}; the average-cost "
                "bound hypothesis does not hold")
    for m in msgs:
        warnings.warn(m, stacklevel=2)
    return msgs


def init_z(cfg: ScenarioConfig, constants: LyapunovConstants,
           d0: np.ndarray) -> np.ndarray:
    """Shifted energy level for a given physical level d0."""
    z = np.empty(cfg.n_sites)
    for i, s in enumerate(cfg.sites):
        if not s.ess.d_min - 1e-12 <= d0[i] <= s.ess.d_max + 1e-12:
            raise ConfigError(f"d0[{i}] = {d0[i]:.6g} outside "
                              f"[{s.ess.d_min:.6g}, {s.ess.d_max:.6g}]")
        z[i] = (d0[i] - s.ess.d_min
                - constants.v * s.ess.eta_d * constants.gamma_max[i]
                - s.ess.u_dmax / s.ess.eta_d)
    return z


def lemma3_thresholds(cfg: ScenarioConfig,
                      constants: LyapunovConstants) -> tuple[np.ndarray, np.ndarray]:
    """(discharge-forbidden, charge-forbidden) Z thresholds per site.

    Discharging is suboptimal below the first threshold, charging above the
    second; used only by property tests against the solver.
    """
    disch = np.empty(cfg.n_sites)
    charg = np.empty(cfg.n_sites)
    for i, s in enumerate(cfg.sites):
        disch[i] = -constants.v * s.ess.eta_d * constants.gamma_max[i]
        charg[i] = -(constants.v / s.ess.eta_c) * constants.gamma_min[i]
    return disch, charg


def initial_state(cfg: ScenarioConfig, constants: LyapunovConstants) -> SystemState:
    """Zero queues, configured (or midpoint) battery level, idle generator."""
    d0 = np.array([s.ess.d0 if s.ess.d0 is not None
                   else s.ess.d_min + 0.5 * (s.ess.d_max - s.ess.d_min)
                   for s in cfg.sites])
    return SystemState(
        q=np.zeros(cfg.n_batch), h=np.zeros(cfg.n_batch),
        z=init_z(cfg, constants, d0), d_level=d0,
        c_prev=np.zeros(cfg.n_sites), ledger=DelayLedger(cfg.n_batch), slot=0)


def update_queues(cfg: ScenarioConfig, constants: LyapunovConstants,
                  state: SystemState, inputs: SlotInputs,
                  decision: ControlDecision) -> tuple[SystemState, list[DelaySample]]:
    """Advance all queues by one slot; returns the new state and the delay
    samples of arrivals that finished service this slot.

    Service drains the ledger before this slot's arrivals are pushed, because
    arrivals join the backlog only at the next slot.
    """
    nxt = state.copy()
    samples: list[DelaySample] = []
    t = state.slot
    for i, q, _ in cfg.flat_batch():
        k = cfg.batch_offsets[i] + q
        x = float(decision.x[k])
        for arr, served in nxt.ledger.drain(k, t, x):
            samples.append(DelaySample(i, q, arr, served))
        nxt.ledger.push(k, t, float(inputs.pi[k]))
        if state.q[k] > x:
            nxt.h[k] = max(state.h[k] - x + constants.eps[k], 0.0)
        else:
            nxt.h[k] = 0.0
        nxt.q[k] = max(state.q[k] - x, 0.0) + inputs.pi[k]
    for i, s in enumerate(cfg.sites):
        flow = s.ess.eta_c * float(decision.u_c[i]) - float(decision.u_d[i]) / s.ess.eta_d
        nxt.z[i] = state.z[i] + flow
        nxt.d_level[i] = state.d_level[i] + flow
        nxt.c_prev[i] = float(decision.c[i])
    nxt.slot = t + 1
    return nxt, samples
