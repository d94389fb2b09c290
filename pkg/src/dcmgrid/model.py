"""Domain model: system parameters, per-slot inputs, decisions, costs, feasibility.

Canonical units throughout the package: power in MW, energy in MWh, prices in
$/MWh, one slot = one hour (so MW and MWh per slot coincide). Server loads are
nonnegative reals (fluid model); per-server powers are configured in watts and
converted once.

Batch-queue quantities for site ``i`` live in flat arrays of length
``sum(M_i)`` ordered site by site; ``ScenarioConfig.batch_offsets`` gives the
slice boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

WATT_TO_MW = 1e-6


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the offending field."""


class CapacityError(ValueError):
    """A candidate load exceeds a site's server capacity."""


@dataclass(frozen=True)
class BatchClass:
    """One batch-workload type at one site."""

    x_max: float            # max served per slot (servers)
    pi_max: float           # max arrival per slot (servers)
    delay_tolerance: int    # tolerant service delay (slots), >= 2


@dataclass(frozen=True)
class GeneratorParams:
    c_max: float            # MW
    ramp_frac: float        # |c_t - c_{t-1}| <= ramp_frac * c_max
    delta1: float = 0.0     # $/MW^2 h
    delta2: float = 0.0     # $/MWh
    delta3: float = 0.0     # $ per slot, fixed


@dataclass(frozen=True)
class StorageParams:
    u_cmax: float           # MW
    u_dmax: float           # MW
    eta_c: float
    eta_d: float
    d_min: float            # MWh
    d_max: float            # MWh
    depreciation: float     # sigma, $/(MW)^2 per slot
    d0: float | None = None  # initial level; default midpoint of the window


@dataclass(frozen=True)
class GridParams:
    g_smax: float           # max selling power, < 0 (MW)
    g_bmax: float           # max buying power, > 0 (MW)
    x_min: float
    x_max: float
    w_min: float
    w_max: float


@dataclass(frozen=True)
class SiteConfig:
    servers: float          # C_i
    pue: float
    p_idle_w: float
    p_peak_w: float
    gen: GeneratorParams
    ess: StorageParams
    grid: GridParams
    drop_penalty: float     # theta_i, $/server
    batch: tuple[BatchClass, ...]

    @property
    def alpha(self) -> float:
        """Load-independent facility power, MW."""
        return self.servers * (self.p_idle_w + (self.pue - 1.0) * self.p_peak_w) * WATT_TO_MW

    @property
    def beta(self) -> float:
        """Marginal power per busy server, MW/server."""
        return (self.p_peak_w - self.p_idle_w) * WATT_TO_MW


@dataclass(frozen=True)
class ScenarioConfig:
    """Static parameters for one multi-site scenario.

    ``latency_ms[f][i]`` is the propagation latency between front-end ``f``
    and site ``i``; ``latency_cost`` is the revenue-loss conversion factor
    ($ per server-slot per ms). ``v=None`` means "use V_max".
    """

    sites: tuple[SiteConfig, ...]
    latency_ms: tuple[tuple[float, ...], ...]
    latency_cost: float
    v: float | None = None
    w: float = 1e-12
    rho: float = 1.0
    queue_epsilon: tuple[float, ...] | None = None  # per flat (i,q); None = rule
    name: str = "scenario"

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_frontends(self) -> int:
        return len(self.latency_ms)

    @property
    def batch_offsets(self) -> tuple[int, ...]:
        off = [0]
        for s in self.sites:
            off.append(off[-1] + len(s.batch))
        return tuple(off)

    @property
    def n_batch(self) -> int:
        return self.batch_offsets[-1]

    def batch_slice(self, i: int) -> slice:
        off = self.batch_offsets
        return slice(off[i], off[i + 1])

    def flat_batch(self) -> list[tuple[int, int, BatchClass]]:
        """(site, type, params) triples in flat order."""
        out = []
        for i, s in enumerate(self.sites):
            for q, bc in enumerate(s.batch):
                out.append((i, q, bc))
        return out

    def validate(self) -> None:
        """Raise ConfigError on the first violated structural invariant.

        Control-parameter checks that need derived constants (V <= V_max)
        live in ``queues.compute_constants``.
        """
        if self.n_sites == 0:
            raise ConfigError("sites: at least one site required")
        if self.n_frontends == 0:
            raise ConfigError("latency_ms: at least one front-end required")
        for f, row in enumerate(self.latency_ms):
            if len(row) != self.n_sites:
                raise ConfigError(f"latency_ms[{f}]: expected {self.n_sites} entries")
            for i, val in enumerate(row):
                if val < 0:
                    raise ConfigError(f"latency_ms[{f}][{i}]: negative latency")
        if self.latency_cost < 0:
            raise ConfigError("latency_cost: must be >= 0")
        if self.w <= 0:
            raise ConfigError("w: queue weight must be > 0")
        if self.v is not None and self.v < 0:
            raise ConfigError("v: must be >= 0")
        if self.rho <= 0:
            raise ConfigError("rho: penalty parameter must be > 0")
        if self.queue_epsilon is not None and len(self.queue_epsilon) != self.n_batch:
            raise ConfigError("queue_epsilon: expected one value per (site, type)")
        for i, s in enumerate(self.sites):
            tag = f"sites[{i}]"
            if s.servers < 0:
                raise ConfigError(f"{tag}.servers: must be >= 0")
            if s.pue < 1.0:
                raise ConfigError(f"{tag}.pue: must be >= 1")
            if s.p_idle_w < 0 or s.p_peak_w < s.p_idle_w:
                raise ConfigError(f"{tag}.p_peak_w/p_idle_w: need 0 <= idle <= peak")
            if not 0.0 <= s.gen.ramp_frac <= 1.0:
                raise ConfigError(f"{tag}.gen.ramp_frac: must be in [0, 1]")
            if s.gen.c_max < 0 or s.gen.delta1 < 0 or s.gen.delta2 < 0 or s.gen.delta3 < 0:
                raise ConfigError(f"{tag}.gen: c_max and cost coefficients must be >= 0")
            ess = s.ess
            if not (0.0 < ess.eta_c <= 1.0 and 0.0 < ess.eta_d <= 1.0):
                raise ConfigError(f"{tag}.ess.eta_c/eta_d: must be in (0, 1]")
            if ess.u_cmax < 0 or ess.u_dmax < 0:
                raise ConfigError(f"{tag}.ess.u_cmax/u_dmax: must be >= 0")
            if ess.d_max < ess.d_min:
                raise ConfigError(f"{tag}.ess.d_max: must be >= d_min")
            if ess.d_max - ess.d_min < ess.eta_c * ess.u_cmax + ess.u_dmax / ess.eta_d:
                raise ConfigError(
                    f"{tag}.ess: capacity window smaller than "
                    "eta_c*u_cmax + u_dmax/eta_d (V_max would be <= 0)")
            if ess.d0 is not None and not ess.d_min <= ess.d0 <= ess.d_max:
                raise ConfigError(f"{tag}.ess.d0: outside [d_min, d_max]")
            if ess.depreciation < 0:
                raise ConfigError(f"{tag}.ess.depreciation: must be >= 0")
            gr = s.grid
            if not gr.g_smax < 0 < gr.g_bmax:
                raise ConfigError(f"{tag}.grid: need g_smax < 0 < g_bmax")
            if not gr.x_max >= gr.x_min > gr.w_max >= gr.w_min > 0:
                raise ConfigError(
                    f"{tag}.grid: price bounds must satisfy "
                    "x_max >= x_min > w_max >= w_min > 0 (no arbitrage)")
            if s.drop_penalty < 0:
                raise ConfigError(f"{tag}.drop_penalty: must be >= 0")
            if not s.batch:
                raise ConfigError(f"{tag}.batch: at least one batch type required")
            for q, bc in enumerate(s.batch):
                if bc.pi_max < 0:
                    raise ConfigError(f"{tag}.batch[{q}].pi_max: must be >= 0")
                if bc.x_max < bc.pi_max:
                    raise ConfigError(
                        f"{tag}.batch[{q}].x_max: must be >= pi_max "
                        "(queue stability)")
                if bc.delay_tolerance < 2:
                    raise ConfigError(
                        f"{tag}.batch[{q}].delay_tolerance: must be >= 2 "
                        "(the epsilon rule divides by delay_tolerance - 1)")


@dataclass(frozen=True)
class SlotInputs:
    """Exogenous quantities observed at the start of one slot."""

    lam: np.ndarray         # (F,) interactive demand, servers
    pi: np.ndarray          # (n_batch,) batch arrivals, servers
    r: np.ndarray           # (N,) renewable output, MW
    price_buy: np.ndarray   # (N,) $/MWh
    price_sell: np.ndarray  # (N,) $/MWh

    def validate(self, cfg: ScenarioConfig, slot: int | None = None) -> None:
        where = "" if slot is None else f" at slot {slot}"
        if self.lam.shape != (cfg.n_frontends,):
            raise ConfigError(f"lam: wrong shape{where}")
        if self.pi.shape != (cfg.n_batch,):
            raise ConfigError(f"pi: wrong shape{where}")
        for arr, nm in ((self.r, "r"), (self.price_buy, "price_buy"),
                        (self.price_sell, "price_sell")):
            if arr.shape != (cfg.n_sites,):
                raise ConfigError(f"{nm}: wrong shape{where}")
        if np.any(self.lam < 0) or np.any(self.pi < 0) or np.any(self.r < 0):
            raise ConfigError(f"inputs: negative demand or renewable output{where}")
        for i, q, bc in cfg.flat_batch():
            k = cfg.batch_offsets[i] + q
            if self.pi[k] > bc.pi_max * (1 + 1e-12):
                raise ConfigError(f"pi[{i},{q}]: exceeds pi_max{where}")
        for i, s in enumerate(cfg.sites):
            if not s.grid.x_min - 1e-9 <= self.price_buy[i] <= s.grid.x_max + 1e-9:
                raise ConfigError(f"price_buy[{i}]: outside configured bounds{where}")
            if not s.grid.w_min - 1e-9 <= self.price_sell[i] <= s.grid.w_max + 1e-9:
                raise ConfigError(f"price_sell[{i}]: outside configured bounds{where}")
            if not self.price_sell[i] < self.price_buy[i]:
                raise ConfigError(f"price_sell[{i}]: must be < price_buy[{i}]{where}")


@dataclass
class ControlDecision:
    """One slot's decision vector.

    ``g`` is signed (buy > 0, sell < 0). ``spill`` is renewable curtailment in
    MW; it is identically zero except under the no-selling baseline, where
    surplus renewables have nowhere to go.
    """

    d: np.ndarray           # (F, N) servers
    x: np.ndarray           # (n_batch,) servers
    e: np.ndarray           # (n_batch,) servers
    c: np.ndarray           # (N,) MW
    g: np.ndarray           # (N,) MW
    u_c: np.ndarray         # (N,) MW
    u_d: np.ndarray         # (N,) MW
    spill: np.ndarray = field(default=None)  # (N,) MW

    def __post_init__(self):
        if self.spill is None:
            self.spill = np.zeros_like(self.c)

    def copy(self) -> "ControlDecision":
        return ControlDecision(self.d.copy(), self.x.copy(), self.e.copy(),
                               self.c.copy(), self.g.copy(), self.u_c.copy(),
                               self.u_d.copy(), self.spill.copy())

    @classmethod
    def zeros(cls, cfg: ScenarioConfig) -> "ControlDecision":
        n, f, mq = cfg.n_sites, cfg.n_frontends, cfg.n_batch
        return cls(np.zeros((f, n)), np.zeros(mq), np.zeros(mq), np.zeros(n),
                   np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class CostBreakdown:
    g1: float   # grid exchange, $
    g2: float   # latency revenue loss, $
    g3: float   # drop penalty, $
    g4: float   # battery depreciation, $
    g5: float   # generation, $

    @property
    def total(self) -> float:
        return self.g1 + self.g2 + self.g3 + self.g4 + self.g5


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    site: int | None = None
    frontend: int | None = None
    qtype: int | None = None
    amount: float = 0.0

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


def site_load(cfg: ScenarioConfig, decision: ControlDecision, i: int) -> float:
    """Busy servers at site i: sum_f d + sum_q (x - e)."""
    sl = cfg.batch_slice(i)
    return float(decision.d[:, i].sum() + (decision.x[sl] - decision.e[sl]).sum())


def compute_power(cfg: ScenarioConfig, i: int, d_col: np.ndarray,
                  x_i: np.ndarray, e_i: np.ndarray, atol: float = 1e-6) -> float:
    """Facility power (MW) at site i for the given per-site load columns.

    Raises CapacityError when the busy-server total exceeds C_i beyond atol.
    """
    if np.any(d_col < -atol) or np.any(x_i < -atol) or np.any(e_i < -atol):
        raise CapacityError(f"site {i}: negative load components")
    s = cfg.sites[i]
    load = float(d_col.sum() + (x_i - e_i).sum())
    if load > s.servers + atol:
        raise CapacityError(
            f"site {i}: load {load:.6g} exceeds capacity {s.servers:.6g}")
    return s.alpha + s.beta * load


def power_vector(cfg: ScenarioConfig, decision: ControlDecision) -> np.ndarray:
    """Unchecked per-site power (MW); used by feasibility and metrics."""
    return np.array([cfg.sites[i].alpha + cfg.sites[i].beta * site_load(cfg, decision, i)
                     for i in range(cfg.n_sites)])


def grid_exchange_cost(x_price: float, w_price: float, g: float) -> float:
    """(X-W)/2 |g| + (X+W)/2 g: equals X*g when buying, W*g when selling."""
    return 0.5 * (x_price - w_price) * abs(g) + 0.5 * (x_price + w_price) * g


def compute_costs(cfg: ScenarioConfig, inputs: SlotInputs,
                  decision: ControlDecision) -> CostBreakdown:
    """Operational cost of one slot, split into its five components."""
    g1 = sum(grid_exchange_cost(inputs.price_buy[i], inputs.price_sell[i],
                                float(decision.g[i]))
             for i in range(cfg.n_sites))
    lat = np.asarray(cfg.latency_ms, dtype=float)
    g2 = cfg.latency_cost * float((decision.d * lat).sum())
    g3 = 0.0
    g4 = 0.0
    g5 = 0.0
    for i, s in enumerate(cfg.sites):
        sl = cfg.batch_slice(i)
        g3 += s.drop_penalty * float(decision.e[sl].sum())
        g4 += s.ess.depreciation * (float(decision.u_c[i]) ** 2 + float(decision.u_d[i]) ** 2)
        c = float(decision.c[i])
        g5 += s.gen.delta1 * c * c + s.gen.delta2 * c + s.gen.delta3
    return CostBreakdown(g1, g2, g3, g4, g5)


def check_feasibility(cfg: ScenarioConfig, inputs: SlotInputs, state,
                      decision: ControlDecision, include_ramp: bool = True,
                      include_complementarity: bool = True,
                      atol: float = 1e-6) -> list[Violation]:
    """All violated constraints of the per-slot problem; empty <=> feasible.

    ``state`` supplies the queue backlogs (x <= Q) and the previous generator
    output for the ramping window. ``atol`` is an absolute slack applied to
    every predicate; power balance uses it in MW per the module contract.
    """
    out: list[Violation] = []
    d, x, e = decision.d, decision.x, decision.e
    off = cfg.batch_offsets
    for f in range(cfg.n_frontends):
        gap = float(d[f].sum() - inputs.lam[f])
        if abs(gap) > atol:
            out.append(Violation("allocation", f"front-end {f}: sum_i d = "
                                 f"{d[f].sum():.9g} != lambda = {inputs.lam[f]:.9g}",
                                 frontend=f, amount=gap))
        for i in range(cfg.n_sites):
            if d[f, i] < -atol:
                out.append(Violation("d_nonneg", f"d[{f},{i}] = {d[f, i]:.3g} < 0",
                                     frontend=f, site=i, amount=float(d[f, i])))
    for i, q, bc in cfg.flat_batch():
        k = off[i] + q
        ub = min(bc.x_max, float(state.q[k]))
        if x[k] < -atol or x[k] > ub + atol:
            out.append(Violation("x_range", f"x[{i},{q}] = {x[k]:.6g} outside "
                                 f"[0, min(x_max, Q)] = [0, {ub:.6g}]",
                                 site=i, qtype=q, amount=float(x[k]) - ub))
        if e[k] < -atol or e[k] > x[k] + atol:
            out.append(Violation("e_range", f"e[{i},{q}] = {e[k]:.6g} outside "
                                 f"[0, x] = [0, {x[k]:.6g}]", site=i, qtype=q))
    p = np.empty(cfg.n_sites)
    for i, s in enumerate(cfg.sites):
        load = site_load(cfg, decision, i)
        p[i] = s.alpha + s.beta * load
        if load > s.servers + atol:
            out.append(Violation("capacity", f"site {i}: load {load:.6g} > "
                                 f"C = {s.servers:.6g}", site=i,
                                 amount=load - s.servers))
        c = float(decision.c[i])
        if c < -atol or c > s.gen.c_max + atol:
            out.append(Violation("c_range", f"site {i}: c = {c:.6g} outside "
                                 f"[0, {s.gen.c_max:.6g}]", site=i))
        if include_ramp:
            dc = abs(c - float(state.c_prev[i]))
            lim = s.gen.ramp_frac * s.gen.c_max
            if dc > lim + atol:
                out.append(Violation("ramp", f"site {i}: |c - c_prev| = {dc:.6g} "
                                     f"> {lim:.6g}", site=i, amount=dc - lim))
        uc, ud = float(decision.u_c[i]), float(decision.u_d[i])
        if uc < -atol or uc > s.ess.u_cmax + atol:
            out.append(Violation("uc_range", f"site {i}: u_c = {uc:.6g} outside "
                                 f"[0, {s.ess.u_cmax:.6g}]", site=i))
        if ud < -atol or ud > s.ess.u_dmax + atol:
            out.append(Violation("ud_range", f"site {i}: u_d = {ud:.6g} outside "
                                 f"[0, {s.ess.u_dmax:.6g}]", site=i))
        if include_complementarity and uc * ud > atol:
            out.append(Violation("complementarity", f"site {i}: u_c*u_d = "
                                 f"{uc * ud:.3g} != 0", site=i, amount=uc * ud))
        spill = float(decision.spill[i])
        if spill < -atol or spill > float(inputs.r[i]) + atol:
            out.append(Violation("spill_range", f"site {i}: spill = {spill:.6g} "
                                 f"outside [0, r] = [0, {inputs.r[i]:.6g}]", site=i))
        g = float(decision.g[i])
        bal = g + float(inputs.r[i]) - spill + c + ud - float(p[i]) - uc
        if abs(bal) > atol:
            out.append(Violation("balance", f"site {i}: power imbalance "
                                 f"{bal:.3e} MW", site=i, amount=bal))
        if g < s.grid.g_smax - atol or g > s.grid.g_bmax + atol:
            out.append(Violation("g_range", f"site {i}: g = {g:.6g} outside "
                                 f"[{s.grid.g_smax:.6g}, {s.grid.g_bmax:.6g}]",
                                 site=i))
    return out
