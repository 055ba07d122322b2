"""Path simulation, Monte Carlo aggregation and P&L accounting.

The engine advances the coupled system (flow Z, toxicity theta, inventory X,
impact Y, price P, optional signal) under one of four agent types with an
explicit Euler scheme: controls and integrands are evaluated at the left
endpoint of each step, the impact state decays exactly over each step, and
the filter consumes the realized flow increments.  A no-feedback copy
(Z0, theta0) driven by the same Brownian increments is co-simulated for the
P&L decomposition.

Paths are vectorized in chunks and every path owns a counter-based random
stream keyed by (base_seed, path_index), so results are independent of
chunk size, worker count and agent order; across agents the same path index
reuses the same draws (common random numbers).
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import skew as _sample_skew

# numpy renamed trapz in 2.0
_trapezoid = getattr(np, "trapezoid", None) or np.trapz

from .model import (
    AssumptionError,
    ModelSpec,
    NumericalError,
    TimeGrid,
    ValidationError,
    as_coef,
    default_grid,
)
from .filtering import RiccatiSolution, solve_riccati
from .control import CoefficientTable, build_coefficient_table

AGENT_KINDS = ("partial", "full", "naive", "no_trade")

_RECORD_KEYS = (
    "Z", "theta", "theta_hat", "X", "X_hat", "Y", "q", "Q",
    "P", "M_bar", "A", "U", "V", "Z0", "theta0",
)


# ---- agents ------------------------------------------------------------------

@dataclass(frozen=True)
class Agent:
    """What an agent observes and which feedback coefficient b it believes.

    kind:
      partial   feedback on the filtered pair (X_hat, theta_hat); knows b
      full      same gains applied to the true (X, theta)
      naive     like partial but gains and filter are built with b_believed
                while the world evolves with the true b
      no_trade  q identically zero (the filter still runs, for the record)
    """

    kind: str
    b_believed: float | None = None

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ValidationError(
                f"unknown agent kind {self.kind!r}; expected one of {AGENT_KINDS}"
            )
        if self.kind == "naive":
            bb = 0.0 if self.b_believed is None else float(self.b_believed)
            if not np.isfinite(bb):
                raise ValidationError("naive agent needs a finite believed b")
            object.__setattr__(self, "b_believed", bb)
        elif self.b_believed is not None:
            raise ValidationError("only naive agents carry a believed b")

    # -- constructors --
    @classmethod
    def partial(cls) -> "Agent":
        return cls("partial")

    @classmethod
    def full(cls) -> "Agent":
        return cls("full")

    @classmethod
    def naive(cls, b_believed: float = 0.0) -> "Agent":
        return cls("naive", b_believed)

    @classmethod
    def no_trade(cls) -> "Agent":
        return cls("no_trade")

    @classmethod
    def parse(cls, text: str) -> "Agent":
        """Parse an agent label such as 'partial' or 'naive:-0.2'."""
        name, _, arg = text.strip().partition(":")
        name = name.strip()
        if name == "naive":
            try:
                return cls.naive(float(arg)) if arg else cls.naive(0.0)
            except ValueError as exc:
                raise ValidationError(f"cannot parse believed b in {text!r}") from exc
        if arg:
            raise ValidationError(f"agent {name!r} takes no argument")
        if name in ("partial", "full", "no_trade"):
            return cls(name)
        raise ValidationError(
            f"cannot parse agent {text!r}; expected partial | full | naive:<b> | no_trade"
        )

    @property
    def label(self) -> str:
        if self.kind == "naive":
            return f"naive:{self.b_believed:g}"
        return self.kind

    def believed_b(self, spec: ModelSpec):
        """The coefficient b this agent's filter and gains are built with."""
        if self.kind == "naive":
            return as_coef(self.b_believed)
        return spec.b

    def believed_spec(self, spec: ModelSpec) -> ModelSpec:
        if self.kind == "naive":
            return spec.with_b(self.b_believed)
        return spec


# ---- records ------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryRecord:
    """One simulated path on the grid, plus its terminal accounting.

    Arrays are aligned with ``t``; ``q[k]`` is the rate in force on
    [t_k, t_{k+1}) and ``q[-1]`` is the rate the agent would quote at T
    (it enters no integral).  Z0/theta0 are the no-feedback flow pair
    driven by the same noise.
    """

    agent: str
    seed: int
    path_index: int
    t: np.ndarray
    Z: np.ndarray
    theta: np.ndarray
    theta_hat: np.ndarray
    X: np.ndarray
    X_hat: np.ndarray
    Y: np.ndarray
    q: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    M_bar: np.ndarray
    A: np.ndarray
    U: np.ndarray
    V: np.ndarray
    Z0: np.ndarray
    theta0: np.ndarray
    trading_pnl: float
    total_pnl: float
    pnl_no_trade: float
    cost: float
    terminal_inventory: float


@dataclass(frozen=True)
class McSummary:
    """Monte Carlo aggregates for one agent, with per-path terminal scalars."""

    agent: str
    n_paths: int
    cost_mean: float
    cost_se: float
    trading_pnl_mean: float
    trading_pnl_var: float
    trading_pnl_skew: float
    total_pnl_mean: float
    total_pnl_var: float
    total_pnl_skew: float
    pnl_no_trade_mean: float
    pnl_no_trade_var: float
    pnl_no_trade_skew: float
    mean_abs_terminal_inventory: float
    histograms: dict
    cost_paths: np.ndarray
    trading_pnl_paths: np.ndarray
    total_pnl_paths: np.ndarray
    pnl_no_trade_paths: np.ndarray
    terminal_inventory_paths: np.ndarray

    def to_dict(self) -> dict:
        """JSON-friendly view (per-path arrays and histograms omitted)."""
        return {
            "agent": self.agent,
            "n_paths": self.n_paths,
            "cost": {"mean": self.cost_mean, "se": self.cost_se},
            "trading_pnl": {
                "mean": self.trading_pnl_mean,
                "var": self.trading_pnl_var,
                "skew": self.trading_pnl_skew,
            },
            "total_pnl": {
                "mean": self.total_pnl_mean,
                "var": self.total_pnl_var,
                "skew": self.total_pnl_skew,
            },
            "pnl_no_trade": {
                "mean": self.pnl_no_trade_mean,
                "var": self.pnl_no_trade_var,
                "skew": self.pnl_no_trade_skew,
            },
            "mean_abs_terminal_inventory": self.mean_abs_terminal_inventory,
        }


# ---- the vectorized chunk engine ------------------------------------------------

@dataclass(frozen=True)
class _Pack:
    """Plain arrays the time loop consumes; picklable for worker processes."""

    kind: str
    n: int
    dt: float
    t: np.ndarray
    a: np.ndarray
    b_true: np.ndarray
    b_bel: np.ndarray
    c: np.ndarray
    d: np.ndarray
    lt: np.ndarray
    lx: np.ndarray
    gX: np.ndarray
    gTheta: np.ndarray
    gY: np.ndarray
    gP: np.ndarray
    gU: np.ndarray
    sigma: float
    sigma_m: float
    eps: float
    alpha: float
    lam: float
    y_decay: float
    has_signal: bool
    kappa: float
    ell: float
    x0: float
    z0: float
    theta_init: float
    y0: float
    p0: float
    u0: float


def _node_values(coef, t: np.ndarray) -> np.ndarray:
    out = np.asarray(coef(t), dtype=float)
    if out.ndim == 0:
        out = np.full(t.shape, float(out))
    return out


def _make_pack(
    spec: ModelSpec, table: CoefficientTable, ric: RiccatiSolution, agent: Agent
) -> _Pack:
    grid = table.grid
    t = grid.t
    sig = spec.signal
    zeros = np.zeros_like(t)
    gU = table.gU if table.gU is not None else zeros
    init = spec.initial
    return _Pack(
        kind=agent.kind,
        n=grid.n_steps,
        dt=grid.dt,
        t=t,
        a=_node_values(spec.a, t),
        b_true=_node_values(spec.b, t),
        b_bel=_node_values(agent.believed_b(spec), t),
        c=_node_values(spec.c, t),
        d=_node_values(spec.d, t),
        lt=ric.load_theta,
        lx=ric.load_x,
        gX=table.gX if agent.kind != "no_trade" else zeros,
        gTheta=table.gTheta if agent.kind != "no_trade" else zeros,
        gY=table.gY if agent.kind != "no_trade" else zeros,
        gP=table.gP if agent.kind != "no_trade" else zeros,
        gU=gU if agent.kind != "no_trade" else zeros,
        sigma=spec.sigma,
        sigma_m=spec.sigma_m,
        eps=spec.epsilon,
        alpha=spec.alpha,
        lam=spec.lam,
        y_decay=float(np.exp(-spec.beta * grid.dt)),
        has_signal=sig is not None,
        kappa=sig.kappa if sig is not None else 0.0,
        ell=sig.ell if sig is not None else 0.0,
        x0=init.x,
        z0=init.z,
        theta_init=init.theta0,
        y0=init.y,
        p0=init.p,
        u0=sig.nu if sig is not None else 0.0,
    )


def _draw_noise(base_seed: int, start: int, count: int, n: int, dt: float) -> np.ndarray:
    """Brownian increments, shape (count, 4, n): rows W^Z, W^theta, W^M, W^U."""
    noise = np.empty((count, 4, n))
    for j in range(count):
        gen = np.random.Generator(np.random.Philox(key=[base_seed, start + j]))
        noise[j] = gen.standard_normal((4, n))
    noise *= np.sqrt(dt)
    return noise


def _rate(pack: _Pack, k: int, X, theta, X_hat, theta_hat, Y, P, U):
    if pack.kind == "no_trade":
        return np.zeros_like(X)
    if pack.kind == "full":
        xs, ts = X, theta
    else:
        xs, ts = X_hat, theta_hat
    return (
        pack.gX[k] * xs + pack.gTheta[k] * ts + pack.gY[k] * Y
        + pack.gP[k] * P + pack.gU[k] * U
    )


def _run_chunk(
    pack: _Pack,
    base_seed: int,
    start: int,
    count: int,
    record: bool,
    q_override: np.ndarray | None,
) -> dict:
    """Advance ``count`` paths through the full horizon; see module docstring."""
    n, dt = pack.n, pack.dt
    noise = _draw_noise(base_seed, start, count, n, dt)

    ones = np.ones(count)
    Z = pack.z0 * ones
    Z0 = pack.z0 * ones
    theta = pack.theta_init * ones
    theta0 = pack.theta_init * ones
    X = (pack.x0 + pack.z0) * ones
    Q = np.zeros(count)
    Y = pack.y0 * ones
    M_bar = np.zeros(count)
    A = np.zeros(count)
    U = pack.u0 * ones
    P = pack.p0 * ones
    theta_hat = pack.theta_init * ones
    X_hat = (pack.x0 + pack.z0) * ones
    V = np.zeros(count)

    exec_cash = np.zeros(count)
    int_P_dZ0 = np.zeros(count)
    int_PY_dZ0 = np.zeros(count)

    rec = None
    if record:
        rec = {key: np.empty((count, n + 1)) for key in _RECORD_KEYS}

        def snapshot(k, q_val):
            rec["Z"][:, k] = Z
            rec["theta"][:, k] = theta
            rec["theta_hat"][:, k] = theta_hat
            rec["X"][:, k] = X
            rec["X_hat"][:, k] = X_hat
            rec["Y"][:, k] = Y
            rec["q"][:, k] = q_val
            rec["Q"][:, k] = Q
            rec["P"][:, k] = P
            rec["M_bar"][:, k] = M_bar
            rec["A"][:, k] = A
            rec["U"][:, k] = U
            rec["V"][:, k] = V
            rec["Z0"][:, k] = Z0
            rec["theta0"][:, k] = theta0

    for k in range(n):
        if q_override is not None:
            q = q_override[:, k]
        else:
            q = _rate(pack, k, X, theta, X_hat, theta_hat, Y, P, U)
        if record:
            snapshot(k, q)

        # left-endpoint integrands
        exec_cash += (P + Y + 0.5 * pack.eps * q) * q * dt

        dWZ = noise[:, 0, k]
        dWth = noise[:, 1, k]
        dZ = theta * dt + pack.sigma * dWZ
        dZ0 = theta0 * dt + pack.sigma * dWZ
        int_P_dZ0 += P * dZ0
        int_PY_dZ0 += (P + Y) * dZ0

        theta_new = theta + (pack.a[k] * theta + pack.b_true[k] * q) * dt \
            + pack.c[k] * dWZ + pack.d[k] * dWth
        theta0 = theta0 + pack.a[k] * theta0 * dt + pack.c[k] * dWZ + pack.d[k] * dWth

        dV = dZ - theta_hat * dt
        theta_hat_new = theta_hat + (pack.a[k] * theta_hat + pack.b_bel[k] * q) * dt \
            + pack.lt[k] * dV
        X_hat = X_hat + (theta_hat + q) * dt + pack.lx[k] * dV
        theta_hat = theta_hat_new
        V = V + dV

        X = X + q * dt + dZ
        Q = Q + q * dt
        Z = Z + dZ
        Z0 = Z0 + dZ0
        Y = Y * pack.y_decay + pack.lam * q * dt
        if pack.has_signal:
            A = A + U * dt
            U = U - pack.kappa * U * dt + pack.ell * noise[:, 3, k]
        M_bar = M_bar + pack.sigma_m * noise[:, 2, k]
        P = pack.p0 + M_bar + A
        theta = theta_new

        probe = theta + X + Y + P + theta_hat + X_hat + U
        if not np.all(np.isfinite(probe)):
            _raise_non_finite(
                {"theta": theta, "X": X, "Y": Y, "P": P,
                 "theta_hat": theta_hat, "X_hat": X_hat, "U": U},
                k, (k + 1) * dt, start,
            )

    if q_override is not None:
        q_term = q_override[:, n]
    else:
        q_term = _rate(pack, n, X, theta, X_hat, theta_hat, Y, P, U)
    if record:
        snapshot(n, q_term)

    trading_pnl = P * X - exec_cash
    cost = exec_cash - X_hat * P + pack.alpha * X_hat ** 2
    out = {
        "cost": cost,
        "trading_pnl": trading_pnl,
        "total_pnl": trading_pnl - int_PY_dZ0,
        "pnl_no_trade": -int_P_dZ0,
        "terminal_inventory": X,
        "terminal_x_hat": X_hat,
    }
    if record:
        out["record"] = rec
    return out


def _raise_non_finite(states: dict, k: int, t: float, start: int) -> None:
    for name, arr in states.items():
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise NumericalError(
                f"non-finite {name} at step {k} (t={t:.6g}), path {start + int(bad[0])}"
            )
    raise NumericalError(f"non-finite state at step {k} (t={t:.6g})")


# ---- validation and table plumbing ------------------------------------------------

def _check_compat(
    spec: ModelSpec, table: CoefficientTable, ric: RiccatiSolution, agent: Agent
) -> None:
    if agent.kind != "no_trade":
        expected = agent.believed_spec(spec)
        if table.spec != expected:
            raise ValidationError(
                "coefficient table does not match the agent: it must be built "
                "with the agent's believed b (and the true spec otherwise)"
            )
        if not table.report.passed:
            raise AssumptionError(
                "cannot simulate: " + table.report.describe(), report=table.report
            )
    if ric.grid != table.grid:
        raise ValidationError("Riccati solution and coefficient table use different grids")


def _table_for_agent(
    spec: ModelSpec,
    base_table: CoefficientTable,
    agent: Agent,
    cache: dict | None = None,
) -> CoefficientTable:
    """The base table for truth-believing agents, a rebuilt one for naive."""
    if agent.kind != "naive":
        return base_table
    believed = agent.believed_spec(spec)
    if base_table.spec == believed:
        return base_table
    if cache is not None and agent.b_believed in cache:
        return cache[agent.b_believed]
    table = build_coefficient_table(believed, base_table.grid)
    if cache is not None:
        cache[agent.b_believed] = table
    return table


# ---- public simulation API ------------------------------------------------------

def simulate_path(
    spec: ModelSpec,
    table: CoefficientTable,
    ric: RiccatiSolution,
    agent: Agent,
    seed: int,
    path_index: int = 0,
) -> TrajectoryRecord:
    """Simulate one path and return the full trajectory record.

    ``table`` must be built with the agent's believed b (for naive agents,
    pass the table of ``spec.with_b(b_believed)``); the world always evolves
    with the true coefficients of ``spec``.
    """
    agent = Agent.parse(agent) if isinstance(agent, str) else agent
    _check_compat(spec, table, ric, agent)
    if seed < 0 or path_index < 0:
        raise ValidationError("seed and path_index must be non-negative")
    pack = _make_pack(spec, table, ric, agent)
    out = _run_chunk(pack, seed, path_index, 1, record=True, q_override=None)
    rec = out["record"]
    arrays = {key: rec[key][0] for key in _RECORD_KEYS}
    return TrajectoryRecord(
        agent=agent.label,
        seed=seed,
        path_index=path_index,
        t=table.grid.t.copy(),
        trading_pnl=float(out["trading_pnl"][0]),
        total_pnl=float(out["total_pnl"][0]),
        pnl_no_trade=float(out["pnl_no_trade"][0]),
        cost=float(out["cost"][0]),
        terminal_inventory=float(out["terminal_inventory"][0]),
        **arrays,
    )


def _chunk_starts(n_paths: int, chunk_size: int):
    for start in range(0, n_paths, chunk_size):
        yield start, min(chunk_size, n_paths - start)


def _run_all_chunks(pack, base_seed, n_paths, chunk_size, workers):
    tasks = list(_chunk_starts(n_paths, chunk_size))
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [_run_chunk(pack, base_seed, s, m, False, None) for s, m in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, pack, base_seed, s, m, False, None)
                   for s, m in tasks]
        return [f.result() for f in futures]


def _summarize(agent: Agent, chunks: list, bins: int) -> McSummary:
    cat = {key: np.concatenate([c[key] for c in chunks])
           for key in ("cost", "trading_pnl", "total_pnl", "pnl_no_trade",
                       "terminal_inventory")}
    n = cat["cost"].size
    cost = cat["cost"]

    def stats(x):
        return (
            float(np.mean(x)),
            float(np.var(x, ddof=1)),
            float(_sample_skew(x, bias=False)),
        )

    tp = stats(cat["trading_pnl"])
    tot = stats(cat["total_pnl"])
    nt = stats(cat["pnl_no_trade"])
    # np.histogram returns (counts, edges); stored as (edges, counts)
    histograms = {
        key: np.histogram(cat[key], bins=bins)[::-1]
        for key in ("trading_pnl", "total_pnl", "pnl_no_trade")
    }
    return McSummary(
        agent=agent.label,
        n_paths=n,
        cost_mean=float(np.mean(cost)),
        cost_se=float(np.std(cost, ddof=1) / np.sqrt(n)),
        trading_pnl_mean=tp[0], trading_pnl_var=tp[1], trading_pnl_skew=tp[2],
        total_pnl_mean=tot[0], total_pnl_var=tot[1], total_pnl_skew=tot[2],
        pnl_no_trade_mean=nt[0], pnl_no_trade_var=nt[1], pnl_no_trade_skew=nt[2],
        mean_abs_terminal_inventory=float(np.mean(np.abs(cat["terminal_inventory"]))),
        histograms=histograms,
        cost_paths=cost,
        trading_pnl_paths=cat["trading_pnl"],
        total_pnl_paths=cat["total_pnl"],
        pnl_no_trade_paths=cat["pnl_no_trade"],
        terminal_inventory_paths=cat["terminal_inventory"],
    )


def run_montecarlo(
    spec: ModelSpec,
    agents,
    n_paths: int,
    base_seed: int,
    grid: TimeGrid | None = None,
    table: CoefficientTable | None = None,
    ric: RiccatiSolution | None = None,
    workers: int | None = None,
    chunk_size: int = 1024,
    bins: int = 50,
) -> list[McSummary]:
    """Monte Carlo over independent paths for each agent, with shared draws.

    Per-path streams are keyed by (base_seed, path index), so every agent
    sees identical Brownian increments on the same path index: cross-agent
    cost gaps are paired comparisons.  Aggregation is ordered by path index,
    making the result independent of chunking and worker count.
    """
    if n_paths < 2:
        raise ValidationError("n_paths must be at least 2")
    if base_seed < 0:
        raise ValidationError("base_seed must be non-negative")
    agents = [Agent.parse(a) if isinstance(a, str) else a for a in agents]
    if grid is None:
        grid = default_grid(spec) if table is None else table.grid
    if table is None:
        table = build_coefficient_table(spec, grid)
    if ric is None:
        ric = solve_riccati(spec, grid)

    naive_cache: dict = {}
    summaries = []
    for agent in agents:
        agent_table = _table_for_agent(spec, table, agent, naive_cache)
        _check_compat(spec, agent_table, ric, agent)
        pack = _make_pack(spec, agent_table, ric, agent)
        chunks = _run_all_chunks(pack, base_seed, n_paths, chunk_size, workers)
        summaries.append(_summarize(agent, chunks, bins))
    return summaries


# ---- P&L decomposition ------------------------------------------------------------

def pnl_decomposition(
    traj: TrajectoryRecord, spec: ModelSpec, flow: str = "uncontrolled"
) -> tuple[float, float, float]:
    """(pnl_no_trade, pnl_trading, pnl_total) recomputed from the arrays.

    ``flow`` selects the inflow leg: "uncontrolled" uses the no-feedback
    co-simulated Z0 (the default accounting), "realized" substitutes the
    realized inflow Z of the controlled path.
    """
    if flow not in ("uncontrolled", "realized"):
        raise ValidationError("flow must be 'uncontrolled' or 'realized'")
    if flow == "uncontrolled":
        if traj.Z0 is None:
            raise ValidationError("trajectory carries no uncontrolled inflow Z0")
        inflow = traj.Z0
    else:
        inflow = traj.Z
    dt = np.diff(traj.t)
    dZ = np.diff(inflow)
    P, Y, q = traj.P[:-1], traj.Y[:-1], traj.q[:-1]
    exec_cash = float(np.sum((P + Y + 0.5 * spec.epsilon * q) * q * dt))
    pnl_trading = float(traj.P[-1] * traj.X[-1]) - exec_cash
    pnl_no_trade = -float(np.sum(P * dZ))
    pnl_total = pnl_trading - float(np.sum((P + Y) * dZ))
    return pnl_no_trade, pnl_trading, pnl_total


# ---- optimality oracles ------------------------------------------------------------

def _eta_on_grid(eta, t: np.ndarray) -> np.ndarray:
    """Accept a scalar, an array of node values, or a callable of time."""
    if callable(eta):
        values = np.asarray(eta(t), dtype=float)
        if values.ndim == 0:
            values = np.full(t.shape, float(values))
    else:
        values = np.asarray(eta, dtype=float)
        if values.ndim == 0:
            values = np.full(t.shape, float(values))
    if values.shape != t.shape:
        raise ValidationError("eta must evaluate to one value per grid node")
    if not np.all(np.isfinite(values)):
        raise ValidationError("eta must be finite")
    return values


def _growth_weight(spec: ModelSpec, grid: TimeGrid) -> np.ndarray:
    """IA(s) = int_s^T exp(int_s^t a du) dt on the grid nodes."""
    t = grid.t
    a = _node_values(spec.a, t)
    dt = grid.dt
    Ia = np.empty_like(t)
    Ia[0] = 0.0
    np.cumsum(0.5 * dt * (a[1:] + a[:-1]), out=Ia[1:])
    E = np.exp(Ia - Ia.max())
    cum = np.empty_like(t)
    cum[0] = 0.0
    np.cumsum(0.5 * dt * (E[1:] + E[:-1]), out=cum[1:])
    return (cum[-1] - cum) / E


def _impact_response(q: np.ndarray, lam: float, beta: float, dt: float) -> np.ndarray:
    """W(s) = int_s^T exp(-beta (t-s)) lam q_t dt, backward trapezoid recursion."""
    decay = float(np.exp(-beta * dt))
    W = np.zeros_like(q)
    for k in range(q.shape[1] - 2, -1, -1):
        W[:, k] = decay * W[:, k + 1] + 0.5 * dt * lam * (q[:, k] + decay * q[:, k + 1])
    return W


def gateaux_residual(
    spec: ModelSpec,
    table: CoefficientTable,
    ric: RiccatiSolution,
    eta,
    n_paths: int,
    agent: Agent | None = None,
    base_seed: int = 20240,
    chunk_size: int = 256,
) -> tuple[float, float]:
    """Monte Carlo estimate of the cost functional's directional derivative.

    The derivative of the cost in direction eta has a closed integrand in
    the realized path (price, rate, impact, an exponentially discounted
    response of the future rates, and terminal corrections).  At the
    optimizer it vanishes for every direction; for a mis-specified agent it
    does not.  Returns (estimate, standard error).
    """
    agent = Agent.partial() if agent is None else agent
    agent = Agent.parse(agent) if isinstance(agent, str) else agent
    table = _table_for_agent(spec, table, agent, None)
    _check_compat(spec, table, ric, agent)
    if n_paths < 2:
        raise ValidationError("n_paths must be at least 2")

    grid = table.grid
    t = grid.t
    dt = grid.dt
    eta_arr = _eta_on_grid(eta, t)
    IA = _growth_weight(spec, grid)
    b_true = _node_values(spec.b, t)
    pack = _make_pack(spec, table, ric, agent)

    residuals = np.empty(n_paths)
    for start, count in _chunk_starts(n_paths, chunk_size):
        out = _run_chunk(pack, base_seed, start, count, record=True, q_override=None)
        rec = out["record"]
        q, P, Y = rec["q"], rec["P"], rec["Y"]
        P_T = P[:, -1][:, None]
        Xh_T = out["terminal_x_hat"][:, None]
        W = _impact_response(q, spec.lam, spec.beta, dt)
        bIA = (b_true * IA)[None, :]
        G = (
            P + spec.epsilon * q + Y + W
            - bIA * P_T - P_T
            + 2.0 * spec.alpha * (bIA * Xh_T + Xh_T)
        )
        residuals[start:start + count] = _trapezoid(eta_arr[None, :] * G, dx=dt, axis=1)
    return (
        float(np.mean(residuals)),
        float(np.std(residuals, ddof=1) / np.sqrt(n_paths)),
    )


def perturbed_cost_gap(
    spec: ModelSpec,
    table: CoefficientTable,
    ric: RiccatiSolution,
    agent: Agent | None,
    eta,
    delta: float,
    n_paths: int,
    base_seed: int = 20240,
    chunk_size: int = 256,
) -> tuple[float, float]:
    """Common-random-number estimate of C(q + delta eta) - C(q).

    Pass one records the agent's realized rates; pass two replays the same
    noise open-loop with the perturbed rates.  With delta = 0 the replay
    reproduces the costs bitwise, so the gap is exactly zero.  Returns
    (mean gap, standard error of the gap).
    """
    agent = Agent.partial() if agent is None else agent
    agent = Agent.parse(agent) if isinstance(agent, str) else agent
    table = _table_for_agent(spec, table, agent, None)
    _check_compat(spec, table, ric, agent)
    if n_paths < 2:
        raise ValidationError("n_paths must be at least 2")

    eta_arr = _eta_on_grid(eta, table.grid.t)
    pack = _make_pack(spec, table, ric, agent)
    gaps = np.empty(n_paths)
    for start, count in _chunk_starts(n_paths, chunk_size):
        base = _run_chunk(pack, base_seed, start, count, record=True, q_override=None)
        q_pert = base["record"]["q"] + delta * eta_arr[None, :]
        pert = _run_chunk(pack, base_seed, start, count, record=False, q_override=q_pert)
        gaps[start:start + count] = pert["cost"] - base["cost"]
    return (
        float(np.mean(gaps)),
        float(np.std(gaps, ddof=1) / np.sqrt(n_paths)),
    )


# ---- artifacts ----------------------------------------------------------------------

def write_trajectory_csv(traj: TrajectoryRecord, path) -> None:
    columns = ("t", "Z", "theta", "theta_hat", "X", "X_hat", "Y", "q", "Q",
               "P", "M_bar", "A", "U", "V", "Z0", "theta0")
    data = np.column_stack([getattr(traj, name) for name in columns])
    np.savetxt(path, data, delimiter=",", header=",".join(columns),
               comments="", fmt="%.17g")


def write_flow_csv(trajs, path, include_q: bool = True, day_offset: float = 1.0) -> None:
    """Export simulated flow as calibration input, one day per trajectory.

    Rows are (timestamp, dt, dz[, q]) per bin; trajectory i is shifted by
    i * day_offset so the day partition of the calibration loader separates
    paths.
    """
    if isinstance(trajs, TrajectoryRecord):
        trajs = [trajs]
    if not trajs:
        raise ValidationError("no trajectories to export")
    rows = []
    for i, traj in enumerate(trajs):
        ts = i * day_offset + traj.t[:-1]
        dt = np.diff(traj.t)
        dz = np.diff(traj.Z)
        if include_q:
            rows.append(np.column_stack([ts, dt, dz, traj.q[:-1]]))
        else:
            rows.append(np.column_stack([ts, dt, dz]))
    data = np.vstack(rows)
    header = "timestamp,dt,dz,q" if include_q else "timestamp,dt,dz"
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def write_mc_summary_json(summaries, path) -> None:
    payload = {"agents": [s.to_dict() for s in summaries]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_histogram_csv(summary: McSummary, quantity: str, path) -> None:
    if quantity not in summary.histograms:
        raise ValidationError(
            f"no histogram for {quantity!r}; have {sorted(summary.histograms)}"
        )
    edges, counts = summary.histograms[quantity]
    data = np.column_stack([edges[:-1], edges[1:], counts])
    np.savetxt(path, data, delimiter=",", header="bin_left,bin_right,count",
               comments="", fmt="%.17g")


def write_paths_csv(summary: McSummary, path) -> None:
    """Per-path terminal scalars, ordered by path index."""
    idx = np.arange(summary.n_paths)
    data = np.column_stack([
        idx, summary.cost_paths, summary.trading_pnl_paths,
        summary.total_pnl_paths, summary.pnl_no_trade_paths,
        summary.terminal_inventory_paths,
    ])
    np.savetxt(
        path, data, delimiter=",",
        header="path,cost,trading_pnl,total_pnl,pnl_no_trade,terminal_inventory",
        comments="", fmt="%.17g",
    )
