"""Exact simulation of the n-server supermarket model in tail-count coordinates.

The state is ``q`` with ``q[i]`` the number of queues holding at least ``i``
jobs. Arrivals sample ``d`` queues with replacement and join the shortest;
service is exponential with rate one at every busy server.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from . import _kernel
from .core_math import ModelParams, is_infinite, rho_norm

BLOCK = 1 << 15
NOT_HIT = math.inf


@dataclass(frozen=True)
class RngSpec:
    """Seed plus replication index; distinct streams are independent."""

    seed: int = 0
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSpec):
        return rng.generator()
    if rng is None or isinstance(rng, (int, np.integer)):
        return RngSpec(0 if rng is None else int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


@dataclass
class TailCounts:
    q: np.ndarray
    n: int

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.int64).copy()
        self.validate()

    def validate(self) -> None:
        q = self.q
        if q.ndim != 1 or q.shape[0] < 1:
            raise ValueError("tail counts must be a non-empty vector")
        if q[0] != self.n:
            raise ValueError(f"q[0] must equal n={self.n}, got {q[0]}")
        if np.any(q < 0):
            raise ValueError("tail counts must be nonnegative")
        if np.any(np.diff(q) > 0):
            raise ValueError("tail counts must be nonincreasing")

    @classmethod
    def empty(cls, n: int, levels: int = 2) -> "TailCounts":
        q = np.zeros(max(levels, 2), dtype=np.int64)
        q[0] = n
        return cls(q, n)

    @classmethod
    def from_lengths(cls, lengths) -> "TailCounts":
        lengths = np.asarray(lengths, dtype=np.int64)
        top = int(lengths.max()) if lengths.size else 0
        q = np.array([(lengths >= i).sum() for i in range(top + 2)], dtype=np.int64)
        return cls(q, lengths.size)

    @classmethod
    def from_fractions(cls, n: int, tail) -> "TailCounts":
        """Integer state closest to target tail fractions ``tail[i]`` (``tail[0]=1``).

        Queue counts per exact length are apportioned by largest remainder, so
        ``|q_i/n - tail_i| < (number of levels)/n`` and the result is a valid state.
        """
        s = np.clip(np.asarray(tail, dtype=float), 0.0, 1.0)
        if s.ndim != 1 or s.shape[0] < 1:
            raise ValueError("tail profile must be a non-empty vector")
        s = np.minimum.accumulate(np.concatenate([[1.0], s[1:]]))
        share = -np.diff(np.concatenate([s, [0.0]])) * n
        base = np.floor(share).astype(np.int64)
        short = n - int(base.sum())
        if short > 0:
            order = np.argsort(-(share - base), kind="stable")
            base[order[:short]] += 1
        q = np.cumsum(base[::-1])[::-1]
        return cls(np.concatenate([q, [0]]), n)

    @property
    def top(self) -> int:
        """Largest occupied level."""
        nz = np.nonzero(self.q)[0]
        return int(nz[-1])

    @property
    def jobs(self) -> int:
        return int(self.q[1:].sum())

    def fractions(self, levels: int | None = None) -> np.ndarray:
        return padded(self.q, levels) / self.n


def padded(q, levels: int | None) -> np.ndarray:
    q = np.asarray(q)
    if levels is None:
        return q.astype(float)
    out = np.zeros(levels, dtype=float)
    k = min(levels, q.shape[0])
    out[:k] = q[:k]
    return out


class Event(NamedTuple):
    kind: str  # "A" or "D"
    level: int


def transition_rates(q, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Arrival and departure rates indexed by the tail level they change.

    Returns arrays over levels ``0..top+1``; entry 0 is always zero.
    Arrival into level i: lam*n*((q_{i-1}/n)**d - (q_i/n)**d).
    Departure from level i: q_i - q_{i+1}.
    """
    n, d = params.n, params.d
    q = np.asarray(q, dtype=float)
    top = int(np.nonzero(q)[0][-1])
    s = np.zeros(top + 3)
    s[: top + 1] = q[: top + 1] / n
    arr = np.zeros(top + 2)
    arr[1:] = params.lam * n * (s[: top + 1] ** d - s[1 : top + 2] ** d)
    dep = np.zeros(top + 2)
    dep[1:] = n * (s[1 : top + 2] - s[2 : top + 3])
    return arr, dep


def step(state: TailCounts, params: ModelParams, rng) -> tuple[TailCounts, Event | None, float]:
    """Sample the next transition from the explicit rate vector.

    Returns ``(state, None, inf)`` when the chain is absorbed (no jobs and no
    arrivals).
    """
    rng = as_generator(rng)
    arr, dep = transition_rates(state.q, params)
    rates = np.concatenate([arr, dep])
    total = rates.sum()
    if total <= 0:
        return TailCounts(state.q, state.n), None, math.inf
    hold = rng.exponential(1.0 / total)
    k = int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right"))
    k = min(k, rates.shape[0] - 1)
    q = state.q.copy()
    if k < arr.shape[0]:
        level, kind = k, "A"
        if level >= q.shape[0]:
            q = np.concatenate([q, np.zeros(level - q.shape[0] + 2, dtype=np.int64)])
        q[level] += 1
    else:
        level, kind = k - arr.shape[0], "D"
        q[level] -= 1
    return TailCounts(q, state.n), Event(kind, level), hold


@dataclass
class EventLog:
    """Every transition of a run: time, tail level changed, +1 arrival / -1 departure."""

    q0: np.ndarray
    n: int
    horizon: float
    times: np.ndarray
    levels: np.ndarray
    kinds: np.ndarray

    def __len__(self) -> int:
        return self.times.shape[0]

    def to_lines(self) -> Iterator[str]:
        for t, lvl, k in zip(self.times, self.levels, self.kinds):
            yield f"{float(t)!r},{int(lvl)},{'A' if k > 0 else 'D'}"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.to_lines():
                fh.write(line + "\n")


class Engine:
    """Stateful wrapper around the compiled event loop."""

    def __init__(self, init: TailCounts, params: ModelParams, rng, capacity: int = 32):
        self.params = params
        self.rng = as_generator(rng)
        cap = max(capacity, init.q.shape[0] + 2)
        self.q = np.zeros(cap, dtype=np.int64)
        self.q[: init.q.shape[0]] = init.q
        self.state = np.array([0.0, -1.0, 0.0, 0.0, 0.0, 0.0])
        self._refill()

    @property
    def t(self) -> float:
        return float(self.state[0])

    @property
    def events(self) -> int:
        return int(self.state[5])

    def _refill(self) -> None:
        self.expo = self.rng.standard_exponential(BLOCK)
        self.unif = self.rng.random((BLOCK, self.params.d + 1))
        self.state[2] = 0.0

    def tail_counts(self) -> TailCounts:
        top = int(np.nonzero(self.q)[0][-1])
        return TailCounts(self.q[: top + 2], self.params.n)

    def run(self, t_end: float, grid=None, grid_out=None, area=None, log=None) -> None:
        """Advance to ``t_end``.

        ``grid``/``grid_out`` record counts at grid times (the grid position is
        reset on each call); ``area`` accumulates the time integral of each
        ``q[i]``; ``log`` is a list that receives event-log chunks.
        """
        p = self.params
        empty_f = np.zeros(0)
        empty_i = np.zeros(0, dtype=np.int64)
        if grid is None:
            grid, grid_out = empty_f, np.zeros((0, 0), dtype=np.int64)
        if area is None:
            area = empty_f
        self.state[3] = 0.0
        chunk = 1 << 16
        while True:
            if log is not None:
                lt = np.empty(chunk)
                ll = np.empty(chunk, dtype=np.int64)
                lk = np.empty(chunk, dtype=np.int8)
                self.state[4] = 0.0
            else:
                lt, ll, lk = empty_f, empty_i, np.zeros(0, dtype=np.int8)
            status = _kernel.advance(
                self.q, p.n, p.d, p.lam, self.state, float(t_end),
                self.expo, self.unif, grid, grid_out, area, lt, ll, lk,
            )
            if log is not None:
                k = int(self.state[4])
                log.append((lt[:k], ll[:k], lk[:k]))
            if status == _kernel.DONE:
                return
            if status == _kernel.NEED_RANDOMS:
                self._refill()
            elif status == _kernel.NEED_CAPACITY:
                self.q = np.concatenate([self.q, np.zeros(self.q.shape[0], dtype=np.int64)])


@dataclass
class ScaledPath:
    """Grid samples of S_i = q_i/n and T_i = eta(1 - S_i) for levels 0..levels-1."""

    grid: np.ndarray
    S: np.ndarray
    eta: float
    events: int
    log: EventLog | None = field(default=None, repr=False)

    @property
    def levels(self) -> int:
        return self.S.shape[0]

    @property
    def T(self) -> np.ndarray:
        if not math.isfinite(self.eta):
            raise ValueError("rescaled path is undefined for infinite eta")
        return self.eta * (1.0 - self.S)

    def norm(self, rho: float, t: float | None = None) -> float:
        """Path rho-norm of T, counting T_i = eta for every untracked level.

        Valid when the tracked levels cover every level occupied on the grid.
        """
        from .core_math import rho_norm_path

        return rho_norm_path(self.T, rho, t=t, grid=self.grid, tail=self.eta)


def make_grid(horizon: float, grid_dt: float) -> np.ndarray:
    if grid_dt <= 0:
        raise ValueError("grid_dt must be positive")
    k = int(math.floor(horizon / grid_dt + 1e-9))
    return np.arange(k + 1) * grid_dt


def simulate_path(
    init: TailCounts,
    params: ModelParams,
    horizon: float,
    grid_dt: float,
    track_levels: int,
    rng,
    keep_log: bool = False,
) -> ScaledPath:
    if track_levels < 2:
        raise ValueError("track at least two levels")
    if init.n != params.n:
        raise ValueError("initial state and parameters disagree on n")
    grid = make_grid(horizon, grid_dt)
    counts = np.zeros((track_levels, grid.shape[0]), dtype=np.int64)
    eng = Engine(init, params, rng)
    chunks = [] if keep_log else None
    eng.run(horizon, grid=grid, grid_out=counts, log=chunks)
    log = None
    if keep_log:
        log = EventLog(
            q0=init.q.copy(), n=params.n, horizon=float(horizon),
            times=np.concatenate([c[0] for c in chunks]) if chunks else np.zeros(0),
            levels=np.concatenate([c[1] for c in chunks]) if chunks else np.zeros(0, np.int64),
            kinds=np.concatenate([c[2] for c in chunks]) if chunks else np.zeros(0, np.int8),
        )
    return ScaledPath(grid, counts / params.n, params.eta_float, eng.events, log)


@dataclass
class MartingalePath:
    """Grid samples of the scaled arrival/departure martingales and compensators.

    ``M[i]`` and ``N[i]`` are zero at time zero; ``sup_M``/``sup_N`` hold the
    exact suprema of |M_i|, |N_i| over [0, horizon], evaluated at every event.
    """

    grid: np.ndarray
    M: np.ndarray
    N: np.ndarray
    comp_A: np.ndarray
    comp_D: np.ndarray
    sup_M: np.ndarray
    sup_N: np.ndarray

    def norms(self, rho: float) -> tuple[float, float]:
        return rho_norm(self.sup_M, rho), rho_norm(self.sup_N, rho)

    def reconstruct_T(self, T0) -> np.ndarray:
        """T_i(t) = T_i(0) - M_i - (arrival compensator) + N_i + (departure compensator)."""
        T0 = np.asarray(T0, dtype=float)[: self.M.shape[0], None]
        T = T0 - self.M - self.comp_A + self.N + self.comp_D
        T[0] = 0.0
        return T


def extract_martingales(log: EventLog, params: ModelParams, grid=None, levels: int | None = None) -> MartingalePath:
    """Split the event log into scaled martingales plus compensators.

    M_i = (eta/n) A_i(t) - lam*eta*int((S_{i-1})^d - (S_i)^d)
    N_i = (eta/n) D_i(t) - eta*int(S_i - S_{i+1})

    The compensators are exact integrals of piecewise-constant rates.
    Grid values see every event at or before the grid time.
    """
    if is_infinite(params.eta):
        raise ValueError("martingale scaling needs a finite eta")
    times = np.asarray(log.times, dtype=float)
    if times.shape[0] != log.levels.shape[0] or times.shape[0] != log.kinds.shape[0]:
        raise ValueError("incomplete event log")
    if times.size and (np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] > log.horizon):
        raise ValueError("event log times are not ordered within [0, horizon]")
    top = int(max(log.levels.max() if len(log) else 0, np.nonzero(log.q0)[0][-1]))
    K = max(top + 2, levels or 0)
    grid = make_grid(log.horizon, log.horizon) if grid is None else np.asarray(grid, dtype=float)
    q0 = np.zeros(K + 2, dtype=np.int64)
    q0[: min(K + 2, log.q0.shape[0])] = log.q0[: K + 2]
    M, N, cA, cD = (np.zeros((K, grid.shape[0])) for _ in range(4))
    sup_M, sup_N = np.zeros(K), np.zeros(K)
    _kernel.martingale_scan(
        q0, params.n, params.d, params.lam, params.eta_float, times,
        np.asarray(log.levels, dtype=np.int64), np.asarray(log.kinds, dtype=np.int64),
        grid, float(log.horizon), M, N, cA, cD, sup_M, sup_N,
    )
    return MartingalePath(grid, M, N, cA, cD, sup_M, sup_N)


def detect_stopping(path: ScaledPath, params: ModelParams) -> float:
    """First grid time at which some level 1 <= i <= i* has T_i >= eta**alpha."""
    istar = params.istar
    top = int(math.floor(istar))
    if top < 1:
        return NOT_HIT
    if path.levels <= top:
        raise ValueError(f"path tracks {path.levels} levels but i* = {istar:.3f}")
    hit = np.any(path.T[1 : top + 1] >= params.threshold, axis=0)
    idx = np.nonzero(hit)[0]
    return float(path.grid[idx[0]]) if idx.size else NOT_HIT


@dataclass(frozen=True)
class SteadyEstimate:
    """Batch-means estimate of the steady-state fraction of queues with >= level jobs."""

    level: int
    mean: float
    stderr: float
    batches: int
    n: int
    d: int
    lam: float

    def __post_init__(self):
        if not (-1e-12 <= self.mean <= 1 + 1e-12):
            raise ValueError(f"mean out of [0,1]: {self.mean}")
        if not math.isfinite(self.stderr) or self.stderr < 0:
            raise ValueError("stderr must be finite and nonnegative")
        if self.batches < 2:
            raise ValueError("batch means need at least two batches")


def batch_means(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error over the first axis (batches)."""
    values = np.asarray(values, dtype=float)
    b = values.shape[0]
    return values.mean(axis=0), values.std(axis=0, ddof=1) / math.sqrt(b)


def steady_state_sample(
    params: ModelParams,
    burn_in: float | None = None,
    batches: int = 20,
    batch_len: float = 100.0,
    levels: int = 10,
    rng=None,
    init: TailCounts | None = None,
) -> list[SteadyEstimate]:
    """Time-average S_i over ``batches`` consecutive windows after a burn-in.

    ``burn_in`` defaults to ten times eta (or ten time units for infinite eta).
    Returns estimates for levels ``0..levels``.
    """
    if batches < 2:
        raise ValueError("need at least two batches")
    if burn_in is None:
        burn_in = 10.0 * (params.eta_float if math.isfinite(params.eta_float) else 1.0)
    init = init or TailCounts.empty(params.n)
    eng = Engine(init, params, rng)
    eng.run(burn_in)
    per_batch = np.zeros((batches, levels + 1))
    t = burn_in
    for b in range(batches):
        area = np.zeros(levels + 1)
        t += batch_len
        eng.run(t, area=area)
        per_batch[b] = area / (batch_len * params.n)
    mean, se = batch_means(per_batch)
    mean[0], se[0] = 1.0, 0.0
    return [
        SteadyEstimate(i, float(mean[i]), float(se[i]), batches, params.n, params.d, params.lam)
        for i in range(levels + 1)
    ]
