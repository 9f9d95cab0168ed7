"""Deterministic limit dynamics: the truncated linear system and the stopped
integral system solved segment by segment with a contraction iteration."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core_math import (
    INFINITY,
    EtaValue,
    g_eval,
    is_infinite,
    istar as _istar,
    lyapunov_phi,
    rho_norm,
)


class Closure(enum.Enum):
    """Value used for the phantom level L+1 of a truncated sequence."""

    ZERO = "zero"
    GEOMETRIC = "geometric"
    FROZEN = "frozen"


class SolverFault(RuntimeError):
    pass


def _closure(value) -> Closure:
    return value if isinstance(value, Closure) else Closure(str(value).lower())


@dataclass
class LimitState:
    T: np.ndarray
    closure: Closure = Closure.GEOMETRIC
    phantom: float | None = None

    def __post_init__(self):
        self.T = np.array(self.T, dtype=object if np.asarray(self.T).dtype == object else float)
        self.closure = _closure(self.closure)
        if self.T.ndim != 1 or self.T.shape[0] < 3:
            raise ValueError("a limit state needs levels 0..L with L >= 2")
        if self.T[0] != 0:
            raise ValueError("T_0 must be zero")
        if self.closure is Closure.FROZEN and self.phantom is None:
            self.phantom = frozen_phantom(self.T)

    @property
    def L(self) -> int:
        return self.T.shape[0] - 1


def frozen_phantom(T):
    """Phantom for the FROZEN closure: level L+1 held at the initial value of level L."""
    return T[-1]


def phantom_value(T, d: int, closure: Closure, frozen=None):
    if closure is Closure.ZERO:
        return 0 * T[-1]
    if closure is Closure.GEOMETRIC:
        return (d + 1) * T[-1] - d * T[-2]
    if frozen is None:
        raise ValueError("FROZEN closure needs a phantom value")
    return frozen


def rhs_limit(T, d: int, closure=Closure.GEOMETRIC, phantom=None) -> np.ndarray:
    """Derivative of the linear limit system.

    dT_i/dt = d (T_{i-1} - T_i) + (T_{i+1} - T_i) for i >= 1, dT_0/dt = 0.
    Works along the last axis, and in exact arithmetic for object arrays.
    """
    if isinstance(T, LimitState):
        T, closure, phantom = T.T, T.closure, T.phantom
    closure = _closure(closure)
    T = np.asarray(T)
    if T.shape[-1] < 3:
        raise ValueError("need levels 0..L with L >= 2")
    up = np.empty_like(T)
    up[..., :-1] = T[..., 1:]
    up[..., -1] = phantom_value(np.moveaxis(T, -1, 0), d, closure, phantom)
    out = np.empty_like(T)
    out[..., 1:] = d * (T[..., :-1] - T[..., 1:]) + (up[..., 1:] - T[..., 1:])
    out[..., 0] = 0 * T[..., 0]
    return out


@dataclass
class LimitPath:
    grid: np.ndarray
    T: np.ndarray  # (L+1, len(grid))
    closure: Closure = Closure.GEOMETRIC
    t_star: float = math.inf
    info: dict = field(default_factory=dict)

    @property
    def L(self) -> int:
        return self.T.shape[0] - 1

    def norm(self, rho: float, t: float | None = None) -> float:
        from .core_math import rho_norm_path

        return rho_norm_path(self.T, rho, t=t, grid=self.grid)

    def phi(self, pi, d: int) -> np.ndarray:
        """Lyapunov function at every grid time."""
        return lyapunov_phi(self.T.T, np.broadcast_to(np.asarray(pi, float), self.T.T.shape), d)


def _rk4_step(T, h, d, closure, phantom):
    k1 = rhs_limit(T, d, closure, phantom)
    k2 = rhs_limit(T + 0.5 * h * k1, d, closure, phantom)
    k3 = rhs_limit(T + 0.5 * h * k2, d, closure, phantom)
    k4 = rhs_limit(T + h * k3, d, closure, phantom)
    return T + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_limit(
    T0,
    d: int,
    horizon: float,
    dt: float,
    closure=None,
    max_step: float | None = None,
    rho: float | None = None,
    blowup: float = 1e6,
) -> LimitPath:
    """Classical RK4 on the truncated system, recorded every ``dt``.

    Internal steps never exceed ``max_step`` (default 0.1/(d+1)); a grid
    interval longer than that is split into equal substeps.
    """
    if isinstance(T0, LimitState):
        state = T0 if closure is None else LimitState(T0.T, closure, T0.phantom)
    else:
        state = LimitState(T0, Closure.GEOMETRIC if closure is None else closure)
    if dt <= 0:
        raise ValueError("dt must be positive")
    max_step = 0.1 / (d + 1) if max_step is None else max_step
    rho = float(d + 1) if rho is None else rho
    sub = max(1, int(math.ceil(dt / max_step - 1e-9)))
    h = dt / sub
    nsteps = int(math.floor(horizon / dt + 1e-9))
    grid = np.arange(nsteps + 1) * dt
    T = np.asarray(state.T, dtype=float).copy()
    out = np.empty((T.shape[0], nsteps + 1))
    out[:, 0] = T
    phantom = state.phantom
    for k in range(1, nsteps + 1):
        for _ in range(sub):
            T = _rk4_step(T, h, d, state.closure, phantom)
            T[0] = 0.0
        if not rho_norm(T, rho) <= blowup:
            raise SolverFault(f"rho-norm exceeded {blowup:g} at t={k * dt:g}")
        out[:, k] = T
    return LimitPath(grid, out, state.closure, info={"substeps": sub, "h": h})


# --- stopped integral system -------------------------------------------------


@dataclass
class IntegralArgs:
    """Arguments (b, y, lam, eta) of the integral system plus region constants.

    ``y`` is sampled on the solver's output grid with shape (L+1, len(grid)) and
    is read as piecewise constant (right-continuous); ``None`` means y = 0.
    """

    b: np.ndarray
    y: np.ndarray | None = None
    lam: float = 1.0
    eta: EtaValue = INFINITY
    d: int = 2
    alpha: float = 0.25
    rho: float = 3.0
    K: float | None = None
    istar_factor: float = 0.5
    closure: Closure = Closure.GEOMETRIC

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).copy()
        self.b[0] = 0.0
        self.closure = _closure(self.closure)
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=float)
            if self.y.shape[0] != self.b.shape[0]:
                raise ValueError("y must have one row per level of b")
        if self.K is not None:
            if rho_norm(self.b, self.rho) > self.K:
                raise ValueError("||b||_rho exceeds K")
            if self.y is not None and rho_norm(np.max(np.abs(self.y), axis=1), self.rho) > self.K:
                raise ValueError("||y||_rho,t exceeds K")

    @property
    def L(self) -> int:
        return self.b.shape[0] - 1

    @property
    def istar(self) -> float:
        return _istar(self.eta, self.alpha, self.rho, self.istar_factor)

    def bounds(self) -> np.ndarray:
        """Per-level bound defining the region B(eta); inf for infinite eta."""
        L = self.L
        if is_infinite(self.eta):
            return np.full(L + 1, np.inf)
        eta = float(self.eta)
        lev = np.arange(L + 1)
        bound = np.where(lev <= self.istar, eta**self.alpha, eta + 1.0)
        bound[0] = np.inf
        return bound

    def contraction_threshold(self) -> float:
        """Strict upper bound on the segment length making the map a contraction."""
        d, rho = self.d, self.rho
        return 1.0 / (self.lam * d * (1.0 + 1.0 / rho) * (1.0 + 4.0**d) + 1.0 + rho)

    def growth_rate(self) -> float:
        d, rho = self.d, self.rho
        return self.lam * d * (1.0 + 4.0**d) * (1.0 + 1.0 / rho) + 1.0 + rho


# cumulative 4th-order quadrature on 4 equal subintervals (cubic through 4 nodes)
_W_INTERVAL = np.array(
    [
        [9, 19, -5, 1, 0],
        [-1, 13, 13, -1, 0],
        [0, -1, 13, 13, -1],
        [0, 1, -5, 19, 9],
    ],
    dtype=float,
) / 24.0
_W_CUM = np.vstack([np.zeros(5), np.cumsum(_W_INTERVAL, axis=0)])
NODES = 4


def _drift(x, args: IntegralArgs, phantom):
    """Integrand of the integral system at every node; x has shape (L+1, nodes)."""
    d, lam = args.d, args.lam
    g = g_eval(args.eta, d, x) if not is_infinite(args.eta) else 0.0
    lin = x - g
    up = np.empty_like(x)
    up[:-1] = x[1:]
    up[-1] = phantom_value(x, d, args.closure, phantom)
    out = np.zeros_like(x)
    out[1:] = -lam * d * (lin[1:] - lin[:-1]) + (up[1:] - x[1:])
    return out


def _weighted_sup(diff, rho):
    w = rho ** -np.arange(diff.shape[0], dtype=float)
    return float(np.sum(w * np.max(np.abs(diff), axis=1)))


@dataclass
class PicardPath(LimitPath):
    ratios: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    segment: float = 0.0


def _apply(x, c, h, args, phantom, bound):
    """One application of the stopped map on a segment.

    Returns the new iterate and the node index where it freezes (or None).
    """
    gam = c[:, None] + h * (_drift(x, args, phantom) @ _W_CUM.T)
    gam[0] = 0.0
    out_of = np.any(np.abs(gam[:, 1:]) >= bound[:, None], axis=0)
    hit = np.nonzero(out_of)[0]
    if hit.size:
        k = int(hit[0]) + 1
        gam[:, k:] = gam[:, k : k + 1]
        return gam, k
    return gam, None


def picard_solve(
    args: IntegralArgs,
    horizon: float,
    grid_dt: float,
    tol: float = 1e-10,
    max_iters: int = 60,
) -> PicardPath:
    """Solve the stopped integral system by contraction on short segments.

    Each segment has length at most half the contraction threshold and lies
    inside one grid cell, so y is constant on it. The iterate is refined until
    successive iterates differ by less than ``tol`` in the weighted sup norm;
    the solution is then frozen from the first node outside B(eta).
    """
    L = args.L
    nsteps = int(math.floor(horizon / grid_dt + 1e-9))
    grid = np.arange(nsteps + 1) * grid_dt
    y = np.zeros((L + 1, nsteps + 1)) if args.y is None else args.y
    if y.shape[1] < nsteps + 1:
        raise ValueError("y does not cover the output grid")
    bound = args.bounds()
    rho = args.rho

    start = args.b + y[:, 0]
    start[0] = 0.0
    out = np.empty((L + 1, nsteps + 1))
    out[:, 0] = start
    if np.any(np.abs(start) > bound):
        out[:] = start[:, None]
        return PicardPath(grid, out, args.closure, t_star=0.0, segment=0.0)

    t_half = 0.5 * args.contraction_threshold()
    per_cell = max(1, int(math.ceil(grid_dt / t_half - 1e-12)))
    seg = grid_dt / per_cell
    h = seg / NODES
    phantom = None
    if args.closure is Closure.FROZEN:
        phantom = frozen_phantom(start)

    ratios: list[float] = []
    iters: list[int] = []
    c = start.copy()
    t_star = math.inf
    for j in range(nsteps):
        for s in range(per_cell):
            x = np.repeat(c[:, None], NODES + 1, axis=1)
            prev = None
            for r in range(1, max_iters + 1):
                new, frozen_at = _apply(x, c, h, args, phantom, bound)
                diff = _weighted_sup(new - x, rho)
                if prev is not None and prev > 0:
                    ratios.append(diff / prev)
                prev = diff
                x = new
                if diff < tol:
                    break
            else:
                raise SolverFault(
                    f"no convergence within {max_iters} iterations on segment at t={grid[j] + s * seg:g}"
                )
            iters.append(r)
            if frozen_at is not None:
                t_star = grid[j] + s * seg + frozen_at * h
                c = x[:, frozen_at].copy()
                break
            c = x[:, -1].copy()
        if math.isfinite(t_star):
            out[:, j + 1 :] = c[:, None]
            break
        # right-continuous jump of y at the next grid time
        c = c + (y[:, j + 1] - y[:, j])
        c[0] = 0.0
        out[:, j + 1] = c
        if np.any(np.abs(c) >= bound):
            t_star = float(grid[j + 1])
            out[:, j + 1 :] = c[:, None]
            break
    return PicardPath(
        grid, out, args.closure, t_star=t_star,
        ratios=np.asarray(ratios), iterations=np.asarray(iters, dtype=int), segment=seg,
        info={"threshold": 2 * t_half, "per_cell": per_cell},
    )


def growth_bound_check(path: LimitPath, args: IntegralArgs, horizon: float | None = None) -> bool:
    """Check ||x||_{rho,t} <= (||b||_rho + ||y||_{rho,t}) exp(C t) at every grid time."""
    grid = path.grid
    keep = grid <= (grid[-1] if horizon is None else horizon) + 1e-12
    grid = grid[keep]
    x = np.abs(path.T[:, keep])
    rho = args.rho
    w = rho ** -np.arange(x.shape[0], dtype=float)
    run_x = w @ np.maximum.accumulate(x, axis=1)
    if args.y is None:
        run_y = np.zeros_like(grid)
    else:
        run_y = w @ np.maximum.accumulate(np.abs(args.y[:, keep]), axis=1)
    bound = (rho_norm(args.b, rho) + run_y) * np.exp(args.growth_rate() * grid)
    return bool(np.all(run_x <= bound * (1 + 1e-12)))
