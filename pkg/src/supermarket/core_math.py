"""Parameters, weighted norms, the correction function g, the fixed point and
the Lyapunov function shared by the simulator and the limit solvers."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

import numpy as np


class Eta(enum.Enum):
    """Distinguished value for an infinite scaling constant."""

    INFINITY = "inf"

    def __repr__(self) -> str:
        return "Eta.INFINITY"

    def __str__(self) -> str:
        return "inf"


INFINITY = Eta.INFINITY

EtaValue = Union[float, Eta]


def is_infinite(eta: EtaValue) -> bool:
    return eta is INFINITY


def parse_eta(value) -> EtaValue:
    if value is INFINITY:
        return INFINITY
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity"):
        return INFINITY
    eta = float(value)
    if math.isinf(eta):
        raise ValueError("use Eta.INFINITY (or the string 'inf') for an infinite eta")
    return eta


@dataclass(frozen=True)
class ModelParams:
    """Supermarket model with ``n`` servers and ``d`` choices in heavy traffic.

    ``lam`` is the per-server arrival rate; when ``eta`` is finite and ``lam``
    is omitted it is derived as ``1 - beta/eta``.
    """

    n: int
    d: int = 2
    beta: float = 1.0
    eta: EtaValue = INFINITY
    lam: float = field(default=None)  # type: ignore[assignment]
    alpha: float = 0.25
    rho: float = field(default=None)  # type: ignore[assignment]
    q_const: float = 1.0
    istar_factor: float = 0.5

    def __post_init__(self):
        eta = parse_eta(self.eta)
        object.__setattr__(self, "eta", eta)
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"d must be an integer >= 2, got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not is_infinite(eta) and eta < 1:
            raise ValueError(f"eta must be >= 1 or INFINITY, got {eta}")
        if self.lam is None:
            if is_infinite(eta):
                lam = 1.0
            else:
                if not self.beta < eta:
                    raise ValueError("lambda = 1 - beta/eta lies in (0,1) only when beta < eta")
                lam = 1.0 - self.beta / eta
            object.__setattr__(self, "lam", lam)
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not (0.0 < self.alpha < 0.5):
            raise ValueError("alpha must lie in (0, 1/2)")
        if self.rho is None:
            object.__setattr__(self, "rho", float(self.d + 1))
        if not self.rho > 1:
            raise ValueError("rho must exceed 1")
        if not (0.0 < self.istar_factor < 1.0):
            raise ValueError("istar_factor must lie in (0, 1)")

    @classmethod
    def from_heavy_traffic(cls, n: int, beta: float, eta: EtaValue, **kw) -> "ModelParams":
        return cls(n=n, beta=beta, eta=eta, **kw)

    @classmethod
    def from_lambda(cls, n: int, lam: float, d: int = 2, beta: float = 1.0, **kw) -> "ModelParams":
        """Fixed arrival rate; eta is set to beta/(1-lam) so the pair stays consistent."""
        eta = INFINITY if lam >= 1.0 else max(1.0, beta / (1.0 - lam))
        return cls(n=n, d=d, beta=beta, eta=eta, lam=lam, **kw)

    @property
    def eta_float(self) -> float:
        return math.inf if is_infinite(self.eta) else float(self.eta)

    @property
    def admissible(self) -> bool:
        """Heavy-traffic admissibility: eta <= Q * sqrt(n)."""
        return not is_infinite(self.eta) and self.eta <= self.q_const * math.sqrt(self.n)

    @property
    def istar(self) -> float:
        return istar(self.eta, self.alpha, self.rho, self.istar_factor)

    @property
    def threshold(self) -> float:
        """Stopping threshold eta**alpha."""
        return self.eta_float ** self.alpha

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "beta": self.beta,
            "eta": str(self.eta) if is_infinite(self.eta) else self.eta,
            "lam": self.lam,
            "alpha": self.alpha,
            "rho": self.rho,
            "q_const": self.q_const,
            "istar_factor": self.istar_factor,
        }


def istar(eta: EtaValue, alpha: float, rho: float, factor: float = 0.5) -> float:
    """Highest level watched by the stopping time: (factor*alpha) log_rho eta."""
    if is_infinite(eta):
        return math.inf
    return factor * alpha * math.log(eta) / math.log(rho)


def _check_rho(rho: float) -> None:
    if not rho > 1:
        raise ValueError(f"rho must exceed 1, got {rho}")


def rho_norm(x, rho: float, tail: float = 0.0) -> float:
    """Weighted norm sum_i rho**-i |x_i| of a finite sequence.

    ``tail`` is the constant magnitude assumed for every index past the end of
    ``x``; it contributes ``tail * rho**-len(x) / (1 - 1/rho)``.
    """
    _check_rho(rho)
    x = np.asarray(x, dtype=float)
    w = rho ** -np.arange(x.shape[0], dtype=float)
    total = float(np.sum(w * np.abs(x)))
    if tail:
        total += abs(tail) * rho ** -x.shape[0] / (1.0 - 1.0 / rho)
    return total


def rho_norm_path(paths, rho: float, t: float | None = None, grid=None, tail: float = 0.0) -> float:
    """Path norm sum_i rho**-i sup_{s<=t} |x_i(s)|.

    ``paths`` has shape (levels, len(grid)). ``grid`` defaults to the column
    index; when ``t`` is given only grid times <= t are used.
    """
    _check_rho(rho)
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    if grid is not None:
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or grid.shape[0] != paths.shape[1]:
            raise ValueError("paths and grid have mismatched lengths")
        if t is not None:
            if grid[0] > 0 or grid[-1] < t - 1e-12 * max(1.0, abs(t)):
                raise ValueError("grid does not cover [0, t]")
            paths = paths[:, grid <= t + 1e-12 * max(1.0, abs(t))]
    sups = np.max(np.abs(paths), axis=1) if paths.shape[1] else np.zeros(paths.shape[0])
    return rho_norm(sups, rho, tail=tail)


def g_eval(eta: EtaValue, d: int, x):
    """Correction g(x) = (eta/d)(1 - x/eta)**d - eta/d + x; zero for infinite eta."""
    if is_infinite(eta):
        return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0
    x = np.asarray(x, dtype=float)
    out = (eta / d) * (1.0 - x / eta) ** d - eta / d + x
    return out if out.ndim else float(out)


def g_eval_binomial(eta: EtaValue, d: int, x):
    """Same function via (1/d) sum_{l=2}^d C(d,l) (-1)^l x^l / eta^(l-1)."""
    if is_infinite(eta):
        return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for l in range(2, d + 1):
        out = out + math.comb(d, l) * (-1) ** l * x**l / eta ** (l - 1)
    out = out / d
    return out if out.ndim else float(out)


def g_derivative(eta: EtaValue, d: int, x):
    if is_infinite(eta):
        return np.zeros_like(np.asarray(x, dtype=float))
    x = np.asarray(x, dtype=float)
    return 1.0 - (1.0 - x / eta) ** (d - 1)


def g_lipschitz_bound(eta: EtaValue, d: int) -> float:
    """Lipschitz constant of g on [-eta-2, eta+2]."""
    if is_infinite(eta):
        raise ValueError("the Lipschitz bound is stated for finite eta")
    return float(4**d)


def lyapunov_rate(d: int) -> float:
    """Exponential decay rate (sqrt(d) - 1)**2 of the Lyapunov function."""
    return (math.sqrt(d) - 1.0) ** 2


def fixed_point(d: int, pi1, L: int, exact: bool = False) -> np.ndarray:
    """pi_i = pi1 (d**i - 1)/(d - 1) for i = 0..L.

    With ``exact=True`` the entries are Fractions (object array), so the
    three-term recurrence holds with zero residual.
    """
    if L < 2:
        raise ValueError("fixed point needs L >= 2")
    if exact:
        p = Fraction(pi1)
        return np.array([p * (d**i - 1) / (d - 1) for i in range(L + 1)], dtype=object)
    i = np.arange(L + 1, dtype=float)
    return float(pi1) * (float(d) ** i - 1.0) / (d - 1.0)


def lyapunov_phi(T, pi, d: int):
    """Phi = sum_{i>=1} d**(-i/2) |T_i - pi_i| over the common truncation."""
    T = np.asarray(T, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if T.shape != pi.shape:
        raise ValueError(f"length mismatch: {T.shape} vs {pi.shape}")
    i = np.arange(1, T.shape[-1], dtype=float)
    w = float(d) ** (-i / 2.0)
    return np.sum(w * np.abs(T[..., 1:] - pi[..., 1:]), axis=-1)
