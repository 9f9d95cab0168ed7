"""Steady-state checks: the expectation lower bound, the doubly exponential
heuristic near level log_d(eta), and its sweep over n."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .core_math import ModelParams
from .ctmc import RngSpec, SteadyEstimate, TailCounts, steady_state_sample
from .parallel import run_tasks

CSV_FIELDS = ("n", "d", "beta", "alpha", "level", "k", "mean", "stderr", "bound", "heuristic", "pass")


def expectation_lower_bound(lam: float, d: int, i: int) -> float:
    """1 - (1 - lam)(d**i - 1)/(d - 1); negative (vacuous) for large i."""
    return 1 - (1 - lam) * (d**i - 1) / (d - 1)


def heuristic_limit(beta: float, d: int, k: float) -> float:
    """exp(-beta d**k/(d-1)): conjectured limit of E S at level log_d(eta) + k."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    return math.exp(-beta * float(d) ** k / (d - 1))


def mean_field_profile(lam: float, d: int, levels: int) -> list[float]:
    """Tail fractions lam**((d**i - 1)/(d - 1)) of the fixed-rate fluid fixed point."""
    return [lam ** ((d**i - 1) / (d - 1)) for i in range(levels)]


@dataclass(frozen=True)
class Row:
    n: int
    d: int
    beta: float | str
    alpha: float | str
    level: int
    k: int | str
    mean: float
    stderr: float
    bound: float
    heuristic: float | str
    passed: bool | None

    @property
    def margin(self) -> float:
        """mean - bound; nonnegative means the bound holds without slack."""
        return self.mean - self.bound

    def as_csv(self) -> dict:
        out = asdict(self)
        out["pass"] = "" if self.passed is None else ("PASS" if self.passed else "FAIL")
        del out["passed"]
        return out


def verify_bound(params: ModelParams, levels, estimates: list[SteadyEstimate], slack: float = 3.0) -> list[Row]:
    """PASS at a level iff mean >= bound - slack*stderr (vacuous bounds pass)."""
    by_level = {e.level: e for e in estimates}
    rows = []
    for i in levels:
        est = by_level[i]
        if est.n != params.n or est.d != params.d or abs(est.lam - params.lam) > 1e-15:
            raise ValueError("estimates were produced with different parameters")
        bound = expectation_lower_bound(params.lam, params.d, i)
        if i == 0:
            mean, se = 1.0, 0.0
        else:
            mean, se = est.mean, est.stderr
        passed = bound < 0 or mean >= bound - slack * se
        rows.append(Row(params.n, params.d, params.beta, "", i, "", mean, se, bound, "", passed))
    return rows


def figure1_level(n: int, alpha_exp: float, d: int, k: int) -> int:
    """round(alpha log_d n) + k, rounding halves upward."""
    return int(math.floor(alpha_exp * math.log(n) / math.log(d) + 0.5)) + k


@dataclass(frozen=True)
class Figure1Task:
    n: int
    beta: float
    alpha_exp: float
    d: int
    levels: int
    burn_in_factor: float
    sample_factor: float
    batches: int
    rng: RngSpec


def _figure1_worker(task: Figure1Task) -> list[SteadyEstimate]:
    eta = task.n**task.alpha_exp
    params = ModelParams(n=task.n, d=task.d, beta=task.beta, eta=eta)
    init = TailCounts.from_fractions(task.n, mean_field_profile(params.lam, task.d, task.levels + 2))
    return steady_state_sample(
        params,
        burn_in=task.burn_in_factor * eta,
        batches=task.batches,
        batch_len=task.sample_factor * eta / task.batches,
        levels=task.levels,
        rng=task.rng,
        init=init,
    )


def figure1_experiment(
    beta: float = 2.0,
    alpha_exp: float = 0.75,
    d: int = 2,
    n_list=(2**10, 2**11, 2**12, 2**13, 2**14),
    k_list=(0, 1),
    seed: int = 0,
    burn_in_factor: float = 10.0,
    sample_factor: float = 50.0,
    batches: int = 20,
    tol: float = 0.08,
    workers: int = 1,
) -> list[Row]:
    """Steady-state E S at level round(alpha log_d n) + k against exp(-beta d^k/(d-1)).

    Each n runs with eta = n**alpha_exp and lambda = 1 - beta n**-alpha_exp,
    starting from the fixed-rate fluid profile. ``pass`` marks rows within
    ``tol`` of the heuristic line.
    """
    n_list = list(n_list)
    if n_list != sorted(n_list):
        raise ValueError("n_list must be ascending")
    for n in n_list:
        lam = 1.0 - beta * n ** (-alpha_exp)
        if not 0.0 < lam < 1.0:
            raise ValueError(f"lambda_n = {lam:g} is outside (0,1) for n={n}")
    k_list = list(k_list)
    if not n_list or not k_list:
        return []
    tasks = []
    for idx, n in enumerate(n_list):
        top = max(figure1_level(n, alpha_exp, d, k) for k in k_list)
        tasks.append(Figure1Task(n, beta, alpha_exp, d, max(top, 1) + 1, burn_in_factor,
                                 sample_factor, batches, RngSpec(seed, idx)))
    results = run_tasks(_figure1_worker, tasks, workers)
    rows = []
    for task, est in zip(tasks, results):
        lam = 1.0 - beta * task.n ** (-alpha_exp)
        for k in k_list:
            level = figure1_level(task.n, alpha_exp, d, k)
            if level < 0:
                mean, se = 1.0, 0.0
            else:
                mean, se = est[level].mean, est[level].stderr
            h = heuristic_limit(beta, d, k)
            rows.append(Row(task.n, d, beta, alpha_exp, level, k, mean, se,
                            expectation_lower_bound(lam, d, max(level, 0)), h, abs(mean - h) <= tol))
    return rows


@dataclass(frozen=True)
class ShortQueueReport:
    level: int
    mean: float
    stderr: float
    threshold: float
    bound: float
    passed: bool | None


def short_queue_vanishing(params: ModelParams, omega: float, estimates: list[SteadyEstimate]) -> ShortQueueReport:
    """Fraction of queues with at least log_d(eta) - omega jobs.

    PASS iff the estimate is at least 1 - 2 d**-omega; omega <= 0 is outside
    the hypothesis and only reported.
    """
    eta = params.eta_float
    if not math.isfinite(eta):
        raise ValueError("needs a finite eta")
    level = max(0, int(math.floor(math.log(eta) / math.log(params.d) - omega)))
    by_level = {e.level: e for e in estimates}
    if level not in by_level:
        raise ValueError(f"estimates do not cover level {level}")
    est = by_level[level]
    threshold = 1.0 - 2.0 * params.d ** (-omega)
    bound = expectation_lower_bound(params.lam, params.d, level)
    passed = None if omega <= 0 else est.mean >= threshold
    return ShortQueueReport(level, est.mean, est.stderr, threshold, bound, passed)
