"""Experiment configuration, CSV output, and the commands behind the CLI."""
from __future__ import annotations

import configparser
import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_math import ModelParams, fixed_point, parse_eta, rho_norm
from .ctmc import (
    RngSpec,
    TailCounts,
    extract_martingales,
    simulate_path,
    steady_state_sample,
)
from .limits import Closure, IntegralArgs, integrate_limit, picard_solve
from .parallel import resolve_workers, run_tasks
from .steady import CSV_FIELDS, figure1_experiment, verify_bound

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"seed": "0", "workers": "1", "out": "out"},
    "model": {
        "n": "1000", "d": "2", "beta": "1.0", "eta": "", "lambda": "",
        "alpha": "0.25", "rho": "", "q": "1.0",
    },
    "simulate": {
        "horizon": "10", "dt": "0.1", "levels": "12", "init": "empty", "shape": "linear",
        "c": "1.0", "event_log": "no",
    },
    "limit": {
        "mode": "rk4", "L": "20", "closure": "geometric", "init": "perturbed", "pi1": "1.0",
        "shape": "linear", "c": "1.0", "values": "", "horizon": "10", "dt": "0.01", "closure_sensitivity": "no",
    },
    "converge": {
        "n_list": "1000,10000,100000", "replications": "20", "i0": "5", "horizon": "5",
        "dt": "0.01", "shape": "linear", "c": "1.0", "L": "120", "levels": "",
    },
    "steady": {
        "n": "200", "d": "2", "lambda": "0.9", "levels": "1-8", "batches": "20",
        "batch_len": "500", "burn_in": "", "slack": "3",
    },
    "figure1": {
        "beta": "2.0", "alpha": "0.75", "d": "2", "n_list": "1024,2048,4096,8192,16384",
        "k_list": "0,1", "burn_in_factor": "10", "sample_factor": "50", "batches": "20", "tol": "0.08",
    },
}


class ConfigError(ValueError):
    pass


def load_config(path=None, overrides: dict | None = None) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    cfg.optionxform = str
    cfg.read_dict(DEFAULTS)
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            cfg.read_file(fh)
    for (section, key), value in (overrides or {}).items():
        if value is None:
            continue
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section, key, str(value))
    return cfg


# settings that cannot change any number in the output
NOT_ECHOED = {("run", "out"), ("run", "workers")}


def config_dict(cfg: configparser.ConfigParser) -> dict:
    return {
        s: {k: v for k, v in cfg.items(s) if (s, k) not in NOT_ECHOED}
        for s in cfg.sections()
    }


def int_list(text: str) -> list[int]:
    text = text.strip()
    if not text:
        return []
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (None, None)
            if lo is None:
                out.append(int(part))
                continue
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(float(part)))
    return out


def model_params(cfg, section: str = "model", **extra) -> ModelParams:
    m = cfg[section] if section in cfg else cfg["model"]
    get = lambda k, default="": (m.get(k, "") or cfg["model"].get(k, "") or default).strip()
    kw = dict(
        n=int(float(get("n"))),
        d=int(get("d", "2")),
        beta=float(get("beta", "1.0")),
        alpha=float(get("alpha", "0.25")),
        q_const=float(get("q", "1.0")),
    )
    if get("rho"):
        kw["rho"] = float(get("rho"))
    kw.update(extra)
    lam, eta = get("lambda"), get("eta")
    try:
        if lam:
            if eta:
                return ModelParams(eta=parse_eta(eta), lam=float(lam), **kw)
            return ModelParams.from_lambda(lam=float(lam), **kw)
        if not eta:
            raise ConfigError("model needs eta or lambda")
        return ModelParams(eta=parse_eta(eta), **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows, cfg=None) -> Path:
    """CSV with a leading comment line echoing the resolved config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    if cfg is not None:
        buf.write("# config: " + json.dumps(config_dict(cfg), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue())
    if cfg is not None:
        sidecar = path.with_suffix(".config.json")
        sidecar.write_text(json.dumps(config_dict(cfg), sort_keys=True, indent=2) + "\n")
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]) if len(lines) > 1 else np.zeros((0, len(header)))
    return header, data


def write_path_csv(path, grid, T, cfg=None) -> Path:
    header = ["t"] + [f"T_{i}" for i in range(T.shape[0])]
    rows = (np.concatenate([[t], T[:, j]]) for j, t in enumerate(grid))
    return write_csv(path, header, rows, cfg)


SHAPES = ("linear", "geometric")


def profile_target(d: int, c: float, L: int, shape: str = "linear") -> np.ndarray:
    """Limit initial condition: T_i(0) = c i (linear) or c d**i (geometric), T_0 = 0."""
    i = np.arange(L + 1, dtype=float)
    if shape == "linear":
        T = c * i
    elif shape == "geometric":
        T = c * float(d) ** i
        T[0] = 0.0
    else:
        raise ConfigError(f"unknown profile shape '{shape}'")
    return T


def profile_levels(params: ModelParams, c: float, shape: str = "linear", margin: int = 20) -> int:
    """Levels to track: where the profile reaches eta (all queues shorter), plus a margin."""
    eta = params.eta_float
    if not math.isfinite(eta):
        raise ConfigError("profile initial states need a finite eta")
    if shape == "linear":
        top = math.ceil(eta / c)
    else:
        top = math.ceil(math.log(max(eta / c, 1.0)) / math.log(params.d))
    return int(top) + margin


def profile_fractions(params: ModelParams, c: float, levels: int, shape: str = "linear") -> np.ndarray:
    """Tail fractions 1 - T_i(0)/eta, truncated at 0."""
    T = profile_target(params.d, c, levels, shape)
    return np.clip(1.0 - T / params.eta_float, 0.0, 1.0)


def initial_state(kind: str, params: ModelParams, c: float, levels: int, shape: str = "linear") -> TailCounts:
    """``empty`` or ``profile`` (largest-remainder rounding of the target fractions)."""
    if kind == "empty":
        return TailCounts.empty(params.n)
    if kind == "profile":
        return TailCounts.from_fractions(params.n, profile_fractions(params, c, levels, shape))
    raise ConfigError(f"unknown init '{kind}'")


# --- simulate ----------------------------------------------------------------


def cmd_simulate(cfg) -> Path:
    p = model_params(cfg)
    s = cfg["simulate"]
    seed = int(cfg["run"]["seed"])
    levels = int(s["levels"])
    init = initial_state(s["init"], p, float(s["c"]), levels, s["shape"])
    keep = s.getboolean("event_log")
    path = simulate_path(init, p, float(s["horizon"]), float(s["dt"]), levels, RngSpec(seed, 0), keep_log=keep)
    out = Path(cfg["run"]["out"])
    if keep:
        path.log.write(out / "events.csv")
    return write_path_csv(out / "simulate.csv", path.grid, path.T, cfg)


# --- limit -------------------------------------------------------------------


def limit_initial(cfg) -> np.ndarray:
    lim = cfg["limit"]
    d = int(cfg["model"]["d"])
    L = int(lim["L"])
    kind = lim["init"]
    if kind == "fixed-point":
        return fixed_point(d, float(lim["pi1"]), L)
    if kind == "perturbed":
        T = fixed_point(d, float(lim["pi1"]), L)
        T[1] += 1.0
        return T
    if kind == "profile":
        return profile_target(d, float(lim["c"]), L, lim["shape"])
    if kind == "values":
        vals = [float(v) for v in lim["values"].split(",")]
        if len(vals) != L + 1:
            raise ConfigError(f"values must list T_0..T_L ({L + 1} numbers)")
        return np.asarray(vals)
    raise ConfigError(f"unknown limit init '{kind}'")


def solve_limit(T0, d: int, horizon: float, dt: float, mode: str, closure, rho: float):
    if mode == "rk4":
        return integrate_limit(T0, d, horizon, dt, closure=closure, rho=rho)
    if mode == "picard":
        return picard_solve(IntegralArgs(T0, d=d, rho=rho, closure=closure), horizon, dt)
    raise ConfigError(f"unknown limit mode '{mode}'")


def cmd_limit(cfg) -> Path:
    lim = cfg["limit"]
    d = int(cfg["model"]["d"])
    rho = float(cfg["model"]["rho"] or d + 1)
    T0 = limit_initial(cfg)
    horizon, dt = float(lim["horizon"]), float(lim["dt"])
    out = Path(cfg["run"]["out"])
    path = solve_limit(T0, d, horizon, dt, lim["mode"], Closure(lim["closure"]), rho)
    target = write_path_csv(out / "limit.csv", path.grid, path.T, cfg)
    if lim.getboolean("closure_sensitivity"):
        sols = {c: solve_limit(T0, d, horizon, dt, lim["mode"], c, rho).T for c in Closure}
        rows = []
        names = list(Closure)
        for a in range(len(names)):
            for b in range(a + 1, len(names)):
                diff = float(np.max(np.abs(sols[names[a]] - sols[names[b]])))
                rows.append((names[a].value, names[b].value, diff))
        write_csv(out / "closure_sensitivity.csv", ["closure_a", "closure_b", "max_abs_diff"], rows, cfg)
    return target


# --- converge ----------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationTask:
    params: ModelParams
    c: float
    shape: str
    horizon: float
    dt: float
    levels: int
    i0: int
    rng: RngSpec


def _replicate(task: ReplicationTask) -> dict:
    p = task.params
    init = TailCounts.from_fractions(p.n, profile_fractions(p, task.c, task.levels, task.shape))
    path = simulate_path(init, p, task.horizon, task.dt, task.levels, task.rng, keep_log=True)
    top = max(int(path.log.levels.max()) if len(path.log) else 0, init.top)
    if top + 1 >= task.levels:
        raise RuntimeError(f"occupied level {top} exceeds tracked levels {task.levels}")
    mart = extract_martingales(path.log, p, path.grid)
    m_norm, n_norm = mart.norms(p.rho)
    T = path.T
    return {
        "T": T[: task.i0 + 1],
        "M": m_norm,
        "N": n_norm,
        "T_norm": path.norm(p.rho),
        "T0_norm": rho_norm(T[:, 0], p.rho, tail=p.eta_float),
    }


@dataclass
class ConvergenceRow:
    n: int
    eta: float
    replications: int
    i0: int
    horizon: float
    e_n: float
    e_se: float
    M_norm: float
    M_se: float
    N_norm: float
    N_se: float
    T_norm: float
    T_norm_se: float
    T0_norm: float

    FIELDS = (
        "n", "eta", "replications", "i0", "horizon", "e_n", "e_se", "M_norm", "M_se",
        "N_norm", "N_se", "T_norm", "T_norm_se", "T0_norm",
    )

    def values(self) -> tuple:
        return tuple(getattr(self, f) for f in self.FIELDS)


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def convergence_study(
    n_list,
    replications: int = 20,
    d: int = 2,
    beta: float = 1.0,
    q_const: float = 1.0,
    alpha: float = 0.25,
    rho: float | None = None,
    c: float = 1.0,
    shape: str = "linear",
    horizon: float = 5.0,
    dt: float = 0.01,
    i0: int = 5,
    L: int = 120,
    levels: int | None = None,
    seed: int = 0,
    workers: int = 1,
) -> list[ConvergenceRow]:
    """Discrepancy between averaged rescaled paths and the limit, per n.

    eta_n = sqrt(n)/Q; the simulated system starts from tail fractions
    1 - T_i(0)/eta_n (truncated at 0) for the chosen profile T(0), and the
    limit is integrated from T(0) on the same grid. ``levels`` defaults to
    the point where the profile reaches eta_n plus a margin.
    """
    rho = float(d + 1) if rho is None else rho
    if i0 >= L:
        raise ConfigError("i0 must be below the limit truncation L")
    limit = integrate_limit(profile_target(d, c, L, shape), d, horizon, dt, rho=rho)
    tasks = []
    plist = []
    for idx, n in enumerate(n_list):
        eta = math.sqrt(n) / q_const
        p = ModelParams(n=int(n), d=d, beta=beta, eta=eta, alpha=alpha, rho=rho, q_const=q_const)
        lv = profile_levels(p, c, shape) if levels is None else int(levels)
        T0 = np.minimum(profile_target(d, c, lv, shape), eta)
        watched = int(math.floor(p.istar))
        if watched >= 1 and np.any(T0[1 : watched + 1] > p.threshold):
            raise ConfigError(f"initial profile violates T_i(0) <= eta^alpha for n={n}")
        plist.append(p)
        for r in range(replications):
            tasks.append(ReplicationTask(p, c, shape, horizon, dt, lv, i0, RngSpec(seed, idx * replications + r)))
    results = run_tasks(_replicate, tasks, workers)
    rows = []
    for idx, p in enumerate(plist):
        res = results[idx * replications : (idx + 1) * replications]
        Ts = np.stack([r["T"] for r in res])
        mean_T = Ts.mean(axis=0)
        gap = np.abs(mean_T[1 : i0 + 1] - limit.T[1 : i0 + 1])
        e_n = float(gap.max())
        k = np.unravel_index(np.argmax(gap), gap.shape)
        e_se = float(Ts[:, 1 + k[0], k[1]].std(ddof=1) / math.sqrt(len(res))) if len(res) > 1 else float("nan")
        m, m_se = _mean_se([r["M"] for r in res])
        nn, n_se = _mean_se([r["N"] for r in res])
        tn, tn_se = _mean_se([r["T_norm"] for r in res])
        t0, _ = _mean_se([r["T0_norm"] for r in res])
        rows.append(ConvergenceRow(p.n, p.eta_float, len(res), i0, horizon, e_n, e_se, m, m_se, nn, n_se, tn, tn_se, t0))
    return rows


def cmd_converge(cfg) -> Path:
    cv = cfg["converge"]
    m = cfg["model"]
    rows = convergence_study(
        int_list(cv["n_list"]),
        replications=int(cv["replications"]),
        d=int(m["d"]),
        beta=float(m["beta"]),
        q_const=float(m["q"]),
        alpha=float(m["alpha"]),
        rho=float(m["rho"]) if m["rho"] else None,
        c=float(cv["c"]),
        shape=cv["shape"],
        horizon=float(cv["horizon"]),
        dt=float(cv["dt"]),
        i0=int(cv["i0"]),
        L=int(cv["L"]),
        levels=int(cv["levels"]) if cv["levels"].strip() else None,
        seed=int(cfg["run"]["seed"]),
        workers=resolve_workers(int(cfg["run"]["workers"])),
    )
    return write_csv(Path(cfg["run"]["out"]) / "converge.csv", ConvergenceRow.FIELDS, [r.values() for r in rows], cfg)


# --- steady ------------------------------------------------------------------


def steady_rows_csv(rows) -> list[tuple]:
    return [tuple(r.as_csv()[f] for f in CSV_FIELDS) for r in rows]


def cmd_verify_bound(cfg) -> tuple[Path, bool]:
    st = cfg["steady"]
    levels = int_list(st["levels"])
    p = ModelParams.from_lambda(n=int(st["n"]), lam=float(st["lambda"]), d=int(st["d"]))
    rows = []
    if levels:
        burn = float(st["burn_in"]) if st["burn_in"] else None
        est = steady_state_sample(
            p, burn_in=burn, batches=int(st["batches"]), batch_len=float(st["batch_len"]),
            levels=max(levels), rng=RngSpec(int(cfg["run"]["seed"]), 0),
        )
        rows = verify_bound(p, levels, est, slack=float(st["slack"]))
    path = write_csv(Path(cfg["run"]["out"]) / "steady_bound.csv", CSV_FIELDS, steady_rows_csv(rows), cfg)
    return path, all(r.passed for r in rows)


def cmd_figure1(cfg) -> Path:
    f = cfg["figure1"]
    rows = figure1_experiment(
        beta=float(f["beta"]),
        alpha_exp=float(f["alpha"]),
        d=int(f["d"]),
        n_list=int_list(f["n_list"]),
        k_list=int_list(f["k_list"]),
        seed=int(cfg["run"]["seed"]),
        burn_in_factor=float(f["burn_in_factor"]),
        sample_factor=float(f["sample_factor"]),
        batches=int(f["batches"]),
        tol=float(f["tol"]),
        workers=resolve_workers(int(cfg["run"]["workers"])),
    )
    return write_csv(Path(cfg["run"]["out"]) / "figure1.csv", CSV_FIELDS, steady_rows_csv(rows), cfg)
