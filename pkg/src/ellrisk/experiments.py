"""Simulation pipelines behind the CLI: bound curves over mixture designs
(figure 1) and normalized functional decay for Markov covariates (figure 2).

Outputs are CSV with a versioned schema comment on the first line and
full-precision (17 significant digit) floats, so downstream plots and
regression tests are independent of rounding.  Every pipeline is a pure
function of (config, seed): grid points are independent jobs executed by a
bounded worker pool (ELLRISK_WORKERS, default 1) with per-job sub-seeds, and
rows are sorted deterministically before writing.
"""

from __future__ import annotations

import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .closed_form import markov_phi
from .ensembles import markov_m_matrix, markov_r_from_psi, mix_seed
from .functional import dicker_cd

__all__ = [
    "Figure1Config",
    "Figure2Config",
    "figure1",
    "figure2",
    "rows_to_csv",
    "psi_log_handle",
    "PSI_NAMES",
    "FIG1_SCHEMA",
    "FIG2_SCHEMA",
    "FIG1_COLUMNS",
    "FIG2_COLUMNS",
]

FIG1_SCHEMA = "fig1.v1"
FIG2_SCHEMA = "fig2.v1"
FIG1_COLUMNS = ("n", "tau", "lambda", "gamma", "d", "ell", "u", "stderr_ell", "stderr_u")
FIG2_COLUMNS = ("psi", "T", "tau", "phi_normalized", "stderr")

# Markov scaling functions, stored as t -> log(psi(t)) so fast-growing
# scalings never overflow; "iid" marks the r_t = 0 chain.
PSI_NAMES = ("iid", "5^t", "t+1", "1+log(t+1)", "1+loglog")

_PSI_LOG = {
    "5^t": lambda t: t * math.log(5.0),
    "t+1": lambda t: math.log(t + 1.0),
    "1+log(t+1)": lambda t: math.log(1.0 + math.log(t + 1.0)),
    "1+loglog": lambda t: math.log(1.0 + math.log(1.0 + math.log(t + 1.0))),
}


def psi_log_handle(name: str):
    """log-psi handle for a named scaling; None for the i.i.d. chain."""
    if name == "iid":
        return None
    if name not in _PSI_LOG:
        raise ValueError(f"unknown psi name {name!r}; expected one of {PSI_NAMES}")
    return _PSI_LOG[name]


def _default_gamma_grid() -> tuple:
    return tuple(np.geomspace(0.05, 4.0, 12))


def _default_t_grid() -> tuple:
    return (10, 32, 100, 316, 1000, 3162)


@dataclass(frozen=True)
class Figure1Config:
    n_list: tuple = (128, 512)
    tau_list: tuple = (1.0, 10.0)
    lambda_list: tuple = (0.0, 0.9, 0.99)
    gamma_grid: tuple = field(default_factory=_default_gamma_grid)
    replicates: int = 50
    seed: int = 0

    def __post_init__(self):
        if not (self.n_list and self.tau_list and self.lambda_list and self.gamma_grid):
            raise ValueError("all figure-1 grids must be nonempty")
        if any(g <= 0 for g in self.gamma_grid):
            raise ValueError("gamma values must be positive")
        if self.replicates < 2:
            raise ValueError("replicates must be >= 2")


@dataclass(frozen=True)
class Figure2Config:
    psi_names: tuple = PSI_NAMES
    T_grid: tuple = field(default_factory=_default_t_grid)
    tau_list: tuple = (1.0, 10.0)
    mc_trials: int = 5000
    seed: int = 0

    def __post_init__(self):
        if any(name not in PSI_NAMES for name in self.psi_names):
            bad = [n for n in self.psi_names if n not in PSI_NAMES]
            raise ValueError(f"unknown psi name(s) {bad}; expected subset of {PSI_NAMES}")
        if list(self.T_grid) != sorted(self.T_grid) or len(set(self.T_grid)) != len(self.T_grid):
            raise ValueError("T_grid must be strictly increasing")
        if self.mc_trials < 2:
            raise ValueError("mc_trials must be >= 2")


def _worker_count() -> int:
    raw = os.environ.get("ELLRISK_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_jobs(jobs, worker):
    count = _worker_count()
    if count == 1:
        return [worker(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=count) as pool:
        return list(pool.map(worker, jobs))


def _mixture_cov_eigs(rng: np.random.Generator, n: int, d: int, lam: float) -> np.ndarray:
    """Eigenvalues of the sample covariance for one zero-inflated Gaussian
    design, computed on the smaller Gram side."""
    mask = rng.random(n) < lam
    x = rng.standard_normal((n, d))
    if lam > 0.0:
        x /= math.sqrt(1.0 - lam)
        x[mask] = 0.0
    if d <= n:
        eigs = np.linalg.eigvalsh(x.T @ x / n)
    else:
        eigs = np.concatenate([np.zeros(d - n), np.linalg.eigvalsh(x @ x.T / n)])
    return np.maximum(eigs, 0.0)


def figure1(cfg: Figure1Config):
    """Bound curves over the zero-inflated Gaussian ensemble.

    For each (n, lambda, gamma) grid point with d = ceil(gamma * n), the
    upper curve at SNR tau averages (1/(tau^2 n)) tr((Sigma_hat + r I)^{-1})
    with ridge r = d/(n tau^2) over ``replicates`` designs, and the lower
    curve uses the sharpened ridge r / c_d (the smaller effective radius
    sqrt(c_d) rho inflates the ridge by 1/c_d).  Returns rows under
    FIG1_COLUMNS in deterministic (n, tau, lambda, gamma) order.
    """
    jobs = []
    for n in cfg.n_list:
        for lam in cfg.lambda_list:
            for gamma in cfg.gamma_grid:
                jobs.append((len(jobs), int(n), float(lam), float(gamma)))

    def worker(job):
        idx, n, lam, gamma = job
        d = math.ceil(gamma * n)
        cd = dicker_cd(d)
        rng = np.random.default_rng(mix_seed(cfg.seed, idx))
        per_tau = {t: ([], []) for t in cfg.tau_list}
        for _ in range(cfg.replicates):
            eigs = _mixture_cov_eigs(rng, n, d, lam)
            for tau in cfg.tau_list:
                ridge_u = d / (n * tau**2)
                ridge_l = ridge_u / cd
                scale = 1.0 / (tau**2 * n)
                per_tau[tau][0].append(scale * float(np.sum(1.0 / (eigs + ridge_l))))
                per_tau[tau][1].append(scale * float(np.sum(1.0 / (eigs + ridge_u))))
        out = []
        for tau in cfg.tau_list:
            ell = np.array(per_tau[tau][0])
            u = np.array(per_tau[tau][1])
            se_l = float(ell.std(ddof=1) / math.sqrt(len(ell)))
            se_u = float(u.std(ddof=1) / math.sqrt(len(u)))
            if ell.mean() > u.mean() + 2.0 * (se_l + se_u):
                raise ArithmeticError(
                    f"lower bound exceeded upper bound at n={n} tau={tau} "
                    f"lambda={lam} gamma={gamma}"
                )
            out.append(
                {
                    "n": n,
                    "tau": float(tau),
                    "lambda": lam,
                    "gamma": gamma,
                    "d": d,
                    "ell": float(ell.mean()),
                    "u": float(u.mean()),
                    "stderr_ell": se_l,
                    "stderr_u": se_u,
                }
            )
        return out

    rows = [row for chunk in _run_jobs(jobs, worker) for row in chunk]
    rows.sort(key=lambda r: (r["n"], r["tau"], r["lambda"], r["gamma"]))
    return rows


def figure2(cfg: Figure2Config):
    """Normalized Markov functional phi_T(tau) = Phi_T(tau, 1) / tau^2 on a
    T grid, one series per scaling function.

    The quadratic-form matrix is rebuilt per (psi, T) and evaluated by Monte
    Carlo; draws are sub-seeded by T only, so series at the same T share
    randomness (common random numbers tighten the cross-series ordering).
    Returns rows under FIG2_COLUMNS sorted by (tau, psi, T).
    """
    jobs = [(name, int(T)) for name in cfg.psi_names for T in cfg.T_grid]

    def worker(job):
        name, T = job
        handle = psi_log_handle(name)
        if handle is None:
            r = np.zeros(T)
        else:
            r = markov_r_from_psi(handle, T, log=True)
        m = markov_m_matrix(r)
        sub = mix_seed(cfg.seed, T)
        out = []
        for tau in cfg.tau_list:
            value, stderr = markov_phi(m, float(tau), 1.0, cfg.mc_trials, sub)
            out.append(
                {
                    "psi": name,
                    "T": T,
                    "tau": float(tau),
                    "phi_normalized": value / tau**2,
                    "stderr": stderr / tau**2,
                }
            )
        return out

    rows = [row for chunk in _run_jobs(jobs, worker) for row in chunk]
    order = {name: i for i, name in enumerate(PSI_NAMES)}
    rows.sort(key=lambda r: (r["tau"], order[r["psi"]], r["T"]))
    return rows


def _format_value(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def rows_to_csv(rows, columns, schema: str) -> str:
    """Render rows as CSV text with a schema comment line and fixed header."""
    buf = io.StringIO()
    buf.write(f"# schema={schema}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_format_value(row[c]) for c in columns) + "\n")
    return buf.getvalue()
