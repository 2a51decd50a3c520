"""Exact and semi-exact solvers for the worked observation models.

Water-filling levels are found by an exact breakpoint scan of the piecewise
linear budget residual (no iterative tolerance); the Monte Carlo functionals
report a value together with its standard error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ensembles import GramEnsemble, sobolev_eigenvalues

__all__ = [
    "SequenceProblem",
    "WaterfillSolution",
    "pinsker_waterfill",
    "kernel_waterfill",
    "sobolev_rate",
    "dicker_functional",
    "mourtada_limit",
    "markov_phi",
    "covshift_lower",
]


@dataclass(frozen=True)
class SequenceProblem:
    """Diagonal sequence model: per-coordinate noise eps_j, ellipsoid weights
    a_j (nondecreasing), radius C, truncation length k."""

    eps: np.ndarray
    a: np.ndarray
    C: float
    k: int

    def __post_init__(self):
        eps = np.asarray(self.eps, dtype=float)
        a = np.asarray(self.a, dtype=float)
        if eps.shape != (self.k,) or a.shape != (self.k,):
            raise ValueError(f"eps and a must have length k={self.k}")
        if np.any(eps <= 0) or np.any(a <= 0) or self.C <= 0:
            raise ValueError("eps, a and C must be positive")
        if np.any(np.diff(a) < -1e-12):
            raise ValueError("a must be nondecreasing")
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "a", a)


@dataclass(frozen=True)
class WaterfillSolution:
    """Solved allocation: optimal value, water level, per-coordinate
    allocation and the number of active coordinates."""

    value: float
    level: float
    allocation: np.ndarray
    active_set_size: int


def waterfill_level(a: np.ndarray, w: np.ndarray, budget: float) -> float:
    """Exact level m solving  sum_j w_j a_j (m - a_j)_+ = budget.

    The residual is piecewise linear and strictly increasing past the
    smallest breakpoint, so the active segment is located by a scan over the
    sorted breakpoints and the level is solved in closed form on it.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    order = np.argsort(a, kind="stable")
    a_s = a[order]
    w_s = w[order]
    p1 = np.cumsum(w_s * a_s)
    p2 = np.cumsum(w_s * a_s**2)
    # Residual evaluated at each breakpoint m = a_s[k] with coords < k active.
    residual_at_bp = np.concatenate(([0.0], p1[:-1] * a_s[1:] - p2[:-1]))
    idx = np.searchsorted(residual_at_bp, budget, side="left")
    k = min(idx, len(a_s)) - 1 if idx > 0 else 0
    # Active set is coords 0..k on the segment starting at a_s[k].
    k = max(k, 0)
    return (budget + p2[k]) / p1[k]


def pinsker_waterfill(seq: SequenceProblem) -> WaterfillSolution:
    """Closed-form diagonal allocation for the truncated sequence model:

        maximize  sum_j tau_j^2 eps_j^2 / (tau_j^2 + eps_j^2)
        s.t.      sum_j a_j^2 tau_j^2 <= C^2.

    The stationarity system gives tau_j^2 = eps_j^2 (m - a_j)_+ / a_j with
    the water level m (= 1/sqrt(eta) in Lagrange form) solving
    sum_j a_j eps_j^2 (m - a_j)_+ = C^2; the budget always binds because the
    objective is strictly increasing in every coordinate.
    """
    a, eps2, c2 = seq.a, seq.eps**2, seq.C**2
    m = waterfill_level(a, eps2, c2)
    gain = np.maximum(m - a, 0.0)
    tau2 = eps2 * gain / a
    value = float(np.sum(eps2 * gain) / m)
    spent = float(np.sum(a**2 * tau2))
    if abs(spent - c2) > 1e-9 * c2:
        raise AssertionError(f"water-fill budget violated: {spent} vs {c2}")
    return WaterfillSolution(
        value=value,
        level=float(m),
        allocation=tau2,
        active_set_size=int(np.count_nonzero(gain > 0)),
    )


def _normalize_mu(mu, extend):
    if callable(mu):
        gen = mu
        init = np.asarray(gen(np.arange(1, 1025)), dtype=float)
        return init, gen
    arr = np.asarray(mu, dtype=float)
    if arr.ndim != 1 or len(arr) < 1:
        raise ValueError("mu must be a nonempty 1-d sequence")
    return arr, extend


def kernel_waterfill(
    mu,
    n: float,
    rho: float,
    sigma: float,
    extend: Callable[[np.ndarray], np.ndarray] | None = None,
    max_k: int = 1 << 22,
) -> WaterfillSolution:
    """Water-filling characterization of the kernel effective dimension:

        level:  sum_k (1/sqrt(mu_k)) (lam - 1/sqrt(mu_k))_+ = n rho^2 / sigma^2
        value:  dbar = sum_k (1/lam) (lam - 1/sqrt(mu_k))_+

    ``mu`` is a positive nonincreasing truncated spectrum (array) or a
    generator ``j -> mu_j`` over 1-based indices.  When a generator is
    available (passed as ``mu`` or via ``extend``), the truncation is doubled
    until the solved level sits strictly below the last breakpoint, mirroring
    the stabilization of the level under truncation growth; if ``max_k`` is
    exhausted first an error reports the level and the last breakpoint.  With
    a plain array and no generator the finite truncation itself defines the
    problem and no extension is attempted.

    The ``allocation`` holds the simplex weights
    gamma_j = (sigma^2/(n rho^2)) (1/sqrt(mu_j)) (lam - 1/sqrt(mu_j))_+,
    which sum to one.
    """
    mu_arr, gen = _normalize_mu(mu, extend)
    if np.any(mu_arr <= 0):
        raise ValueError("kernel eigenvalues must be strictly positive")
    if np.any(np.diff(mu_arr) > 1e-12):
        raise ValueError("kernel eigenvalues must be nonincreasing")
    budget = n * rho**2 / sigma**2
    if budget <= 0:
        raise ValueError("n * rho^2 / sigma^2 must be positive")

    while True:
        a = 1.0 / np.sqrt(mu_arr)
        lam = waterfill_level(a, np.ones_like(a), budget)
        if gen is None or lam <= a[-1]:
            break
        if 2 * len(mu_arr) > max_k:
            raise RuntimeError(
                f"truncation insufficient after extension to k={len(mu_arr)}: "
                f"level {lam:.6e} exceeds last breakpoint {a[-1]:.6e}"
            )
        extra = np.asarray(gen(np.arange(len(mu_arr) + 1, 2 * len(mu_arr) + 1)), dtype=float)
        mu_arr = np.concatenate([mu_arr, extra])

    gain = np.maximum(lam - a, 0.0)
    dbar = float(np.sum(gain) / lam)
    gamma = a * gain / budget
    spent = float(np.sum(a * gain))
    if abs(spent - budget) > 1e-9 * budget:
        raise AssertionError(f"water-fill budget violated: {spent} vs {budget}")
    return WaterfillSolution(
        value=dbar,
        level=float(lam),
        allocation=gamma,
        active_set_size=int(np.count_nonzero(gain > 0)),
    )


def sobolev_rate(beta: float, dim_x: int, grid) -> float:
    """Fitted log-log slope of the effective dimension against n rho^2/sigma^2
    for the smoothness-beta spectrum mu_j = ceil(j/2)^(-2 beta / dim_x).

    The grid must span at least three decades.  The asymptotic slope is
    dim_x / (2 beta + dim_x).
    """
    grid = np.asarray(grid, dtype=float)
    if len(grid) < 2 or grid.max() / grid.min() < 1e3:
        raise ValueError("grid must span at least three decades of n rho^2/sigma^2")

    def gen(j):
        return np.ceil(np.asarray(j) / 2.0) ** (-2.0 * beta / dim_x)

    dbars = [kernel_waterfill(gen, g, 1.0, 1.0).value for g in grid]
    slope, _ = np.polyfit(np.log(grid), np.log(dbars), 1)
    return float(slope)


def _sample_cov_eigs(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """All d eigenvalues of Sigma_hat = X^T X / n for a standard normal X,
    computed on the smaller Gram side."""
    x = rng.standard_normal((n, d))
    if d <= n:
        lam = np.linalg.eigvalsh(x.T @ x / n)
    else:
        lam = np.concatenate([np.zeros(d - n), np.linalg.eigvalsh(x @ x.T / n)])
    return np.maximum(lam, 0.0)


def dicker_functional(n: int, d: int, rho: float, sigma: float, N_mc: int, seed: int):
    """Monte Carlo estimate of E tr((Sigma_hat + (sigma^2 d / (n rho^2)) I)^{-1})
    for the isotropic Gaussian design.  Returns (value, stderr)."""
    if N_mc < 2:
        raise ValueError("N_mc must be >= 2")
    ridge = sigma**2 * d / (n * rho**2)
    rng = np.random.default_rng(seed)
    vals = np.empty(N_mc)
    for i in range(N_mc):
        lam = _sample_cov_eigs(rng, n, d)
        vals[i] = np.sum(1.0 / (lam + ridge))
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(N_mc))


def mourtada_limit(ensemble: GramEnsemble, Sigma_P):
    """Unconstrained-parameter limit functional: ensemble average of
    tr(Sigma_hat^{-1} Sigma_P).  Returns (value, stderr).

    Requires every sample covariance in the ensemble to be invertible; the
    limit is finite only when the design law makes the sample covariance
    almost surely nonsingular.
    """
    n = ensemble.meta.get("n")
    sigma = ensemble.meta.get("sigma", 1.0)
    if n is None:
        raise ValueError("ensemble meta must record the per-design sample size n")
    sig_p = np.atleast_2d(np.asarray(Sigma_P, dtype=float))
    vals = np.empty(ensemble.size)
    for i, g in enumerate(ensemble.grams):
        sample_cov = g * sigma**2 / n
        eigs = np.linalg.eigvalsh(0.5 * (sample_cov + sample_cov.T))
        if eigs[0] <= 1e-12 * max(eigs[-1], 1.0):
            raise np.linalg.LinAlgError(
                f"sample covariance singular in replicate {i} (min eig {eigs[0]:.3e}); "
                "the limit functional is finite only for almost surely invertible designs"
            )
        vals[i] = np.trace(np.linalg.solve(sample_cov, sig_p))
    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(vals.mean()), se


def markov_phi(M, rho: float, sigma: float, N_mc: int, seed: int):
    """Monte Carlo estimate of E[(1/rho^2 + z^T M z / sigma^2)^{-1}] over
    z ~ N(0, I_T).  Returns (value, stderr).

    The quadratic form is sampled through the spectrum of M: z^T M z equals
    sum_j lam_j u_j^2 in distribution with u standard normal.
    """
    if N_mc < 2:
        raise ValueError("N_mc must be >= 2")
    m = np.asarray(M, dtype=float)
    lam = np.maximum(np.linalg.eigvalsh(0.5 * (m + m.T)), 0.0)
    rng = np.random.default_rng(seed)
    u2 = rng.standard_normal((N_mc, len(lam))) ** 2
    q = u2 @ lam
    vals = 1.0 / (1.0 / rho**2 + q / sigma**2)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(N_mc))


def covshift_lower(mu, B: float, n: int, rho: float, sigma: float):
    """Lower bounds for kernel regression under a B-bounded covariate shift.

    d_star is the largest d with mu_d >= sigma^2 B d / (n rho^2) (0 when no
    index qualifies).  ``dstar_bound`` is sigma^2 B d_star / n;
    ``simplex_bound`` evaluates rho^2 sum_j min(sigma^2 B/(n rho^2),
    lambda_j mu_j) at the witness weights lambda_j = (sigma^2 B/(n rho^2)) /
    mu_j for j <= d_star, which are feasible for the probability simplex.

    Returns (simplex_bound, dstar_bound, d_star).
    """
    if B < 1.0:
        raise ValueError(f"B must be >= 1, got {B}")
    mu = np.asarray(mu, dtype=float)
    if np.any(np.diff(mu) > 1e-12):
        raise ValueError("mu must be nonincreasing")
    unit = sigma**2 * B / (n * rho**2)
    d_star = 0
    for j in range(1, len(mu) + 1):
        if mu[j - 1] >= unit * j:
            d_star = j
        else:
            break
    if d_star == 0:
        return 0.0, 0.0, 0
    weights = unit / mu[:d_star]
    if weights.sum() > 1.0 + 1e-12:
        raise AssertionError("witness weights exceed the simplex budget")
    simplex_bound = rho**2 * float(np.sum(np.minimum(unit, weights * mu[:d_star])))
    dstar_bound = sigma**2 * B * d_star / n
    if simplex_bound < dstar_bound - 1e-12 * max(dstar_bound, 1.0):
        raise AssertionError("simplex bound fell below the d_star bound")
    return simplex_bound, dstar_bound, d_star


def sobolev_mu_generator(beta: float, dim_x: int = 1):
    """Generator form of the smoothness-beta spectrum for water-fill extension."""

    def gen(j):
        return np.ceil(np.asarray(j, dtype=float) / 2.0) ** (-2.0 * beta / dim_x)

    return gen


def sequence_from_config(cfg: dict) -> SequenceProblem:
    """Sequence problem from JSON: {"eps": [...], "a": [...], "C": ...}."""
    for key in ("eps", "a", "C"):
        if key not in cfg:
            raise KeyError(key)
    eps = np.asarray(cfg["eps"], dtype=float)
    a = np.asarray(cfg["a"], dtype=float)
    if eps.shape != a.shape:
        raise ValueError("eps and a must have the same length")
    return SequenceProblem(eps=eps, a=a, C=float(cfg["C"]), k=len(eps))


# Re-export the spectrum convention helper for config parsing.
sobolev_spectrum = sobolev_eigenvalues
