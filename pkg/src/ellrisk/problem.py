"""Estimation-instance geometry: constraint/error metrics, noise level, feasible priors.

An instance is a pair of SPD matrices (error metric ``K_e``, constraint metric
``K_c``), a constraint radius ``rho`` and a scalar noise level ``sigma``.  All
optimizers in this package work in whitened coordinates
``W = K_c^{-1/2} Omega K_c^{-1/2}``, where the prior feasible set becomes the
spectral trace ball ``{W : W >= eps*I, tr(W) <= rho^2}`` and the projection
onto it is exact (eigenvalue projection onto a floored simplex).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EllipticalProblem",
    "PriorCovariance",
    "new_problem",
    "feasible_project",
    "problem_from_config",
]

# Relative symmetry tolerance and eigenvalue-floor scale shared by all checks.
SYMMETRY_RTOL = 1e-10
FLOOR_SCALE = 1e-10

_FEAS_SLACK = 1e-8


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def _check_symmetric(m: np.ndarray, name: str) -> np.ndarray:
    scale = max(np.abs(m).max(), 1.0)
    gap = np.abs(m - m.T).max()
    if gap > SYMMETRY_RTOL * scale:
        i, j = np.unravel_index(np.argmax(np.abs(m - m.T)), m.shape)
        raise ValueError(
            f"{name} is not symmetric: |A[{i},{j}] - A[{j},{i}]| = {gap:.3e} "
            f"exceeds {SYMMETRY_RTOL:.1e} * {scale:.3e}"
        )
    # Absorb roundoff before any eigendecomposition.
    return 0.5 * (m + m.T)


def _spd_eig(m: np.ndarray, name: str):
    vals, vecs = np.linalg.eigh(m)
    if vals[0] <= 0.0:
        idx = int(np.argmin(vals))
        raise ValueError(
            f"{name} must be positive definite: eigenvalue {vals[idx]:.6e} at index {idx}"
        )
    return vals, vecs


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class EllipticalProblem:
    """One estimation instance: metrics, radius and noise level.

    Immutable after construction; the symmetric roots of the metrics are
    cached at build time.  ``noise_cov(n)`` materialises the (isotropic)
    noise covariance for a design with ``n`` observation rows.
    """

    dim: int
    error_metric: np.ndarray
    constraint_metric: np.ndarray
    radius: float
    sigma: float
    ke_half: np.ndarray = field(repr=False)
    kc_half: np.ndarray = field(repr=False)
    kc_inv_half: np.ndarray = field(repr=False)

    @property
    def floor(self) -> float:
        """Eigenvalue floor used in whitened coordinates."""
        return FLOOR_SCALE * self.radius**2 / self.dim

    def noise_cov(self, n: int) -> np.ndarray:
        return self.sigma**2 * np.eye(n)

    def whiten(self, omega: np.ndarray) -> np.ndarray:
        """Map a prior covariance to whitened coordinates."""
        return _sym(self.kc_inv_half @ omega @ self.kc_inv_half)

    def unwhiten(self, w: np.ndarray) -> np.ndarray:
        return _sym(self.kc_half @ w @ self.kc_half)

    def constraint_trace(self, omega: np.ndarray) -> float:
        return float(np.trace(self.whiten(omega)))


@dataclass(frozen=True)
class PriorCovariance:
    """A feasible prior covariance together with its positivity floor."""

    matrix: np.ndarray
    floor: float

    def __post_init__(self):
        m = _check_symmetric(_as_matrix(self.matrix, "prior covariance"), "prior covariance")
        object.__setattr__(self, "matrix", m)
        if self.floor <= 0.0:
            raise ValueError("floor must be positive")


def new_problem(Ke, Kc, rho: float, sigma: float) -> EllipticalProblem:
    """Validate an instance and cache the symmetric roots of its metrics.

    Parameters
    ----------
    Ke, Kc : array-like, shape (d, d)
        Error and constraint metrics.  Must be symmetric positive definite.
    rho : float
        Constraint radius, > 0.
    sigma : float
        Noise standard deviation, > 0.

    Raises
    ------
    ValueError
        Non-symmetric input, a non-positive eigenvalue (reported with its
        index), a dimension mismatch, or a non-positive scalar.
    """
    ke = _check_symmetric(_as_matrix(Ke, "Ke"), "Ke")
    kc = _check_symmetric(_as_matrix(Kc, "Kc"), "Kc")
    if ke.shape != kc.shape:
        raise ValueError(f"dimension mismatch: Ke is {ke.shape}, Kc is {kc.shape}")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")

    evals_e, vecs_e = _spd_eig(ke, "Ke")
    evals_c, vecs_c = _spd_eig(kc, "Kc")
    ke_half = _sym(vecs_e @ (np.sqrt(evals_e)[:, None] * vecs_e.T))
    kc_half = _sym(vecs_c @ (np.sqrt(evals_c)[:, None] * vecs_c.T))
    kc_inv_half = _sym(vecs_c @ (1.0 / np.sqrt(evals_c)[:, None] * vecs_c.T))

    return EllipticalProblem(
        dim=ke.shape[0],
        error_metric=ke,
        constraint_metric=kc,
        radius=float(rho),
        sigma=float(sigma),
        ke_half=ke_half,
        kc_half=kc_half,
        kc_inv_half=kc_inv_half,
    )


def project_floored_simplex(v: np.ndarray, budget: float, floor: float) -> np.ndarray:
    """Euclidean projection of a vector onto ``{x : x >= floor, sum(x) <= budget}``.

    Exact sort-based solution of the KKT system: clip at the floor first; if
    the budget is violated, subtract the unique threshold ``t`` such that
    ``sum(max(v - t, floor)) = budget``.
    """
    if budget < len(v) * floor:
        raise ValueError("budget smaller than accumulated floor; floor too large")
    x = np.maximum(v, floor)
    total = x.sum()
    if total <= budget:
        return x
    # Threshold search on the sorted values: coordinates with v - t <= floor
    # stick at the floor, the rest move down by t.
    order = np.sort(v)[::-1]
    n = len(v)
    csum = np.cumsum(order)
    # With k coordinates active (the k largest), t = (csum_k + (n-k)*floor - budget)/k.
    ks = np.arange(1, n + 1)
    t_candidates = (csum + (n - ks) * floor - budget) / ks
    # Valid k: active coords stay above floor and inactive coords fall below.
    valid = order - t_candidates >= floor
    k = int(np.nonzero(valid)[0].max()) + 1
    t = t_candidates[k - 1]
    return np.maximum(v - t, floor)


def feasible_project(problem: EllipticalProblem, Omega) -> PriorCovariance:
    """Project a symmetric matrix onto the feasible prior set.

    The projection is Frobenius-metric in whitened coordinates
    ``W = K_c^{-1/2} Omega K_c^{-1/2}``: eigenvalues of ``W`` are projected
    onto ``{lam >= eps, sum(lam) <= rho^2}`` (the constraint set is spectral,
    so eigenvalue projection is the exact matrix projection) and the result
    is mapped back.  Idempotent, and the identity on feasible inputs.
    """
    omega = _check_symmetric(_as_matrix(Omega, "Omega"), "Omega")
    if omega.shape[0] != problem.dim:
        raise ValueError(
            f"dimension mismatch: Omega is {omega.shape}, problem dim is {problem.dim}"
        )
    w = problem.whiten(omega)
    vals, vecs = np.linalg.eigh(w)
    proj = project_floored_simplex(vals, problem.radius**2, problem.floor)
    w_proj = _sym(vecs @ (proj[:, None] * vecs.T))
    return PriorCovariance(matrix=problem.unwhiten(w_proj), floor=problem.floor)


def check_feasible(problem: EllipticalProblem, prior: PriorCovariance, warn: bool = False) -> bool:
    """Whether a prior satisfies the floored trace constraint of the problem."""
    w = problem.whiten(prior.matrix)
    vals = np.linalg.eigvalsh(w)
    tr_ok = vals.sum() <= problem.radius**2 * (1.0 + _FEAS_SLACK)
    eig_ok = vals[0] >= problem.floor * (1.0 - 1e-6) - 1e-15
    ok = bool(tr_ok and eig_ok)
    if warn and not ok:
        warnings.warn(
            f"prior infeasible: min eig {vals[0]:.3e} (floor {problem.floor:.3e}), "
            f"trace {vals.sum():.6e} (cap {problem.radius ** 2:.6e})",
            stacklevel=2,
        )
    return ok


def _metric_from_config(spec, dim: int, name: str) -> np.ndarray:
    if isinstance(spec, str):
        if spec == "identity":
            return np.eye(dim)
        raise ValueError(f"unknown {name} spec {spec!r}; expected 'identity', dense array or diag")
    if isinstance(spec, dict):
        if "diag" not in spec:
            raise ValueError(f"{name} object spec must have a 'diag' key")
        diag = np.asarray(spec["diag"], dtype=float)
        if diag.shape != (dim,):
            raise ValueError(f"{name} diag length {diag.shape} does not match dim {dim}")
        return np.diag(diag)
    return _as_matrix(spec, name)


def problem_from_config(cfg: dict) -> EllipticalProblem:
    """Build a problem from a JSON-style config.

    Expected keys: ``dim``, ``Ke``, ``Kc`` (each ``"identity"``, a dense
    array, or ``{"diag": [...]}``), ``rho`` and ``sigma``.
    """
    for key in ("dim", "rho", "sigma"):
        if key not in cfg:
            raise KeyError(key)
    dim = int(cfg["dim"])
    if dim < 1:
        raise ValueError("dim must be >= 1")
    ke = _metric_from_config(cfg.get("Ke", "identity"), dim, "Ke")
    kc = _metric_from_config(cfg.get("Kc", "identity"), dim, "Kc")
    return new_problem(ke, kc, float(cfg["rho"]), float(cfg["sigma"]))
