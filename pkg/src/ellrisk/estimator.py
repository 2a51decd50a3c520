"""Ridge/posterior-mean estimator built from a prior covariance, and its risks.

The estimator is theta_hat = (Omega^{-1} + X^T X / sigma^2)^{-1} X^T y / sigma^2,
the posterior mean under the Gaussian prior N(0, Omega).  Solves avoid
inverting Omega by the congruence

    (Omega^{-1} + G)^{-1} = Omega^{1/2} (I + Omega^{1/2} G Omega^{1/2})^{-1} Omega^{1/2},

where the inner matrix is well conditioned and Cholesky-factorizable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .ensembles import GramEnsemble, mix_seed, sampler_from_spec
from .problem import EllipticalProblem, PriorCovariance, check_feasible

__all__ = [
    "RidgeEstimator",
    "fit",
    "worst_case_risk",
    "worst_case_theta",
    "mc_risk",
    "bayes_oracle_risk",
    "power_iteration",
]


@dataclass(frozen=True)
class RidgeEstimator:
    """A prior covariance bound to the problem whose geometry prices its risk."""

    prior: PriorCovariance
    problem: EllipticalProblem

    def __post_init__(self):
        check_feasible(self.problem, self.prior, warn=True)

    def to_json(self) -> dict:
        """Portable export: the prior as a dense array plus a hash of the
        problem's defining data, so a loaded estimator can be checked against
        the instance it was built for."""
        return {"Omega": self.prior.matrix.tolist(), "problem_hash": problem_hash(self.problem)}


def problem_hash(problem: EllipticalProblem) -> str:
    import hashlib

    payload = b"".join(
        [
            np.ascontiguousarray(problem.error_metric).tobytes(),
            np.ascontiguousarray(problem.constraint_metric).tobytes(),
            np.float64(problem.radius).tobytes(),
            np.float64(problem.sigma).tobytes(),
        ]
    )
    return hashlib.sha256(payload).hexdigest()[:16]


def _prior_half(prior: PriorCovariance) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (prior.matrix + prior.matrix.T))
    vals = np.maximum(vals, 0.0)
    return vecs @ (np.sqrt(vals)[:, None] * vecs.T)


def _response_map(prior_half: np.ndarray, gram: np.ndarray) -> np.ndarray:
    """C(G) = (Omega^{-1} + G)^{-1} without forming Omega^{-1}."""
    d = prior_half.shape[0]
    inner = np.eye(d) + prior_half @ gram @ prior_half
    c, low = cho_factor(0.5 * (inner + inner.T))
    return prior_half @ cho_solve((c, low), prior_half)


def fit(est: RidgeEstimator, X, y) -> np.ndarray:
    """Solve the penalized least-squares system for one design/response pair.

    Equivalent to argmin ||y - X theta||^2 / sigma^2 + ||theta||^2_{Omega^{-1}}.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    d = est.problem.dim
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"design must be (n, {d}), got {X.shape}")
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"response length {y.shape[0]} does not match {X.shape[0]} rows")
    sigma2 = est.problem.sigma**2
    c = _response_map(_prior_half(est.prior), X.T @ X / sigma2)
    return c @ (X.T @ y / sigma2)


def power_iteration(mat: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000):
    """Top eigenpair of a symmetric PSD matrix by power iteration.

    The eigenvalue estimate is monotone and converges even under near-ties
    (any vector in the top eigenspace realizes the same value).
    """
    d = mat.shape[0]
    v = np.full(d, 1.0 / np.sqrt(d))
    v += np.arange(d) * (1e-3 / max(d, 1))  # break symmetry deterministically
    v /= np.linalg.norm(v)
    lam = float(v @ mat @ v)
    for _ in range(max_iter):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        v = w / norm
        lam_new = float(v @ mat @ v)
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new, v
        lam = lam_new
    return lam, v


def _bias_and_noise(est: RidgeEstimator, ensemble: GramEnsemble):
    """Ensemble averages of the squared-bias matrix (C G - I)^T K_e (C G - I)
    and the noise trace tr(K_e C G C^T)."""
    ke = est.problem.error_metric
    d = est.problem.dim
    half = _prior_half(est.prior)
    bias = np.zeros((d, d))
    noise = 0.0
    eye = np.eye(d)
    for g in ensemble.grams:
        c = _response_map(half, g)
        cg = c @ g
        bias += (cg - eye).T @ ke @ (cg - eye)
        noise += float(np.trace(ke @ cg @ c.T))
    n = ensemble.size
    return 0.5 * (bias + bias.T) / n, noise / n


def worst_case_risk(est: RidgeEstimator, ensemble: GramEnsemble) -> float:
    """Supremum of the estimator risk over the constraint ellipse:

        rho^2 * lam_max(K_c^{1/2} B K_c^{1/2}) + tr(K_e^{1/2} E[C G C^T] K_e^{1/2}),

    with B the averaged squared-bias matrix.  The supremum over the ellipse
    reduces to the top eigenvalue of the whitened bias matrix, found by
    power iteration.
    """
    bias, noise = _bias_and_noise(est, ensemble)
    kc_half = est.problem.kc_half
    whitened = kc_half @ bias @ kc_half
    lam, _ = power_iteration(0.5 * (whitened + whitened.T))
    return est.problem.radius**2 * lam + noise


def worst_case_theta(est: RidgeEstimator, ensemble: GramEnsemble) -> np.ndarray:
    """A parameter on the constraint sphere attaining the worst-case bias."""
    bias, _ = _bias_and_noise(est, ensemble)
    kc_half = est.problem.kc_half
    whitened = kc_half @ bias @ kc_half
    _, v = power_iteration(0.5 * (whitened + whitened.T))
    return est.problem.radius * (kc_half @ v)


def mc_risk(est: RidgeEstimator, theta_star, sampler, sigma: float, trials: int, seed: int):
    """Monte Carlo risk of the estimator at a fixed parameter.

    Each trial draws a fresh design from ``sampler`` (spec dict or callable
    ``seed -> DesignMatrix``) and fresh Gaussian noise of scale ``sigma``,
    then measures the squared error in the K_e norm.  Returns (mean, stderr).
    """
    if trials < 2:
        raise ValueError("trials must be >= 2")
    theta = np.asarray(theta_star, dtype=float).ravel()
    prob = est.problem
    norm = float(np.sqrt(theta @ np.linalg.solve(prob.constraint_metric, theta)))
    if norm > prob.radius * (1.0 + 1e-9):
        warnings.warn(
            f"theta_star outside the constraint set: |theta|_{{Kc^-1}} = {norm:.6e} > "
            f"rho = {prob.radius:.6e}",
            stacklevel=2,
        )
    draw = sampler_from_spec(sampler) if isinstance(sampler, dict) else sampler
    half = _prior_half(est.prior)
    ke = prob.error_metric
    vals = np.empty(trials)
    for t in range(trials):
        design = draw(mix_seed(seed, 2 * t))
        rng = np.random.default_rng(mix_seed(seed, 2 * t + 1))
        y = design.X @ theta + sigma * rng.standard_normal(design.n)
        gram = design.X.T @ design.X / prob.sigma**2
        theta_hat = _response_map(half, gram) @ (design.X.T @ y / prob.sigma**2)
        err = theta_hat - theta
        vals[t] = float(err @ ke @ err)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(trials))


def bayes_oracle_risk(
    problem: EllipticalProblem,
    Omega: PriorCovariance,
    ensemble: GramEnsemble,
    trials: int,
    seed: int,
):
    """Average risk of the estimator when the parameter is drawn from its own
    prior N(0, Omega): an independent oracle for the trace objective, which
    this quantity equals for Gaussian noise.

    Trials are spread round-robin over the ensemble designs and evaluated
    through the estimator's linear response map (batched over trials; the
    map is identical to per-trial fits).  Returns (mean, stderr).
    """
    if trials < 2:
        raise ValueError("trials must be >= 2")
    if not ensemble.designs:
        raise ValueError("ensemble does not retain designs; rebuild with gram_ensemble")
    half = _prior_half(Omega)
    ke = problem.error_metric
    sigma2 = problem.sigma**2
    n_designs = len(ensemble.designs)
    base = trials // n_designs
    extras = trials % n_designs
    samples = []
    for i, x in enumerate(ensemble.designs):
        m = base + (1 if i < extras else 0)
        if m == 0:
            continue
        rng = np.random.default_rng(mix_seed(seed, i))
        g = ensemble.grams[i]
        c = _response_map(half, g)
        thetas = half @ rng.standard_normal((problem.dim, m))
        noise = problem.sigma * rng.standard_normal((x.shape[0], m))
        ys = x @ thetas + noise
        theta_hats = c @ (x.T @ ys / sigma2)
        errs = theta_hats - thetas
        samples.append(np.einsum("im,ij,jm->m", errs, ke, errs))
    vals = np.concatenate(samples)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))
