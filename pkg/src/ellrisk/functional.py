"""The minimax trace functional: evaluation, concave maximization, risk brackets.

The central object is

    Phi = sup { mean_i tr( K_e^{1/2} (Omega^{-1} + G_i)^{-1} K_e^{1/2} ) :
                Omega > 0, tr(K_c^{-1/2} Omega K_c^{-1/2}) <= rho^2 },

a sample-average approximation over a Gram ensemble {G_i}.  The problem is
concave (harmonic-mean concavity of Omega -> (G + Omega^{-1})^{-1}), so
projected gradient ascent with an exact spectral projection and Armijo
backtracking produces a monotone iterate sequence.

Everything runs in whitened coordinates W = K_c^{-1/2} Omega K_c^{-1/2},
where the objective keeps the same algebraic form with transformed data
Gt_i = K_c^{1/2} G_i K_c^{1/2} and Et = K_c^{1/2} K_e K_c^{1/2}.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .ensembles import GramEnsemble, gram_only_ensemble
from .problem import (
    EllipticalProblem,
    PriorCovariance,
    check_feasible,
    new_problem,
    project_floored_simplex,
)

__all__ = [
    "FunctionalResult",
    "RiskBracket",
    "OptimizerOptions",
    "objective",
    "objective_stderr",
    "gradient",
    "maximize_phi",
    "risk_bracket",
    "sharp_lower",
    "sharp_lower_constant",
    "dicker_cd",
    "population_functional",
    "to_population_sandwich",
    "singular_split",
]


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _sym_batch(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.transpose(m, (0, 2, 1)))


@dataclass(frozen=True)
class FunctionalResult:
    """Outcome of one functional maximization."""

    value: float
    maximizer: PriorCovariance
    iterations: int
    grad_norm: float
    mc_stderr: float
    converged: bool
    history: tuple = field(default=(), repr=False)


@dataclass(frozen=True)
class RiskBracket:
    """Two-sided minimax-risk bracket from the same Gram ensemble.

    ``lower`` is the functional at half radius, ``upper`` at full radius;
    ``weak_lower`` records upper/4.  ``sharp_lower`` is filled only when the
    tail-probability route was evaluated.
    """

    lower: float
    upper: float
    weak_lower: float
    sharp_lower: float | None = None
    methods: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OptimizerOptions:
    max_iter: int = 5000
    tol: float = 1e-9
    armijo_c: float = 1e-4
    step_shrink: float = 0.5
    step_init: float = 1.0


class FactorizationError(RuntimeError):
    """A shifted Gram matrix was not numerically positive definite."""


class _WhitenedFunctional:
    """Objective/gradient of the trace functional in whitened coordinates.

    The prior inverse is never formed.  With W = V diag(lam) V^T (eigenvalues
    floored) and h = sqrt(lam), the push-through identity gives, per gram,

        (W^{-1} + G)^{-1} = H (I + H G H)^{-1} H,   H = V diag(h) V^T,

    so all solves go through I + H G H, whose condition number stays moderate
    even when eigenvalues of W sit at the floor.  Solves are batched over the
    ensemble.
    """

    def __init__(self, problem: EllipticalProblem, ensemble: GramEnsemble):
        if ensemble.dim != problem.dim:
            raise ValueError(
                f"ensemble dim {ensemble.dim} does not match problem dim {problem.dim}"
            )
        C = problem.kc_half
        self.grams_t = _sym_batch(np.einsum("ij,njk,kl->nil", C, ensemble.grams, C))
        self.err_t = _sym(C @ problem.error_metric @ C)
        self.floor = problem.floor
        self._eye = np.eye(problem.dim)

    def _inner_systems(self, w: np.ndarray):
        """Eigenbasis data: h, inner_i = I + diag(h) Ghat_i diag(h), and the
        error metric rotated into the eigenbasis of W."""
        vals, vecs = np.linalg.eigh(_sym(w))
        h = np.sqrt(np.maximum(vals, self.floor))
        g_hat = np.einsum("ji,njk,kl->nil", vecs, self.grams_t, vecs)
        e_hat = vecs.T @ self.err_t @ vecs
        inner = self._eye[None, :, :] + h[None, :, None] * g_hat * h[None, None, :]
        try:
            np.linalg.cholesky(inner)
        except np.linalg.LinAlgError:
            mins = np.linalg.eigvalsh(inner)[:, 0]
            i = int(np.argmin(mins))
            raise FactorizationError(
                f"shifted system {i} not positive definite: min eig {mins[i]:.3e} "
                f"(floor {self.floor:.3e}, |G| {np.abs(self.grams_t[i]).max():.3e})"
            ) from None
        return h, vecs, inner, e_hat

    def per_gram_values(self, w: np.ndarray) -> np.ndarray:
        h, _, inner, e_hat = self._inner_systems(w)
        m = h[:, None] * e_hat * h[None, :]
        a = np.linalg.solve(inner, np.broadcast_to(m, inner.shape))
        return np.einsum("nii->n", a)

    def value(self, w: np.ndarray) -> float:
        return float(self.per_gram_values(w).mean())

    def value_and_grad(self, w: np.ndarray):
        h, vecs, inner, e_hat = self._inner_systems(w)
        m = h[:, None] * e_hat * h[None, :]
        a = np.linalg.solve(inner, np.broadcast_to(m, inner.shape))
        val = float(np.mean(np.einsum("nii->n", a)))
        # inner^{-1} M inner^{-1}, rescaled by 1/(h_i h_j), back to the
        # original basis: every factor is scale-balanced near the floor.
        b = np.transpose(
            np.linalg.solve(inner, np.transpose(a, (0, 2, 1))), (0, 2, 1)
        ).mean(axis=0)
        grad_eig = b / (h[:, None] * h[None, :])
        grad = vecs @ grad_eig @ vecs.T
        return val, _sym(grad)


def _project_w(w: np.ndarray, radius2: float, floor: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(_sym(w))
    proj = project_floored_simplex(vals, radius2, floor)
    return _sym(vecs @ (proj[:, None] * vecs.T))


def objective(ensemble: GramEnsemble, problem: EllipticalProblem, Omega: PriorCovariance) -> float:
    """Sample average of tr(K_e^{1/2} (Omega^{-1} + G_i)^{-1} K_e^{1/2}).

    Omega^{-1} is formed from the floored eigendecomposition of the whitened
    prior; the shifted systems are factorized symmetrically, never inverted
    via a general inverse.
    """
    check_feasible(problem, Omega, warn=True)
    fun = _WhitenedFunctional(problem, ensemble)
    return fun.value(problem.whiten(Omega.matrix))


def objective_stderr(ensemble: GramEnsemble, problem: EllipticalProblem, Omega: PriorCovariance):
    """Objective together with its across-replicate standard error."""
    fun = _WhitenedFunctional(problem, ensemble)
    vals = fun.per_gram_values(problem.whiten(Omega.matrix))
    n = len(vals)
    se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(vals.mean()), se


def gradient(ensemble: GramEnsemble, problem: EllipticalProblem, Omega: PriorCovariance) -> np.ndarray:
    """Gradient of the objective with respect to the prior covariance:

        mean_i Omega^{-1} S_i^{-1} K_e S_i^{-1} Omega^{-1},  S_i = Omega^{-1} + G_i.

    Symmetric and positive semidefinite.
    """
    fun = _WhitenedFunctional(problem, ensemble)
    _, grad_w = fun.value_and_grad(problem.whiten(Omega.matrix))
    ci = problem.kc_inv_half
    return _sym(ci @ grad_w @ ci)


def maximize_phi(
    problem: EllipticalProblem,
    ensemble: GramEnsemble,
    opts: OptimizerOptions | dict | None = None,
) -> FunctionalResult:
    """Maximize the trace functional over the feasible prior set.

    Projected gradient ascent in whitened coordinates with Armijo
    backtracking (start step 1, shrink x0.5, sufficient-increase 1e-4); the
    accepted step is doubled as the next iteration's first trial so the
    effective step adapts to the local scale.  The objective sequence is
    nondecreasing by construction.  Iteration stops when the relative
    objective change falls below ``tol`` or at ``max_iter``, in which case
    non-convergence is flagged on the result rather than raised.

    The default start is the whitened identity Omega_0 = (rho^2/d) K_c.
    """
    if opts is None:
        opts = OptimizerOptions()
    elif isinstance(opts, dict):
        opts = OptimizerOptions(**opts)
    fun = _WhitenedFunctional(problem, ensemble)
    radius2 = problem.radius**2
    d = problem.dim

    w = _project_w((radius2 / d) * np.eye(d), radius2, problem.floor)
    val, grad = fun.value_and_grad(w)
    history = [val]
    step = opts.step_init
    iterations = 0
    converged = False
    grad_map_norm = float("inf")

    for iterations in range(1, opts.max_iter + 1):
        accepted = False
        trial = step
        while trial > 1e-20:
            cand = _project_w(w + trial * grad, radius2, problem.floor)
            direction = cand - w
            lin = float(np.tensordot(grad, direction))
            if lin <= 0.0:
                break  # projection no longer moves along the gradient: stationary
            cand_val = fun.value(cand)
            if cand_val >= val + opts.armijo_c * lin:
                grad_map_norm = float(np.linalg.norm(direction) / trial)
                rel_change = (cand_val - val) / max(abs(val), 1e-300)
                w = cand
                val, grad = fun.value_and_grad(w)
                history.append(val)
                step = min(trial * 2.0, 2.0**60)
                accepted = True
                if rel_change < opts.tol:
                    converged = True
                break
            trial *= opts.step_shrink
        if not accepted:
            converged = True
            if not np.isfinite(grad_map_norm):
                grad_map_norm = 0.0
            break
        if converged:
            break

    per_gram = fun.per_gram_values(w)
    n = len(per_gram)
    stderr = float(per_gram.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    maximizer = PriorCovariance(matrix=problem.unwhiten(w), floor=problem.floor)
    return FunctionalResult(
        value=val,
        maximizer=maximizer,
        iterations=iterations,
        grad_norm=float(grad_map_norm if np.isfinite(grad_map_norm) else 0.0),
        mc_stderr=stderr,
        converged=converged,
        history=tuple(history),
    )


def risk_bracket(
    problem: EllipticalProblem,
    ensemble: GramEnsemble,
    opts: OptimizerOptions | dict | None = None,
) -> RiskBracket:
    """Bracket the minimax risk from one ensemble.

    upper = Phi(rho); lower = Phi(rho/2) (the half-radius functional is a
    valid lower bound); weak_lower = upper/4.
    """
    upper_res = maximize_phi(problem, ensemble, opts)
    half = new_problem(
        problem.error_metric, problem.constraint_metric, problem.radius / 2.0, problem.sigma
    )
    lower_res = maximize_phi(half, ensemble, opts)
    if not (upper_res.converged and lower_res.converged):
        warnings.warn("risk_bracket: optimizer did not converge on one endpoint", stacklevel=2)
    return RiskBracket(
        lower=lower_res.value,
        upper=upper_res.value,
        weak_lower=upper_res.value / 4.0,
        methods={
            "upper": "phi(rho)",
            "lower": "phi(rho/2)",
            "weak_lower": "phi(rho)/4",
            "upper_converged": upper_res.converged,
            "lower_converged": lower_res.converged,
        },
    )


def sharp_lower_constant(
    problem: EllipticalProblem,
    Omega: PriorCovariance,
    tau: float,
    mc_draws: int = 100_000,
    seed: int = 0,
):
    """Monte Carlo estimate of the tail-probability constant

        c = tau^2 * (1 - P{ tau^2 * sum_i lam_i Z_i^2 > 1 }),

    where lam_i are the eigenvalues of (1/rho^2) K_e^{1/2} Omega K_e^{1/2}
    and Z is standard normal.  Returns (c_conservative, tail_stderr); the
    tail probability has one standard error added before forming c, keeping
    the resulting bound conservative.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if mc_draws < 2:
        raise ValueError("mc_draws must be >= 2")
    eh = problem.ke_half
    lam = np.linalg.eigvalsh(_sym(eh @ Omega.matrix @ eh)) / problem.radius**2
    rng = np.random.default_rng(seed)
    z2 = rng.standard_normal((mc_draws, problem.dim)) ** 2
    exceed = (tau**2 * z2 @ lam) > 1.0
    p_hat = float(exceed.mean())
    se = float(np.sqrt(max(p_hat * (1.0 - p_hat), 1.0 / mc_draws) / mc_draws))
    c = tau**2 * (1.0 - min(1.0, p_hat + se))
    return c, se


def sharp_lower(
    problem: EllipticalProblem,
    ensemble: GramEnsemble,
    tau: float,
    Omega: PriorCovariance,
    mc_draws: int = 100_000,
    seed: int = 0,
):
    """Sharpened minimax lower bound

        mean_i tr( K_e^{1/2} ((1/c) Omega^{-1} + G_i)^{-1} K_e^{1/2} )

    with c the tail-probability constant above.  The prior must have an
    active trace constraint for the bound to be valid.  Returns
    (bound, ensemble_stderr); the evaluation uses the identity
    (1/c) Omega^{-1} = (c Omega)^{-1}.
    """
    tr = problem.constraint_trace(Omega.matrix)
    if abs(tr - problem.radius**2) > 1e-6 * problem.radius**2:
        warnings.warn(
            f"sharp_lower expects an active trace constraint: tr = {tr:.6e}, "
            f"rho^2 = {problem.radius ** 2:.6e}",
            stacklevel=2,
        )
    c, _ = sharp_lower_constant(problem, Omega, tau, mc_draws, seed)
    if c <= 0.0:
        return 0.0, 0.0
    fun = _WhitenedFunctional(problem, ensemble)
    vals = fun.per_gram_values(problem.whiten(c * Omega.matrix))
    n = len(vals)
    se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(vals.mean()), se


def dicker_cd(d: int) -> float:
    """Closed-form sharp lower-bound constant for the isotropic Gaussian design:

        c_d = (1 - 1/(2d-1)) * (1 - exp(-d^{3/2}/4))  for d >= 2,  1/4 for d = 1.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if d == 1:
        return 0.25
    return (1.0 - 1.0 / (2.0 * d - 1.0)) * (1.0 - float(np.exp(-(d**1.5) / 4.0)))


def population_functional(
    problem: EllipticalProblem,
    Sigma_bar: np.ndarray,
    n: int,
    opts: OptimizerOptions | dict | None = None,
) -> FunctionalResult:
    """Population (Jensen) version of the effective-dimension functional:

        sup { tr(K_e^{1/2} (Sigma_bar + Omega^{-1})^{-1} K_e^{1/2}) :
              tr(K_c^{-1/2} Omega K_c^{-1/2}) <= n rho^2 / sigma^2 }.

    The caller supplies Sigma_bar (the population second moment of the
    features).  Values are reported in the effective-dimension
    normalization: the maximization runs with the single deterministic Gram
    Sigma_bar and the rescaled radius.
    """
    radius_eff = float(np.sqrt(n) * problem.radius / problem.sigma)
    scaled = new_problem(problem.error_metric, problem.constraint_metric, radius_eff, 1.0)
    ens = gram_only_ensemble(np.asarray(Sigma_bar, dtype=float), sigma=1.0, n=n)
    return maximize_phi(scaled, ens, opts)


def to_population_sandwich(
    problem: EllipticalProblem,
    ensemble: GramEnsemble,
    Sigma_bar: np.ndarray,
    kappa: float,
    opts: OptimizerOptions | dict | None = None,
):
    """Evaluate the population sandwich

        dbar_n <= d_n <= (1 + rho^2 kappa^2 / sigma^2) dbar_n

    for a bounded-feature design with population second moment ``Sigma_bar``
    and feature bound ``kappa`` (supremum of the whitened feature norm,
    caller supplied).  Returns (lhs, mid, rhs, holds); the middle term is
    allowed two ensemble standard errors of slack.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    n = ensemble.meta.get("n")
    if n is None:
        raise ValueError("ensemble meta must record the per-design sample size n")
    lhs = population_functional(problem, Sigma_bar, n, opts).value
    saa = maximize_phi(problem, ensemble, opts)
    # d_n = (n / sigma^2) * Phi for an i.i.d. ensemble with grams X^T X / sigma^2.
    mid = n / problem.sigma**2 * saa.value
    mid_se = n / problem.sigma**2 * saa.mc_stderr
    rhs = (1.0 + problem.radius**2 * kappa**2 / problem.sigma**2) * lhs
    # Slack: two ensemble standard errors plus the optimizers' own tolerance.
    slack = 2.0 * mid_se + 1e-6 * max(abs(lhs), abs(mid))
    holds = bool(lhs <= mid + slack and mid - slack <= rhs)
    return lhs, mid, rhs, holds


def singular_split(ensemble: GramEnsemble, problem: EllipticalProblem):
    """Split the benchmark risk at Omega = (n rho^2 / (sigma^2 d)) I by
    eigenvalue size of the sample covariance.

    Eigenvalues of Sigma_hat at or above the threshold (sigma^2/n)(d/rho^2)
    contribute (sigma^2/n)(1/lam) to the estimation term; smaller ones
    contribute rho^2/d to the approximation term.  Both terms are ensemble
    averages in risk units, and their sum is a factor-2 equivalent of the
    isotropic-prior objective.
    """
    n = ensemble.meta.get("n")
    sigma = ensemble.meta.get("sigma", problem.sigma)
    if n is None:
        raise ValueError("ensemble meta must record the per-design sample size n")
    d = ensemble.dim
    rho2 = problem.radius**2
    threshold = (sigma**2 / n) * (d / rho2)
    est_terms = np.empty(ensemble.size)
    app_terms = np.empty(ensemble.size)
    for i, g in enumerate(ensemble.grams):
        lam = np.linalg.eigvalsh(_sym(g)) * sigma**2 / n  # eigenvalues of Sigma_hat
        lam = np.maximum(lam, 0.0)
        big = lam >= threshold
        est_terms[i] = (sigma**2 / n) * float(np.sum(1.0 / lam[big])) if big.any() else 0.0
        app_terms[i] = (rho2 / d) * float(np.count_nonzero(~big))
    return float(est_terms.mean()), float(app_terms.mean())
