"""Seeded samplers for random designs and their whitened Gram ensembles.

Every sampler is a pure function of (parameters, seed).  Gaussian variates are
drawn from ``numpy.random.default_rng`` streams in a documented order (full
matrices are filled row-major), so runs are bit-reproducible for a fixed seed
on a fixed numpy version.  Replicates of an ensemble are sub-seeded with a
splitmix64-style mix of (seed, replicate index), which makes them independent
and insensitive to evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DesignMatrix",
    "GramEnsemble",
    "MarkovChainPath",
    "KernelSpec",
    "mix_seed",
    "sample_gaussian_design",
    "sample_mixture_design",
    "markov_chain",
    "markov_r_from_psi",
    "markov_m_matrix",
    "rkhs_features",
    "sobolev_eigenvalues",
    "sample_shift_design",
    "gram_ensemble",
    "sampler_from_spec",
]

_MASK64 = (1 << 64) - 1


def mix_seed(seed: int, index: int) -> int:
    """Derive an independent 64-bit sub-seed from (seed, index), splitmix64-style."""
    z = (int(seed) + 0x9E3779B97F4A7C15 * (int(index) + 1)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class DesignMatrix:
    """An n x d design: row i is the feature vector of observation i."""

    n: int
    d: int
    X: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.X, dtype=float)
        if x.shape != (self.n, self.d):
            raise ValueError(f"design shape {x.shape} does not match declared ({self.n}, {self.d})")
        if not np.all(np.isfinite(x)):
            raise ValueError("design contains non-finite entries")
        object.__setattr__(self, "X", x)


@dataclass(frozen=True)
class GramEnsemble:
    """A finite sample of whitened Gram matrices G_i = X_i^T X_i / sigma^2.

    ``designs`` keeps the sampled design matrices; Monte Carlo risk routines
    need them to simulate responses.  ``meta`` records the sampler spec so the
    ensemble is reproducible from (meta, seed) alone.
    """

    grams: np.ndarray  # (N, d, d)
    seed: int
    meta: dict
    designs: tuple = field(repr=False, default=())

    def __post_init__(self):
        g = np.asarray(self.grams, dtype=float)
        if g.ndim != 3 or g.shape[1] != g.shape[2]:
            raise ValueError(f"grams must be (N, d, d), got {g.shape}")
        if g.shape[0] < 1:
            raise ValueError("ensemble must contain at least one Gram matrix")
        gap = np.abs(g - np.transpose(g, (0, 2, 1))).max()
        if gap > 1e-8 * max(1.0, np.abs(g).max()):
            raise ValueError(f"Gram matrices not symmetric within tolerance: gap {gap:.3e}")
        object.__setattr__(self, "grams", g)

    @property
    def size(self) -> int:
        return self.grams.shape[0]

    @property
    def dim(self) -> int:
        return self.grams.shape[1]

    def to_json(self) -> dict:
        """Binary-free debug serialization (dense matrix lists); intended for
        small dimensions only."""
        return {
            "seed": self.seed,
            "meta": {k: v for k, v in self.meta.items() if not isinstance(v, np.ndarray)},
            "grams": [g.tolist() for g in self.grams],
        }


@dataclass(frozen=True)
class MarkovChainPath:
    """A scalar AR(1)-style covariate path and the innovations that drove it."""

    T: int
    r: np.ndarray
    x: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class KernelSpec:
    """Truncated Mercer spectrum with a named orthonormal basis (fourier only)."""

    mu: np.ndarray
    k: int
    basis: str = "fourier"

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if mu.shape != (self.k,):
            raise ValueError(f"mu must have length k={self.k}, got {mu.shape}")
        if np.any(mu <= 0):
            raise ValueError("kernel eigenvalues must be positive")
        if np.any(np.diff(mu) > 1e-12):
            raise ValueError("kernel eigenvalues must be nonincreasing")
        if self.basis != "fourier":
            raise ValueError(f"unsupported basis {self.basis!r}")
        object.__setattr__(self, "mu", mu)


def sample_gaussian_design(n: int, d: int, seed: int) -> DesignMatrix:
    """n x d design with i.i.d. standard normal entries, filled row-major."""
    if n < 1 or d < 1:
        raise ValueError(f"n and d must be >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    return DesignMatrix(n=n, d=d, X=rng.standard_normal((n, d)))


def sample_mixture_design(n: int, d: int, lam: float, seed: int) -> DesignMatrix:
    """Zero-inflated Gaussian design: each row is 0 with probability ``lam``,
    else N(0, (1-lam)^{-1} I_d).  First and second moments match the standard
    Gaussian design for every lam in [0, 1).

    Draw order (fixed for reproducibility): n uniforms for the row mask, then
    the full n x d normal matrix row-major.
    """
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"lam must lie in [0, 1), got {lam}")
    if n < 1 or d < 1:
        raise ValueError(f"n and d must be >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    mask = rng.random(n) < lam
    z = rng.standard_normal((n, d)) / math.sqrt(1.0 - lam)
    z[mask] = 0.0
    return DesignMatrix(n=n, d=d, X=z)


def markov_r_from_psi(psi: Callable[[int], float], T: int, log: bool = False) -> np.ndarray:
    """Autocorrelation parameters r_t = psi(t-1)/psi(t) for t = 1..T.

    ``psi`` must be nondecreasing with psi(0) = 1.  With ``log=True`` the
    handle returns log(psi(t)) and the ratio is formed in log space, which is
    required for fast-growing scalings whose values overflow a float.
    """
    vals = np.array([float(psi(t)) for t in range(T + 1)])
    if log:
        if abs(vals[0]) > 1e-12:
            raise ValueError("log-psi must satisfy log(psi(0)) = 0")
        diffs = np.diff(vals)
        if np.any(diffs < -1e-12):
            t = int(np.nonzero(diffs < -1e-12)[0][0]) + 1
            raise ValueError(f"psi must be nondecreasing; decreases at t={t}")
        return np.exp(-np.maximum(diffs, 0.0))
    if abs(vals[0] - 1.0) > 1e-12:
        raise ValueError("psi(0) must equal 1")
    if np.any(np.diff(vals) < -1e-12 * np.maximum(1.0, np.abs(vals[:-1]))):
        t = int(np.nonzero(np.diff(vals) < 0)[0][0]) + 1
        raise ValueError(f"psi must be nondecreasing; psi({t}) < psi({t - 1})")
    return vals[:-1] / vals[1:]


def markov_path_from_r(r: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Run the recursion x_t = sqrt(r_t) x_{t-1} + sqrt(1-r_t) z_t, x_0 = 0."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any((r < 0) | (r > 1)):
        raise ValueError("r values must lie in [0, 1]")
    x = np.empty_like(z)
    prev = 0.0
    sq_r = np.sqrt(r)
    sq_1mr = np.sqrt(1.0 - r)
    for t in range(len(r)):
        prev = sq_r[t] * prev + sq_1mr[t] * z[t]
        x[t] = prev
    return x


def markov_chain(psi, T: int, seed: int, log: bool = False) -> MarkovChainPath:
    """Sample one covariate path of the time-varying AR(1) model.

    ``psi`` is a nondecreasing scaling handle with psi(0) = 1 (pass
    ``log=True`` if it returns log values), or the string ``"iid"`` for the
    r_t = 0 limit where x_t = z_t exactly.  The innovations z are stored so
    the path is a deterministic function of them.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if isinstance(psi, str):
        if psi != "iid":
            raise ValueError(f"unknown psi mode {psi!r}")
        r = np.zeros(T)
    else:
        r = markov_r_from_psi(psi, T, log=log)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(T)
    x = markov_path_from_r(r, z)
    return MarkovChainPath(T=T, r=r, x=x, z=z)


def markov_coefficient_matrix(r: np.ndarray) -> np.ndarray:
    """Upper-triangular S with S[s, t] = sqrt(c_st) for t >= s (0-indexed),
    where c_st = (1 - r_s) * prod_{tau=s+1..t} r_tau.

    The path satisfies x = S^T z, hence x^T x = z^T (S S^T) z.  Suffix
    products are formed by cumulative multiplication; factors lie in [0, 1]
    so exact zeros short-circuit and underflow decays monotonically to 0
    without sign or overflow artifacts.
    """
    r = np.asarray(r, dtype=float)
    if np.any((r < 0) | (r > 1)):
        raise ValueError("r values must lie in [0, 1]")
    T = len(r)
    S = np.zeros((T, T))
    for s in range(T):
        row = np.empty(T - s)
        row[0] = 1.0 - r[s]
        if T - s > 1:
            row[1:] = (1.0 - r[s]) * np.multiply.accumulate(r[s + 1 :])
        S[s, s:] = np.sqrt(row)
    return S


def markov_m_matrix(r) -> np.ndarray:
    """Quadratic-form matrix M with x^T x = z^T M z for the AR(1) path.

    M[s, s'] = sum_{t >= max(s, s')} sqrt(c_st c_s't); computed as S S^T with
    the coefficient matrix S, which makes positive semidefiniteness explicit.
    """
    S = markov_coefficient_matrix(np.asarray(r, dtype=float))
    return S @ S.T


def sobolev_eigenvalues(beta: float, k: int, dim_x: int = 1) -> np.ndarray:
    """Fourier-basis kernel spectrum mu_j = ceil(j/2)^(-2*beta/dim_x), j = 1..k.

    Consecutive indices (2j-1, 2j) share the value j^(-2*beta/dim_x), giving
    the j^(-2*alpha) decay rate with alpha = beta/dim_x.  The absolute
    constant and the exact index pairing are conventions of this library;
    rate exponents do not depend on them.
    """
    j = np.arange(1, k + 1)
    return np.ceil(j / 2.0) ** (-2.0 * beta / dim_x)


def _fourier_basis(k: int, x) -> np.ndarray:
    """phi_1 = 1, phi_{2j} = sqrt(2) cos(2 pi j x), phi_{2j+1} = sqrt(2) sin(2 pi j x)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((len(x), k))
    out[:, 0] = 1.0
    for col in range(1, k):
        freq = (col + 1) // 2
        angle = 2.0 * np.pi * freq * x
        out[:, col] = np.sqrt(2.0) * (np.cos(angle) if (col + 1) % 2 == 0 else np.sin(angle))
    return out


def rkhs_features(spec: KernelSpec, x) -> np.ndarray:
    """Feature vector (sqrt(mu_j) phi_j(x))_{j=1..k} for x in [0, 1].

    Accepts a scalar (returns shape (k,)) or an array of points (returns
    (len(x), k)).
    """
    scalar = np.isscalar(x) or np.ndim(x) == 0
    pts = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any((pts < 0.0) | (pts > 1.0)):
        raise ValueError("evaluation points must lie in [0, 1]")
    feats = _fourier_basis(spec.k, pts) * np.sqrt(spec.mu)[None, :]
    return feats[0] if scalar else feats


def sample_shift_design(B: float, spec: KernelSpec, n: int, seed: int) -> DesignMatrix:
    """Covariate-shift design: x_i is Uniform[0,1] with probability 1/B, else
    the atom x0 = 0 (where every sine coordinate vanishes).  Rows are the
    kernel features of the sampled points.

    Draw order: n uniforms for the atom mask, then n uniforms for the points.
    """
    if B < 1.0:
        raise ValueError(f"B must be >= 1, got {B}")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    keep_uniform = rng.random(n) < 1.0 / B
    pts = rng.random(n)
    pts[~keep_uniform] = 0.0
    return DesignMatrix(n=n, d=spec.k, X=rkhs_features(spec, pts))


def _spec_get(spec: dict, key: str):
    if key not in spec:
        raise KeyError(key)
    return spec[key]


def sampler_from_spec(spec: dict) -> Callable[[int], DesignMatrix]:
    """Build ``seed -> DesignMatrix`` from a JSON sampler spec.

    Kinds: ``gaussian`` {n, d}; ``mixture`` {n, d, lam}; ``markov`` {T, psi}
    (psi a named scaling or "iid"); ``rkhs`` {n, mu|{power,k}}; ``shift``
    {n, B, mu|{power,k}}; ``fixed`` {X}.
    """
    kind = _spec_get(spec, "kind")
    if kind == "gaussian":
        n, d = int(_spec_get(spec, "n")), int(_spec_get(spec, "d"))
        return lambda seed: sample_gaussian_design(n, d, seed)
    if kind == "mixture":
        n, d = int(_spec_get(spec, "n")), int(_spec_get(spec, "d"))
        lam = float(_spec_get(spec, "lam"))
        return lambda seed: sample_mixture_design(n, d, lam, seed)
    if kind == "markov":
        T = int(_spec_get(spec, "T"))
        name = _spec_get(spec, "psi")
        from .experiments import psi_log_handle  # registry of named scalings

        handle = psi_log_handle(name)

        def _markov(seed: int) -> DesignMatrix:
            if handle is None:
                path = markov_chain("iid", T, seed)
            else:
                path = markov_chain(handle, T, seed, log=True)
            return DesignMatrix(n=T, d=1, X=path.x[:, None])

        return _markov
    if kind in ("rkhs", "shift"):
        n = int(_spec_get(spec, "n"))
        kspec = kernel_spec_from_config(_spec_get(spec, "mu"), spec.get("k"))
        B = float(spec.get("B", 1.0)) if kind == "shift" else 1.0
        return lambda seed: sample_shift_design(B, kspec, n, seed)
    if kind == "fixed":
        X = np.asarray(_spec_get(spec, "X"), dtype=float)
        return lambda seed: DesignMatrix(n=X.shape[0], d=X.shape[1], X=X)
    raise ValueError(f"unknown sampler kind {kind!r}")


def kernel_spec_from_config(mu_cfg, k=None) -> KernelSpec:
    """Kernel spectrum from an explicit array or ``{"power": 2*beta, "k": k}``."""
    if isinstance(mu_cfg, dict):
        power = float(_spec_get(mu_cfg, "power"))
        kk = int(mu_cfg.get("k", k if k is not None else 64))
        return KernelSpec(mu=sobolev_eigenvalues(power / 2.0, kk), k=kk)
    mu = np.asarray(mu_cfg, dtype=float)
    return KernelSpec(mu=mu, k=len(mu))


def gram_ensemble(sampler, N: int, sigma: float, seed: int) -> GramEnsemble:
    """Draw N independent designs and assemble G_i = X_i^T X_i / sigma^2.

    ``sampler`` is either a JSON spec dict or a callable ``seed -> DesignMatrix``.
    Replicate i uses the sub-seed ``mix_seed(seed, i)``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if isinstance(sampler, dict):
        meta = dict(sampler)
        draw = sampler_from_spec(sampler)
    else:
        meta = {"kind": getattr(sampler, "__name__", "callable")}
        draw = sampler
    designs = []
    grams = []
    for i in range(N):
        design = draw(mix_seed(seed, i))
        designs.append(design.X)
        grams.append(design.X.T @ design.X / sigma**2)
    meta.update({"N": N, "sigma": float(sigma), "n": designs[0].shape[0]})
    return GramEnsemble(
        grams=np.array(grams), seed=int(seed), meta=meta, designs=tuple(designs)
    )


def fixed_ensemble(X, sigma: float) -> GramEnsemble:
    """Single-element ensemble for a deterministic design."""
    X = np.asarray(X, dtype=float)
    return GramEnsemble(
        grams=(X.T @ X / sigma**2)[None, :, :],
        seed=0,
        meta={"kind": "fixed", "N": 1, "sigma": float(sigma), "n": X.shape[0]},
        designs=(X,),
    )


def gram_only_ensemble(grams: Sequence[np.ndarray], sigma: float = 1.0, n: int | None = None) -> GramEnsemble:
    """Wrap explicit Gram matrices (no designs attached)."""
    g = np.asarray(grams, dtype=float)
    if g.ndim == 2:
        g = g[None, :, :]
    meta = {"kind": "grams", "N": g.shape[0], "sigma": float(sigma)}
    if n is not None:
        meta["n"] = int(n)
    return GramEnsemble(grams=g, seed=0, meta=meta, designs=())
