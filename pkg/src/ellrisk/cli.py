"""Command-line front end: every solver behind one JSON-config dispatcher.

Usage:  ellrisk <subcommand> --config <path> --out <path> [--seed N]

Config files carry the whole experiment so each run is a reviewable
artifact; flags only select the subcommand and paths.  Exit codes: 0 on
success, 2 for I/O failures, 3 for config/parse errors, 4 for numerical
failures.  On failure a machine-readable JSON error object is written to
stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import closed_form, estimator, experiments, functional
from .ensembles import (
    gram_ensemble,
    kernel_spec_from_config,
    markov_m_matrix,
    markov_r_from_psi,
)
from .problem import PriorCovariance, feasible_project, problem_from_config

EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4

SUBCOMMANDS = (
    "phi",
    "bracket",
    "figure1",
    "figure2",
    "sequence",
    "kernel",
    "covshift",
    "markov",
    "estimate",
    "dicker",
    "mourtada",
)


class ConfigError(Exception):
    pass


def _require(cfg: dict, *keys):
    for key in keys:
        if key not in cfg:
            raise ConfigError(f"missing config key: {key!r}")
    return [cfg[k] for k in keys]


def _build_ensemble(cfg: dict, sigma: float, seed: int):
    if "sampler" not in cfg:
        raise ConfigError("missing config key: 'sampler'")
    n_rep = int(cfg.get("n_replicates", 50))
    return gram_ensemble(cfg["sampler"], n_rep, sigma, seed)


def _opts_from(cfg: dict):
    raw = cfg.get("opts", {})
    allowed = {"max_iter", "tol", "armijo_c", "step_shrink", "step_init"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown optimizer options: {sorted(unknown)}")
    return functional.OptimizerOptions(**raw)


def _cmd_phi(cfg: dict, seed: int) -> dict:
    problem = problem_from_config(cfg["problem"]) if "problem" in cfg else None
    if problem is None:
        raise ConfigError("missing config key: 'problem'")
    ens = _build_ensemble(cfg, problem.sigma, seed)
    res = functional.maximize_phi(problem, ens, _opts_from(cfg))
    return {
        "value": res.value,
        "omega_star": res.maximizer.matrix.tolist(),
        "iterations": res.iterations,
        "grad_norm": res.grad_norm,
        "mc_stderr": res.mc_stderr,
        "converged": res.converged,
    }


def _cmd_bracket(cfg: dict, seed: int) -> dict:
    (problem_cfg,) = _require(cfg, "problem")
    problem = problem_from_config(problem_cfg)
    ens = _build_ensemble(cfg, problem.sigma, seed)
    opts = _opts_from(cfg)
    bracket = functional.risk_bracket(problem, ens, opts)
    upper_res = functional.maximize_phi(problem, ens, opts)
    omega = upper_res.maximizer
    # Rescale to an active trace constraint for the sharpened route.
    tr = problem.constraint_trace(omega.matrix)
    omega_active = PriorCovariance(
        matrix=omega.matrix * (problem.radius**2 / tr), floor=omega.floor
    )
    d = problem.dim
    tau = float(cfg.get("tau", 0.5 if d == 1 else np.sqrt(1.0 - 1.0 / (2 * d - 1))))
    sharp, sharp_se = functional.sharp_lower(
        problem, ens, tau, omega_active, int(cfg.get("mc_draws", 100_000)), seed
    )
    return {
        "lower": bracket.lower,
        "upper": bracket.upper,
        "weak_lower": bracket.weak_lower,
        "sharp_lower": sharp,
        "sharp_lower_stderr": sharp_se,
        "omega_star": omega.matrix.tolist(),
        "methods": {k: str(v) for k, v in bracket.methods.items()},
    }


def _cmd_figure1(cfg: dict, seed: int) -> str:
    fig_cfg = experiments.Figure1Config(
        n_list=tuple(cfg.get("n_list", (128, 512))),
        tau_list=tuple(cfg.get("tau_list", (1.0, 10.0))),
        lambda_list=tuple(cfg.get("lambda_list", (0.0, 0.9, 0.99))),
        gamma_grid=tuple(cfg.get("gamma_grid", experiments.Figure1Config().gamma_grid)),
        replicates=int(cfg.get("replicates", 50)),
        seed=seed,
    )
    rows = experiments.figure1(fig_cfg)
    return experiments.rows_to_csv(rows, experiments.FIG1_COLUMNS, experiments.FIG1_SCHEMA)


def _cmd_figure2(cfg: dict, seed: int) -> str:
    fig_cfg = experiments.Figure2Config(
        psi_names=tuple(cfg.get("psi_names", experiments.PSI_NAMES)),
        T_grid=tuple(cfg.get("T_grid", experiments.Figure2Config().T_grid)),
        tau_list=tuple(cfg.get("tau_list", (1.0, 10.0))),
        mc_trials=int(cfg.get("mc_trials", 5000)),
        seed=seed,
    )
    rows = experiments.figure2(fig_cfg)
    return experiments.rows_to_csv(rows, experiments.FIG2_COLUMNS, experiments.FIG2_SCHEMA)


def _cmd_sequence(cfg: dict, seed: int) -> dict:
    seq = closed_form.sequence_from_config(cfg)
    sol = closed_form.pinsker_waterfill(seq)
    return {
        "value": sol.value,
        "level": sol.level,
        "allocation": sol.allocation.tolist(),
        "active_set_size": sol.active_set_size,
    }


def _cmd_kernel(cfg: dict, seed: int) -> dict:
    mu_cfg, n, rho, sigma = _require(cfg, "mu", "n", "rho", "sigma")
    if isinstance(mu_cfg, dict):
        gen = closed_form.sobolev_mu_generator(float(mu_cfg["power"]) / 2.0)
        sol = closed_form.kernel_waterfill(gen, float(n), float(rho), float(sigma))
    else:
        sol = closed_form.kernel_waterfill(
            np.asarray(mu_cfg, dtype=float), float(n), float(rho), float(sigma)
        )
    return {
        "value": sol.value,
        "level": sol.level,
        "active_set_size": sol.active_set_size,
    }


def _cmd_covshift(cfg: dict, seed: int) -> dict:
    mu_cfg, B, n, rho, sigma = _require(cfg, "mu", "B", "n", "rho", "sigma")
    mu = kernel_spec_from_config(mu_cfg).mu if isinstance(mu_cfg, dict) else np.asarray(mu_cfg)
    simplex_bound, dstar_bound, d_star = closed_form.covshift_lower(
        mu, float(B), int(n), float(rho), float(sigma)
    )
    return {"simplex_bound": simplex_bound, "dstar_bound": dstar_bound, "d_star": d_star}


def _cmd_markov(cfg: dict, seed: int) -> dict:
    T = int(_require(cfg, "T")[0])
    psi = cfg.get("psi", "iid")
    handle = experiments.psi_log_handle(psi)
    r = np.zeros(T) if handle is None else markov_r_from_psi(handle, T, log=True)
    m = markov_m_matrix(r)
    rho = float(cfg.get("rho", cfg.get("tau", 1.0)))
    sigma = float(cfg.get("sigma", 1.0))
    trials = int(cfg.get("trials", 5000))
    value, stderr = closed_form.markov_phi(m, rho, sigma, trials, seed)
    return {
        "psi": psi,
        "T": T,
        "phi": value,
        "stderr": stderr,
        "phi_normalized": value * sigma**2 / rho**2,
    }


def _read_csv_matrix(path: str) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and not row[0].startswith("#")]
    # Tolerate a non-numeric header row.
    try:
        float(rows[0][0])
        start = 0
    except (ValueError, IndexError):
        start = 1
    return np.array([[float(v) for v in row] for row in rows[start:]])


def _cmd_estimate(cfg: dict, seed: int) -> str:
    problem_cfg, x_path, y_path = _require(cfg, "problem", "x_csv", "y_csv")
    problem = problem_from_config(problem_cfg)
    X = _read_csv_matrix(x_path)
    y = _read_csv_matrix(y_path).ravel()
    if "omega" in cfg:
        prior = feasible_project(problem, np.asarray(cfg["omega"], dtype=float))
    else:
        from .ensembles import fixed_ensemble

        res = functional.maximize_phi(problem, fixed_ensemble(X, problem.sigma), _opts_from(cfg))
        prior = res.maximizer
    est = estimator.RidgeEstimator(prior=prior, problem=problem)
    theta = estimator.fit(est, X, y)
    lines = ["theta"] + [format(v, ".17g") for v in theta]
    return "\n".join(lines) + "\n"


def _cmd_dicker(cfg: dict, seed: int) -> dict:
    n, d, rho, sigma = _require(cfg, "n", "d", "rho", "sigma")
    trials = int(cfg.get("trials", 1000))
    value, stderr = closed_form.dicker_functional(
        int(n), int(d), float(rho), float(sigma), trials, seed
    )
    return {"value": value, "stderr": stderr, "cd": functional.dicker_cd(int(d))}


def _cmd_mourtada(cfg: dict, seed: int) -> dict:
    (sigma_p,) = _require(cfg, "Sigma_P")
    sigma = float(cfg.get("sigma", 1.0))
    ens = _build_ensemble(cfg, sigma, seed)
    d = ens.dim
    sp = np.eye(d) if sigma_p == "identity" else np.asarray(sigma_p, dtype=float)
    value, stderr = closed_form.mourtada_limit(ens, sp)
    return {"value": value, "stderr": stderr}


_DISPATCH = {
    "phi": _cmd_phi,
    "bracket": _cmd_bracket,
    "figure1": _cmd_figure1,
    "figure2": _cmd_figure2,
    "sequence": _cmd_sequence,
    "kernel": _cmd_kernel,
    "covshift": _cmd_covshift,
    "markov": _cmd_markov,
    "estimate": _cmd_estimate,
    "dicker": _cmd_dicker,
    "mourtada": _cmd_mourtada,
}


def _fail(code: int, kind: str, message: str, **extra) -> int:
    payload = {"error": kind, "message": message}
    payload.update(extra)
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ellrisk",
        description="Minimax risk brackets for elliptically constrained linear models.",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="path to a JSON config file")
    parser.add_argument("--out", required=True, help="output path (.json or .csv)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            raw = fh.read()
    except OSError as exc:
        return _fail(EXIT_IO, "io", f"cannot read config: {exc}")
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        return _fail(EXIT_CONFIG, "parse", f"config is not valid JSON: {exc}", line=exc.lineno)
    if not isinstance(cfg, dict):
        return _fail(EXIT_CONFIG, "parse", "config must be a JSON object")

    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    try:
        result = _DISPATCH[args.subcommand](cfg, seed)
    except (ConfigError, KeyError) as exc:
        key = exc.args[0] if isinstance(exc, KeyError) else str(exc)
        return _fail(EXIT_CONFIG, "config", f"bad config: {key}", key=str(key))
    except (ValueError, TypeError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        return _fail(EXIT_NUMERICAL, "numerical", str(exc))

    try:
        with open(args.out, "w") as fh:
            if isinstance(result, str):
                fh.write(result)
            else:
                fh.write(json.dumps(result, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        return _fail(EXIT_IO, "io", f"cannot write output: {exc}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
