"""Batch front door.

One subcommand per experiment family; a flat key=value config file; all
randomness derived from a single seed; CSV/JSON artifacts plus a run
manifest.  CSV outputs are byte-identical across reruns and worker counts
for a fixed config and seed (the wall-clock timestamp lives only in the
manifest).

Exit codes: 0 pass, 1 config/validation error, 2 a bound check failed,
3 a solver failed to converge.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

import boundlab
from boundlab import covering as covering_mod
from boundlab import epl, maurey, verify
from boundlab.design import (
    FunctionSystem,
    build_tv_system,
    ell1_norm,
    load_system,
    make_lad_instance,
    make_logistic_instance,
)
from boundlab.errors import BoundCheckError, ConfigError, ConvergenceError
from boundlab.estimator import solve_penalized
from boundlab.losses import loss_for, sample_responses

SUBCOMMANDS = ("covering", "maurey", "epsim", "tail", "solve", "verify", "rate")


# ---------------------------------------------------------------------------
# Config handling


def parse_config(text: str) -> Dict[str, str]:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def format_config(cfg: Dict[str, str]) -> str:
    """Inverse of :func:`parse_config` (keys sorted for stability)."""
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


class Config:
    """Typed, validating access to a flat config; unknown keys are rejected."""

    def __init__(self, raw: Dict[str, str]):
        self.raw = dict(raw)
        self._seen: set = set()

    def _fetch(self, key: str, default, required: bool) -> Optional[str]:
        self._seen.add(key)
        if key in self.raw:
            return self.raw[key]
        if required:
            raise ConfigError(f"missing required config key {key!r}")
        return default

    def get_str(self, key: str, default: Optional[str] = None, required: bool = False):
        return self._fetch(key, default, required)

    def get_int(self, key: str, default=None, required=False, minimum=None) -> Optional[int]:
        val = self._fetch(key, None, required)
        if val is None:
            out = default
        else:
            try:
                out = int(val)
            except ValueError as exc:
                raise ConfigError(f"config key {key!r} must be an integer, got {val!r}") from exc
        if out is not None and minimum is not None and out < minimum:
            raise ConfigError(f"config key {key!r} violates precondition >= {minimum} (got {out})")
        return out

    def get_float(self, key, default=None, required=False, minimum=None, strict_min=None):
        val = self._fetch(key, None, required)
        if val is None:
            out = default
        else:
            try:
                out = float(val)
            except ValueError as exc:
                raise ConfigError(f"config key {key!r} must be a number, got {val!r}") from exc
        if out is not None:
            if minimum is not None and out < minimum:
                raise ConfigError(f"config key {key!r} violates precondition >= {minimum} (got {out})")
            if strict_min is not None and out <= strict_min:
                raise ConfigError(f"config key {key!r} violates precondition > {strict_min} (got {out})")
        return out

    def get_floats(self, key, default=None, required=False) -> Optional[List[float]]:
        val = self._fetch(key, None, required)
        if val is None:
            return default
        try:
            return [float(tok) for tok in val.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"config key {key!r} must be comma-separated numbers") from exc

    def get_ints(self, key, default=None, required=False) -> Optional[List[int]]:
        val = self._fetch(key, None, required)
        if val is None:
            return default
        try:
            return [int(tok) for tok in val.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"config key {key!r} must be comma-separated integers") from exc

    def reject_unknown(self) -> None:
        unknown = set(self.raw) - self._seen
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")


# ---------------------------------------------------------------------------
# Artifact writing


class RunContext:
    def __init__(self, out_dir: Path, seed: int, workers: int, svg: bool):
        self.out = out_dir
        self.seed = seed
        self.workers = workers
        self.svg = svg
        self.created: List[Path] = []

    def path(self, name: str) -> Path:
        p = self.out / name
        self.created.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.created:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(
        json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="ascii"
    )


def write_manifest(ctx: RunContext, subcommand: str, cfg: Dict[str, str], wall: float) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": cfg,
        "seed": ctx.seed,
        "workers": ctx.workers,
        "versions": {
            "boundlab": boundlab.__version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "wall_time_s": wall,
        "timestamp_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    write_json(ctx.path("manifest.json"), manifest)


# ---------------------------------------------------------------------------
# Shared pieces


def _load_config(path: Optional[str]) -> Dict[str, str]:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(p.read_text(encoding="utf-8"))


def _build_system(cfg: Config) -> FunctionSystem:
    source = cfg.get_str("system", default="tv")
    if source == "tv":
        m = cfg.get_int("m", required=True, minimum=2)
        n = cfg.get_int("n", required=True, minimum=2)
        if n < m:
            raise ConfigError(f"config violates precondition n >= m (n={n}, m={m})")
        return build_tv_system(n, m)
    p = Path(source)
    if not p.exists():
        raise ConfigError(f"system file not found: {source}")
    return load_system(p)


def _theta_star(cfg: Config, m: int) -> np.ndarray:
    spec = cfg.get_str("theta_star", default="unit:0")
    if spec.startswith("unit:"):
        k = int(spec.split(":", 1)[1])
        if not 0 <= k < m:
            raise ConfigError(f"theta_star unit index {k} out of range [0, {m})")
        theta = np.zeros(m)
        theta[k] = 1.0
        return theta
    vals = np.array([float(tok) for tok in spec.split(",")])
    if vals.shape != (m,):
        raise ConfigError(f"theta_star has {vals.size} entries, expected {m}")
    return vals


def _envelope_a(cfg: Config, system: FunctionSystem, s: float) -> float:
    mode = cfg.get_str("envelope_a", default="fit")
    if mode == "fit":
        v_exp = 2.0 / s - 2.0
        return covering_mod.covering_report(system, V=v_exp).A
    try:
        a_val = float(mode)
    except ValueError as exc:
        raise ConfigError(f"envelope_a must be 'fit' or a number, got {mode!r}") from exc
    if a_val < 1:
        raise ConfigError(f"envelope_a violates precondition >= 1 (got {a_val})")
    return a_val


def _get_s(cfg: Config) -> float:
    s = cfg.get_float("s", default=0.5)
    if not 0 < s < 1:
        raise ConfigError(f"config key 's' violates precondition 0 < s < 1 (got {s})")
    return s


# ---------------------------------------------------------------------------
# Subcommands


def run_covering(cfg: Config, ctx: RunContext) -> int:
    system = _build_system(cfg)
    v_given = cfg.get_float("v", default=None, strict_min=0.0)
    eps_grid = cfg.get_floats("eps_grid", default=None)
    cfg.reject_unknown()
    report = covering_mod.covering_report(system, eps_grid=eps_grid, V=v_given)
    rows = [
        (e, c, report.envelope(e))
        for e, c in zip(report.eps_grid, report.counts)
    ]
    write_csv(ctx.path("covering.csv"), ("epsilon", "count", "envelope_value"), rows)
    write_json(
        ctx.path("covering.json"),
        {"V": report.V, "A": report.A, "s": report.s, "m": system.m, "n": system.n},
    )
    return 0


def run_maurey(cfg: Config, ctx: RunContext) -> int:
    system = _build_system(cfg)
    s = _get_s(cfg)
    eps = cfg.get_float("eps", required=True, strict_min=0.0)
    replications = cfg.get_int("replications", default=2000, minimum=2)
    theta_spec = cfg.get_str("theta", default="uniform")
    envelope_a = _envelope_a(cfg, system, s)
    cfg.reject_unknown()
    if theta_spec == "uniform":
        theta = np.full(system.m, 1.0 / system.m)
    else:
        theta = np.array([float(t) for t in theta_spec.split(",")])
    partition = covering_mod.partition_cells(system, eps**s)
    plan = maurey.build_plan(theta, partition, eps, s)
    budget = maurey.combinatorial_budget(plan, envelope_a, system.m)
    est = maurey.approximation_error_mc(plan, system, theta, replications, ctx.seed)
    moment_bound = 4.0 * eps**2
    write_json(
        ctx.path("maurey_plan.json"),
        {
            "radius": plan.partition.radius,
            "n_cells": plan.partition.n_cells,
            "cells": [
                {"size": len(cell), "alpha": a, "n_j": d}
                for cell, a, d in zip(plan.partition.cells, plan.alpha, plan.draws)
            ],
            "K": budget.k_budget,
            "pi_bound_log2": budget.pi_bound_log2,
            "envelope_a": envelope_a,
        },
    )
    ratio = (est.mean + 3.0 * est.se) / moment_bound
    write_csv(
        ctx.path("maurey_mc.csv"),
        ("eps", "s", "mc_mean", "mc_se", "bound", "ratio", "replications", "max_atoms", "draw_budget"),
        [(eps, s, est.mean, est.se, moment_bound, ratio, est.replications,
          est.max_atoms, budget.k_budget + 1)],
    )
    if est.mean + 3.0 * est.se > moment_bound or est.max_atoms > budget.k_budget + 1:
        raise BoundCheckError("sparsification moment or atom budget check failed")
    return 0


def run_epsim(cfg: Config, ctx: RunContext) -> int:
    system = _build_system(cfg)
    s = _get_s(cfg)
    eps_list = cfg.get_floats("eps_list", required=True)
    m_list = cfg.get_floats("m_list", required=True)
    replications = cfg.get_int("replications", default=500, minimum=2)
    tol = cfg.get_float("tol", default=1e-5, strict_min=0.0)
    envelope_a = _envelope_a(cfg, system, s)
    cfg.reject_unknown()
    rows = []
    all_ok = True
    for eps in eps_list:
        for big_m in m_list:
            if eps / big_m <= 8.0 / system.m:
                continue  # outside the bound's validity range
            est = epl.mc_mean_base(
                system, eps, big_m, envelope_a, s, replications, ctx.seed,
                tol=tol, workers=ctx.workers,
            )
            rows.append(
                (est.eps, est.big_m, est.mc_mean, est.mc_se, est.bound,
                 est.ratio, est.replications, est.failures)
            )
            all_ok = all_ok and est.ratio < 1.0 and est.valid
    if not rows:
        raise ConfigError("no (eps, M) pair satisfies eps/M > 8/m")
    write_csv(
        ctx.path("epsim.csv"),
        ("eps", "M", "mc_mean", "mc_se", "bound", "ratio", "replications", "failures"),
        rows,
    )
    if not all_ok:
        raise BoundCheckError("a base-process mean exceeded its bound")
    return 0


def run_tail(cfg: Config, ctx: RunContext) -> int:
    system = _build_system(cfg)
    s = _get_s(cfg)
    half_width = cfg.get_float("b", required=True, strict_min=0.0)
    theta_star = _theta_star(cfg, system.m)
    eps_list = cfg.get_floats("eps_list", required=True)
    sigma_list = cfg.get_floats("sigma_list", required=True)
    big_m = cfg.get_float("m_ball", required=True, strict_min=0.0)
    replications = cfg.get_int("replications", default=1000, minimum=2)
    restarts = cfg.get_int("restarts", default=4, minimum=1)
    iters = cfg.get_int("iters", default=30, minimum=1)
    envelope_a = _envelope_a(cfg, system, s)
    cfg.reject_unknown()
    if len(eps_list) != len(sigma_list):
        raise ConfigError("eps_list and sigma_list must have equal length")
    for eps in eps_list:
        if eps / big_m <= 8.0 / system.m:
            raise ConfigError(
                f"violated precondition eps/M > 8/m (eps={eps}, M={big_m}, m={system.m})"
            )
    instance = make_lad_instance(system, theta_star, half_width, ctx.seed)
    rows = []
    all_ok = True
    for eps, sigma in zip(eps_list, sigma_list):
        check = epl.deviation_tail_check(
            instance, eps, big_m, sigma, envelope_a, s, replications,
            seed=ctx.seed, restarts=restarts, iters=iters, workers=ctx.workers,
        )
        rows.append(
            (check.eps, check.big_m, check.sigma, check.threshold, check.tail_bound,
             check.frequency, check.se, check.exceedances, check.replications, check.ok)
        )
        all_ok = all_ok and check.ok
    write_csv(
        ctx.path("tail.csv"),
        ("eps", "M", "sigma", "threshold", "tail_bound", "frequency", "se",
         "exceedances", "replications", "ok"),
        rows,
    )
    if not all_ok:
        raise BoundCheckError("an exceedance frequency violated its tail bound")
    return 0


def run_solve(cfg: Config, ctx: RunContext) -> int:
    system = _build_system(cfg)
    s = _get_s(cfg)
    loss_kind = cfg.get_str("loss", default="lad")
    theta_star = _theta_star(cfg, system.m)
    lambda_n = cfg.get_float("lambda_n", required=True, strict_min=0.0)
    tol = cfg.get_float("tol", default=1e-6, strict_min=0.0)
    data_index = cfg.get_int("data_index", default=0, minimum=0)
    if loss_kind == "lad":
        half_width = cfg.get_float("b", required=True, strict_min=0.0)
        instance = make_lad_instance(system, theta_star, half_width, ctx.seed)
    elif loss_kind == "logistic":
        instance = make_logistic_instance(system, theta_star, ctx.seed)
    else:
        raise ConfigError(f"loss must be 'lad' or 'logistic', got {loss_kind!r}")
    cfg.reject_unknown()
    loss = loss_for(instance)
    y = sample_responses(instance, data_index)
    fit = solve_penalized(loss, system, y, lambda_n, s, tol=tol)
    write_json(
        ctx.path("fit.json"),
        {
            "theta_hat": fit.theta_hat,
            "objective": fit.objective,
            "lambda_path": fit.lambda_path,
            "subgradient_residual": fit.subgradient_residual,
            "iterations": fit.iterations,
            "l1_norm": ell1_norm(fit.theta_hat),
        },
    )
    return 0


def _sigma_fn_from_cfg(cfg: Config, instance, loss):
    mode = cfg.get_str("sigma", default="certified")
    if mode == "certified":
        from boundlab.losses import margin_sigma

        return (lambda big_m: margin_sigma(loss, big_m, instance)), "certified"
    try:
        sigma_val = float(mode)
    except ValueError as exc:
        raise ConfigError(f"sigma must be 'certified' or a number, got {mode!r}") from exc
    if sigma_val <= 0:
        raise ConfigError(f"sigma violates precondition > 0 (got {sigma_val})")
    return (lambda big_m: sigma_val), f"declared:{sigma_val}"


def run_verify(cfg: Config, ctx: RunContext) -> int:
    system = _build_system(cfg)
    s = _get_s(cfg)
    half_width = cfg.get_float("b", required=True, strict_min=0.0)
    theta_star = _theta_star(cfg, system.m)
    c = cfg.get_float("c", default=3.0, minimum=3.0)
    replications = cfg.get_int("replications", default=200, minimum=100)
    tol = cfg.get_float("tol", default=1e-6, strict_min=0.0)
    lambda_n0_raw = cfg.get_str("lambda_n0", default="lemma")
    instance = make_lad_instance(system, theta_star, half_width, ctx.seed)
    loss = loss_for(instance)
    sigma_fn, sigma_label = _sigma_fn_from_cfg(cfg, instance, loss)
    envelope_a: Optional[float] = None
    lambda_n0: Optional[float] = None
    if lambda_n0_raw == "lemma":
        envelope_a = _envelope_a(cfg, system, s)
    else:
        try:
            lambda_n0 = float(lambda_n0_raw)
        except ValueError as exc:
            raise ConfigError(f"lambda_n0 must be 'lemma' or a number") from exc
        if lambda_n0 <= 0:
            raise ConfigError(f"lambda_n0 violates precondition > 0 (got {lambda_n0})")
        cfg.get_str("envelope_a", default="fit")  # consume if present
    i_star = ell1_norm(theta_star)
    cfg.reject_unknown()
    params = verify.compute_bound_parameters(
        s, envelope_a, system.m, system.n, c, i_star, sigma_fn,
        lambda_n0=lambda_n0, sigma_label=sigma_label,
    )
    report = verify.coverage_study(
        instance, params, replications, ctx.seed, workers=ctx.workers, tol=tol
    )
    write_json(
        ctx.path("verify.json"),
        {
            "params": {
                "s": params.s, "envelope_a": params.envelope_a, "m": params.m,
                "n": params.n, "c": params.c, "i_star": params.i_star,
                "lambda_n0": params.lambda_n0, "M_n": params.big_m_n,
                "sigma_n_sq": params.sigma_n_sq, "eps_n": params.eps_n,
                "lambda_n": params.lambda_n, "success_prob": params.success_prob,
                "regime_value": params.regime_value, "regime_ok": params.regime_ok,
                "first_branch_active": params.first_branch_active,
                "sigma": params.sigma_label,
            },
            "replications": report.replications,
            "coverage_norm": report.coverage_norm,
            "coverage_l1": report.coverage_l1,
            "required_prob": report.required_prob,
            "passed": report.passed,
            "vacuous_norm": report.vacuous_norm,
            "vacuous_l1": report.vacuous_l1,
            "n_failed": report.n_failed,
        },
    )
    write_csv(
        ctx.path("trials.csv"),
        ("trial", "err_norm", "l1_diff", "ok_norm", "ok_l1", "objective",
         "iterations", "out_of_regime", "failed"),
        [
            (t.index, t.err_norm, t.l1_diff, t.ok_norm, t.ok_l1, t.objective,
             t.iterations, t.out_of_regime, t.failed)
            for t in report.trials
        ],
    )
    if report.n_failed:
        raise ConvergenceError(f"{report.n_failed} trials had solver failures")
    if not report.passed:
        raise BoundCheckError("coverage fell short of the stated probability")
    return 0


def run_rate(cfg: Config, ctx: RunContext) -> int:
    s = _get_s(cfg)
    m = cfg.get_int("m", required=True, minimum=2)
    n_grid = cfg.get_ints("n_grid", required=True)
    c = cfg.get_float("c", default=3.0, minimum=3.0)
    half_width = cfg.get_float("b", required=True, strict_min=0.0)
    lambda_scale = cfg.get_float("lambda_scale", default=0.25, strict_min=0.0)
    sigma_value = cfg.get_float("sigma", default=1.0, strict_min=0.0)
    replications = cfg.get_int("replications", default=50, minimum=2)
    i_star_index = cfg.get_int("i_star_index", default=0, minimum=0)
    tol = cfg.get_float("tol", default=1e-6, strict_min=0.0)
    cfg.reject_unknown()
    family = verify.default_rate_family(
        s, m, c, half_width,
        i_star_index=i_star_index, lambda_scale=lambda_scale,
        sigma_value=sigma_value, instance_seed=ctx.seed,
    )
    study = verify.rate_study(
        s, family, n_grid, replications, ctx.seed, workers=ctx.workers, tol=tol
    )
    write_csv(
        ctx.path("rate.csv"),
        ("n", "median_error", "eps_n"),
        list(zip(study.n_grid, study.median_errors, study.eps_n_values)),
    )
    write_json(
        ctx.path("rate.json"),
        {
            "slope_mc": study.slope_mc,
            "slope_analytic": study.slope_analytic,
            "analytic_exponent": -1.0 / (2.0 * (2.0 - s)),
        },
    )
    if ctx.svg:
        _write_rate_svg(ctx, study)
    if study.slope_mc > study.slope_analytic + 0.1:
        raise BoundCheckError(
            f"observed error decays slower than the radius "
            f"({study.slope_mc:.3f} vs {study.slope_analytic:.3f} + 0.1)"
        )
    return 0


def _write_rate_svg(ctx: RunContext, study) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigError("--svg requires matplotlib (install boundlab[svg])") from exc
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(study.n_grid, study.median_errors, "o-", label="median error")
    ax.loglog(study.n_grid, study.eps_n_values, "s--", label="error radius")
    ax.set_xlabel("n")
    ax.set_ylabel("empirical norm")
    ax.legend()
    fig.tight_layout()
    fig.savefig(ctx.path("rate.svg"), format="svg", metadata={"Date": None})
    plt.close(fig)


RUNNERS = {
    "covering": run_covering,
    "maurey": run_maurey,
    "epsim": run_epsim,
    "tail": run_tail,
    "solve": run_solve,
    "verify": run_verify,
    "rate": run_rate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="boundlab",
        description="penalized-estimator experiments and bound verification",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--workers", type=int, default=1, help="worker processes")
    parser.add_argument("--svg", action="store_true", help="emit figures where supported")
    args = parser.parse_args(argv)

    t0 = time.time()
    try:
        raw = _load_config(args.config)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {args.workers}")
        ctx = RunContext(out_dir, args.seed, args.workers, args.svg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    cfg = Config(raw)
    try:
        status = RUNNERS[args.subcommand](cfg, ctx)
        write_manifest(ctx, args.subcommand, raw, time.time() - t0)
        return status
    except ConfigError as exc:
        ctx.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BoundCheckError as exc:
        write_manifest(ctx, args.subcommand, raw, time.time() - t0)
        print(f"bound check failed: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        ctx.cleanup()
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        ctx.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
