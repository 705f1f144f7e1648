"""Command-line entry point: ``hippo fit | simulate | bench | kkt-check``."""
from __future__ import annotations

import argparse
import json
import logging
import operator
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import HippoConfig, load_config
from .data import Dataset, ModelParams, load_csv, neg_loglik, save_csv, sigma_from_theta
from .oracle import confidence_interval, kkt_check_beta, kkt_check_theta
from .penalty import Penalty
from .sim import Method, SimulationSpec, generate, run_study
from .stage2 import Stage2Problem, objective_theta
from .stage3 import Stage3Problem, objective_beta
from .tuning import HippoFit, TuningGrid, fit_hippo

log = logging.getLogger("hippo")

FORMAT_VERSION = 1
_GRID_KEYS = {"n_lambda", "min_ratio", "max_support", "criterion", "lambda_S_values", "lambda_T_values"}


def default_threads() -> int:
    env = os.environ.get("HIPPO_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _load_cfg(path: str | None) -> tuple[HippoConfig, dict]:
    if path is None:
        return HippoConfig(), {}
    cfg, extras = load_config(path)
    grid = extras.get("grid", {})
    unknown = set(grid) - _GRID_KEYS
    if unknown:
        raise ValueError(f"unknown grid keys: {sorted(unknown)}")
    return cfg, grid


def _grid(args, grid_block: dict) -> TuningGrid:
    kw = dict(grid_block)
    if getattr(args, "fast", False):
        kw.setdefault("n_lambda", TuningGrid.fast().n_lambda)
    if getattr(args, "criterion", None) in ("aic", "bic"):
        kw["criterion"] = args.criterion
    if getattr(args, "lambda_s", None):
        kw["lambda_S_values"] = tuple(args.lambda_s)
    if getattr(args, "lambda_t", None):
        kw["lambda_T_values"] = tuple(args.lambda_t)
    for key in ("lambda_S_values", "lambda_T_values"):
        if kw.get(key) is not None:
            kw[key] = tuple(kw[key])
    return TuningGrid(**kw)


def _floats(a: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(a).ravel()]


def model_to_dict(d: Dataset, fit: HippoFit, cfg: HippoConfig, criterion: str, ci_level: float | None) -> dict:
    kkt = {}
    objective = {}
    if fit.stage2 is not None:
        kkt["theta"] = fit.stage2.kkt.to_dict()
        objective["theta"] = fit.stage2.objective
    if fit.stage3 is not None:
        kkt["beta"] = fit.stage3.kkt.to_dict()
        objective["beta"] = fit.stage3.objective
    cis = []
    if ci_level is not None:
        for j in sorted(set(fit.support_beta().tolist()) | ({0} if d.has_intercept else set())):
            lo, hi = confidence_interval(d, fit, j, ci_level)
            cis.append(dict(j=j, estimate=float(fit.beta[j]), lo=lo, hi=hi, level=ci_level))
    return {
        "format_version": FORMAT_VERSION,
        "n": d.n,
        "p": d.p,
        "has_intercept": d.has_intercept,
        "criterion": criterion,
        "iteration": fit.iteration,
        "lambda_S": fit.lambda_S,
        "lambda_T": fit.lambda_T,
        "beta": _floats(fit.beta),
        "theta": _floats(fit.theta),
        "beta_start": _floats(fit.beta_start) if fit.beta_start is not None else None,
        "support_beta": fit.support_beta(d.penalized).tolist(),
        "support_theta": fit.support_theta(d.penalized).tolist(),
        "sigma_hat": _floats(fit.sigma_hat),
        "df_hat": fit.df,
        "neg_loglik": fit.neg_loglik,
        "aic": fit.aic,
        "bic": fit.bic,
        "objective": objective,
        "kkt": kkt,
        "converged": fit.converged,
        "confidence_intervals": cis,
        "config": cfg.to_dict(),
    }


def load_model(path: str | Path) -> dict:
    model = json.loads(Path(path).read_text())
    if model.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {model.get('format_version')!r}")
    return model


def rescore(d: Dataset, model: dict) -> dict:
    """Recompute likelihood, objectives and certificates of a saved model on ``d``."""
    if d.n != model["n"] or d.p != model["p"] or d.has_intercept != model["has_intercept"]:
        raise ValueError("data shape does not match the model")
    beta = np.array(model["beta"], dtype=float)
    theta = np.array(model["theta"], dtype=float)
    pen = Penalty.from_config(model["config"]["penalty"])
    tol = 1e-4 * d.n
    out: dict[str, Any] = {"neg_loglik": neg_loglik(ModelParams(beta, theta), d), "objective": {}, "kkt": {}}
    if model.get("beta_start") is not None:
        eta_sq = (d.y - d.X @ np.array(model["beta_start"], dtype=float)) ** 2
        p2 = Stage2Problem(d, eta_sq, model["lambda_T"], pen)
        out["objective"]["theta"] = objective_theta(p2, theta)
        out["kkt"]["theta"] = kkt_check_theta(p2, theta, tol).to_dict()
    p3 = Stage3Problem(d, sigma_from_theta(d.X, theta), model["lambda_S"], pen)
    out["objective"]["beta"] = objective_beta(p3, beta)
    out["kkt"]["beta"] = kkt_check_beta(p3, beta, tol).to_dict()
    return out


def cmd_fit(args) -> int:
    cfg, grid_block = _load_cfg(args.config)
    d = load_csv(args.data, header=args.header, intercept=args.intercept)
    grid = _grid(args, grid_block)
    passes = fit_hippo(d, grid, cfg, iterations=args.iterations)
    fit, table = passes[-1]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = model_to_dict(d, fit, cfg, grid.criterion.value, args.ci_level)
    (out / "model.json").write_text(json.dumps(model, indent=2))
    table.write_csv(out / "criterion_table.csv")
    for lam_S, lam_T, msg in table.errors:
        log.warning("grid point (lambda_S=%s, lambda_T=%s) failed: %s", lam_S, lam_T, msg)
    print(json.dumps({k: model[k] for k in ("lambda_S", "lambda_T", "df_hat", "support_beta", "support_theta", "bic", "aic")}))
    return 0


def _spec(args) -> SimulationSpec:
    if args.study == "sim1":
        kw = {"n": args.n or 200, "p": args.p or 2000, "rho": args.rho}
        return SimulationSpec.sim1(n_replicates=args.replicates, seed=args.seed, **kw)
    return SimulationSpec.sim2(n=args.n or 400, p=args.p or 600, n_replicates=args.replicates, seed=args.seed)


def cmd_simulate(args) -> int:
    args.replicates = args.replicate + 1
    spec = _spec(args)
    d, truth = generate(spec, args.replicate)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(out / "data.csv", d, header=True)
    (out / "truth.json").write_text(
        json.dumps({"has_intercept": d.has_intercept, "beta": _floats(truth.beta), "theta": _floats(truth.theta)}, indent=2)
    )
    print(str(out / "data.csv"))
    return 0


_OPS = {"<=": operator.le, ">=": operator.ge, "<": operator.lt, ">": operator.gt}


def parse_assertion(text: str) -> tuple[str, str, float]:
    for sym in ("<=", ">=", "<", ">"):
        if sym in text:
            name, val = text.split(sym, 1)
            return name.strip(), sym, float(val)
    raise argparse.ArgumentTypeError(f"assertion {text!r} must look like metric<=value")


def cmd_bench(args) -> int:
    cfg, grid_block = _load_cfg(args.config)
    spec = _spec(args)
    grid = _grid(args, grid_block)
    methods = ["hippo", "hhr"] if args.method == "both" else [args.method]
    criteria = ["aic", "bic"] if args.criterion == "both" else [args.criterion]
    threads = args.threads or default_threads()
    failed = []
    for m in methods:
        res = run_study(spec, m, grid, args.iterations, cfg, criteria, threads)
        stem = f"{spec.which.value}_{m}"
        for path in res.write(args.out_dir, stem):
            print(path)
        last = max(i for _, i in res.keys()) if res.keys() else 1
        for row in res.aggregate():
            print(json.dumps({k: (round(v, 4) if isinstance(v, float) else v) for k, v in row.items()}))
            if row["iteration"] != last:
                continue
            for name, sym, val in args.assertions:
                if name not in row:
                    raise SystemExit(f"unknown metric in assertion: {name}")
                ok = _OPS[sym](row[name], val)
                print(f"{'PASS' if ok else 'FAIL'} {m} {row['criterion']} it{row['iteration']}: {name}={row[name]:.4f} {sym} {val}")
                if not ok:
                    failed.append(name)
    return 1 if failed else 0


def cmd_kkt_check(args) -> int:
    d = load_csv(args.data, header=args.header, intercept=args.intercept)
    model = load_model(args.model)
    res = rescore(d, model)
    print(json.dumps(res, indent=2))
    ok = all(c["passed"] for c in res["kkt"].values())
    return 0 if ok else 1


def _add_data_flags(sp) -> None:
    sp.add_argument("--data", required=True, help="CSV with y in the first column")
    sp.add_argument("--header", action="store_true", help="skip the first CSV line")
    sp.add_argument("--intercept", action="store_true", help="prepend an unpenalized all-ones column")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hippo", description="Sparse heteroscedastic regression fits and simulations.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a dataset and write model.json and criterion_table.csv")
    _add_data_flags(f)
    f.add_argument("--criterion", choices=["aic", "bic"], default="bic")
    f.add_argument("--lambda-s", type=float, nargs="+", help="explicit lambda_S values")
    f.add_argument("--lambda-t", type=float, nargs="+", help="explicit lambda_T values")
    f.add_argument("--ci-level", type=float, default=0.95)
    f.add_argument("--config", help="TOML or JSON config file")
    f.add_argument("--iterations", type=int, choices=[1, 2], default=1)
    f.add_argument("--fast", action="store_true", help="15 values per tuning parameter instead of 30")
    f.add_argument("--out-dir", default=".")
    f.set_defaults(func=cmd_fit)

    study_flags = argparse.ArgumentParser(add_help=False)
    study_flags.add_argument("--study", choices=["sim1", "sim2"], required=True)
    study_flags.add_argument("--n", type=int)
    study_flags.add_argument("--p", type=int)
    study_flags.add_argument("--rho", type=float, default=0.0, help="Sim1 equicorrelation")
    study_flags.add_argument("--seed", type=int, default=0)
    study_flags.add_argument("--out-dir", default=".")

    s = sub.add_parser("simulate", parents=[study_flags], help="write one simulated dataset as CSV")
    s.add_argument("--replicate", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", parents=[study_flags], help="Monte Carlo study, writes table and curve CSVs")
    b.add_argument("--replicates", type=int, default=100)
    b.add_argument("--method", choices=["hippo", "hhr", "both"] + [m.value for m in Method if m.value.startswith("oracle")],
                   default="hippo")
    b.add_argument("--criterion", choices=["aic", "bic", "both"], default="bic")
    b.add_argument("--iterations", type=int, choices=[1, 2], default=1)
    b.add_argument("--threads", type=int, help="worker processes (default: HIPPO_THREADS or all cores)")
    b.add_argument("--config", help="TOML or JSON config file")
    b.add_argument("--fast", action="store_true")
    b.add_argument("--assert", dest="assertions", type=parse_assertion, action="append", default=[],
                   help="e.g. l2_beta_mean<=0.2; exit 1 if it fails on the last iteration")
    b.set_defaults(func=cmd_bench)

    k = sub.add_parser("kkt-check", help="re-score a saved model and certify its optimality conditions")
    _add_data_flags(k)
    k.add_argument("--model", required=True)
    k.set_defaults(func=cmd_kkt_check)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
