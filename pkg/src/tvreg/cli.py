"""Command-line interface: fit, predict, simulate, summary.

Exit codes: 0 success, 2 usage errors (bad flags or an unparsable formula),
3 data errors (missing/invalid columns or files), 4 numerical failures.
Every output file is written atomically (temp file + rename in the target
directory), so an interrupted or failed run never leaves partial files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .diagnostics import (
    coef_paths,
    draws_long_table,
    predict,
    summarize,
    summarize_long_table,
    _moments,
    _normalize_log_weights,
    _wide_values,
)
from .errors import (
    FormulaError,
    InitFailureError,
    ModelError,
    NumericalBreakdownError,
    TvregError,
)
from .formula import format_formula, parse_formula
from .model import INTERCEPT_NAME, ModelSpec, build_model
from .plots import render_coef_paths_svg, render_prediction_svg
from .sampler import PosteriorDraws, SamplerConfig, run
from .synthetic import simulate_example_data

META_SCHEMA_VERSION = 1


class UsageError(Exception):
    """Bad invocation that argparse cannot catch itself."""


class DataError(Exception):
    """Unreadable or inconsistent input files."""


# ---------------------------------------------------------------------------
# small IO helpers


def _write_atomic(path: Path, payload: str | bytes) -> None:
    data = payload.encode() if isinstance(payload, str) else payload
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_table(path: str) -> pd.DataFrame:
    """CSV reader where only truly empty cells count as missing."""
    try:
        return pd.read_csv(
            path,
            na_values=[""],
            keep_default_na=False,
            float_precision="round_trip",
        )
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, OSError, UnicodeError) as exc:
        raise DataError(f"could not read {path}: {exc}") from None


def _csv_bytes(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False)


def _parse_gamma(arg: str | None) -> dict[str, str]:
    if not arg:
        return {}
    bindings = {}
    for part in arg.split(","):
        if "=" not in part:
            raise UsageError(
                f"--gamma bindings look like TERM=COLUMN, got {part!r}"
            )
        term, col = part.split("=", 1)
        term, col = term.strip(), col.strip()
        if not term or not col:
            raise UsageError(f"--gamma bindings look like TERM=COLUMN, got {part!r}")
        bindings[term] = col
    return bindings


# ---------------------------------------------------------------------------
# fit


def _meta_payload(args, spec: ModelSpec, config: SamplerConfig, draws: PosteriorDraws,
                  runtime: float) -> dict:
    return {
        "schema_version": META_SCHEMA_VERSION,
        "tool": {"name": "tvreg", "version": __version__},
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "command": "fit",
        "formula": args.formula,
        "formula_canonical": format_formula(parse_formula(args.formula)),
        "data": os.fspath(args.data),
        "family": spec.family,
        "exposure_column": args.exposure,
        "gamma_columns": _parse_gamma(args.gamma),
        "n_obs": spec.n_obs,
        "config": {
            "iter": config.iter,
            "warmup": config.warmup,
            "chains": config.chains,
            "seed": config.seed,
            "target_accept": config.target_accept,
            "init_jitter": config.init_jitter,
            "steps_per_iter": config.steps_per_iter,
        },
        "layout": {
            "response": spec.response_name,
            "fixed_terms": list(spec.fixed_names),
            "rw1_terms": list(spec.rw1_names),
            "rw2_terms": list(spec.rw2_names),
            "state_dim": spec.state_dim,
            "sigma_names": list(spec.sigma_names),
            "gamma_last": spec.gamma_matrix()[-1].tolist() if spec.p_rw1 else [],
        },
        "accept_rate": [float(r) for r in draws.accept_rate],
        "weight_ess": draws.weight_ess() if spec.family == "poisson" else None,
        "runtime_seconds": round(runtime, 3),
    }


def _cmd_fit(args) -> int:
    data = _read_table(args.data)
    ast = parse_formula(args.formula)
    spec = build_model(
        ast,
        data,
        family=args.family,
        exposure=args.exposure,
        gamma=_parse_gamma(args.gamma) or None,
    )
    try:
        config = SamplerConfig(
            iter=args.iter,
            warmup=args.warmup,
            chains=args.chains,
            seed=args.seed,
            target_accept=args.target_accept,
            steps_per_iter=args.steps_per_iter,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    started = time.perf_counter()
    draws = run(spec, config)
    runtime = time.perf_counter() - started

    draws_df = draws_long_table(draws)
    summary_df = summarize(draws)
    paths_df = coef_paths(summary_df)
    meta = _meta_payload(args, spec, config, draws, runtime)
    # A model with only time-invariant coefficients has no paths to draw.
    svg = None
    if len(paths_df):
        svg = render_coef_paths_svg(paths_df, title=f"{spec.response_name}: coefficient paths")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_atomic(out / "draws.csv", _csv_bytes(draws_df))
    _write_atomic(out / "summary.csv", _csv_bytes(summary_df))
    _write_atomic(out / "coef_paths.csv", _csv_bytes(paths_df))
    _write_atomic(out / "meta.json", json.dumps(meta, indent=2) + "\n")
    written = "draws.csv, summary.csv, coef_paths.csv, meta.json"
    if svg is not None:
        _write_atomic(out / "coef_paths.svg", svg)
        written += ", coef_paths.svg"
    print(f"wrote {out}/{{{written}}}")
    return 0


# ---------------------------------------------------------------------------
# predict


def _load_fit(fit_dir: str):
    fit = Path(fit_dir)
    meta_path = fit / "meta.json"
    draws_path = fit / "draws.csv"
    if not meta_path.exists() or not draws_path.exists():
        raise DataError(f"{fit_dir} does not look like a fit directory "
                        "(needs meta.json and draws.csv)")
    with open(meta_path) as handle:
        meta = json.load(handle)
    table = _read_table(os.fspath(draws_path))
    return meta, table


def _spec_stub(meta: dict) -> ModelSpec:
    """Rebuild just enough of the model layout to propagate predictions."""
    lay = meta["layout"]
    n_obs = int(meta["n_obs"])
    p_f, p_1, p_2 = map(len, (lay["fixed_terms"], lay["rw1_terms"], lay["rw2_terms"]))
    gamma = None
    if p_1 and lay.get("gamma_last"):
        gamma = np.tile(np.asarray(lay["gamma_last"], dtype=float), (n_obs, 1))
    p = p_f + p_1 + p_2
    return ModelSpec(
        y=np.zeros(n_obs),
        X_fixed=np.zeros((n_obs, p_f)),
        X_rw1=np.zeros((n_obs, p_1)),
        X_rw2=np.zeros((n_obs, p_2)),
        beta1_priors=np.zeros((p, 2)),
        sigma_priors=np.zeros((len(lay["sigma_names"]), 2)),
        nu1_priors=np.zeros((p_2, 2)),
        family=meta["family"],
        gamma=gamma,
        response_name=lay["response"],
        fixed_names=tuple(lay["fixed_terms"]),
        rw1_names=tuple(lay["rw1_terms"]),
        rw2_names=tuple(lay["rw2_terms"]),
    )


def _posterior_from_table(table: pd.DataFrame, spec: ModelSpec) -> PosteriorDraws:
    names, values = _wide_values(table)
    col_of = {name: j for j, name in enumerate(names)}
    c, k = values.shape[:2]
    n_obs, m = spec.n_obs, spec.state_dim

    def need(name: str) -> int:
        if name not in col_of:
            raise DataError(f"draws table lacks variable {name!r}")
        return col_of[name]

    sigma = np.stack(
        [values[:, :, need(nm)] for nm in spec.sigma_names], axis=-1
    )
    states = np.zeros((c, k, n_obs, m))
    j = 0
    for name in spec.fixed_names:
        states[:, :, :, j] = values[:, :, need(f"beta_{name}"), None]
        j += 1
    for name in spec.rw1_names:
        for t in range(n_obs):
            states[:, :, t, j] = values[:, :, need(f"tv_{name}[{t + 1}]")]
        j += 1
    for name in spec.rw2_names:
        for t in range(n_obs):
            states[:, :, t, j] = values[:, :, need(f"tv_{name}[{t + 1}]")]
            states[:, :, t, j + 1] = values[:, :, need(f"nu_{name}[{t + 1}]")]
        j += 2
    lweight = (
        values[:, :, col_of["lweight"]] if "lweight" in col_of else np.zeros((c, k))
    )
    return PosteriorDraws(
        spec=spec,
        sigma_draws=sigma,
        state_draws=states,
        log_weights=lweight,
        lp=np.zeros((c, k)),
        accept_rate=np.zeros(c),
    )


def _new_design(spec: ModelSpec, new_data: pd.DataFrame) -> np.ndarray:
    cols = []
    for name in spec.fixed_names + spec.rw1_names + spec.rw2_names:
        if name == INTERCEPT_NAME:
            cols.append(np.ones(len(new_data)))
        elif name in new_data.columns:
            cols.append(new_data[name].to_numpy(dtype=float))
        else:
            raise DataError(f"new data lacks column {name!r}")
    matrix = np.column_stack(cols)
    if np.isnan(matrix).any():
        raise DataError("new data predictors must be complete (no missing cells)")
    return matrix


def _cmd_predict(args) -> int:
    meta, table = _load_fit(args.fit)
    spec = _spec_stub(meta)
    draws = _posterior_from_table(table, spec)
    new_data = _read_table(args.data)
    if len(new_data) == 0:
        raise DataError("new data has no rows")
    new_x = _new_design(spec, new_data)

    exposure = None
    if spec.family == "poisson":
        col = meta.get("exposure_column")
        if col is not None:
            if col not in new_data.columns:
                raise DataError(f"new data lacks exposure column {col!r}")
            exposure = new_data[col].to_numpy(dtype=float)

    rng = np.random.default_rng(args.seed)
    values = predict(spec, draws, new_x, mode=args.mode, exposure=exposure, rng=rng)

    h, n_draws = values.shape
    c, k = draws.n_chains, draws.kept
    long = pd.DataFrame(
        {
            "chain": np.tile(np.repeat(np.arange(1, c + 1), k), h),
            "iteration": np.tile(np.tile(np.arange(1, k + 1), c), h),
            "step": np.repeat(np.arange(1, h + 1), n_draws),
            "value": values.reshape(-1),
        }
    )
    lw = draws.log_weights.reshape(-1)
    weights = None if np.all(lw == lw[0]) else _normalize_log_weights(lw)
    rows = []
    for step in range(h):
        mean, sd, lwr, med, upr = _moments(values[step], weights)
        rows.append(
            {"step": step + 1, "mean": mean, "sd": sd, "lwr": lwr, "median": med, "upr": upr}
        )
    summary = pd.DataFrame(rows)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    svg = render_prediction_svg(
        summary["step"].to_numpy(),
        summary["mean"].to_numpy(),
        summary["lwr"].to_numpy(),
        summary["upr"].to_numpy(),
    )
    _write_atomic(out / "predictions.csv", _csv_bytes(long))
    _write_atomic(out / "prediction_summary.csv", _csv_bytes(summary))
    _write_atomic(out / "predictions.svg", svg)
    print(f"wrote {out}/predictions.csv, prediction_summary.csv, predictions.svg")
    return 0


# ---------------------------------------------------------------------------
# simulate / summary


def _cmd_simulate(args) -> int:
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    data, truth = simulate_example_data(n=args.n, seed=args.seed)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    truth_path = out.with_name(out.stem + "_truth" + (out.suffix or ".csv"))
    _write_atomic(out, _csv_bytes(data))
    _write_atomic(truth_path, _csv_bytes(truth))
    print(f"wrote {out} and {truth_path}")
    return 0


def _cmd_summary(args) -> int:
    table = _read_table(args.draws)
    try:
        summary = summarize_long_table(table)
    except TvregError as exc:
        raise DataError(str(exc)) from None
    payload = _csv_bytes(summary)
    if args.out:
        out = Path(args.out)
        if out.parent and not out.parent.exists():
            out.parent.mkdir(parents=True, exist_ok=True)
        _write_atomic(out, payload)
        print(f"wrote {out}")
    else:
        sys.stdout.write(payload)
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tvreg",
        description="Bayesian regression with time-varying coefficients.",
    )
    parser.add_argument("--version", action="version", version=f"tvreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="sample the posterior and write a fit directory")
    fit.add_argument("--data", required=True, help="CSV with the response and predictors")
    fit.add_argument("--formula", required=True, help='e.g. "y ~ 0 + rw1(~ x1 + x2)"')
    fit.add_argument("--family", choices=["gaussian", "poisson"], default="gaussian")
    fit.add_argument("--exposure", default=None, metavar="COL",
                     help="positive offset column (poisson only)")
    fit.add_argument("--iter", type=int, default=2000)
    fit.add_argument("--warmup", type=int, default=None,
                     help="default: half of --iter")
    fit.add_argument("--chains", type=int, default=4)
    fit.add_argument("--seed", type=int, default=1)
    fit.add_argument("--target-accept", type=float, default=0.234, dest="target_accept")
    fit.add_argument("--steps-per-iter", type=int, default=8, dest="steps_per_iter",
                     help="kernel steps per recorded iteration (internal thinning)")
    fit.add_argument("--gamma", default=None, metavar="TERM=COL,...",
                     help="per-time walk-noise sd multipliers for rw1 terms")
    fit.add_argument("--out", required=True, help="output directory")
    fit.set_defaults(func=_cmd_fit)

    pred = sub.add_parser("predict", help="push a saved fit through new data")
    pred.add_argument("--fit", required=True, help="directory written by fit")
    pred.add_argument("--data", required=True, help="CSV of future predictor rows")
    pred.add_argument("--mode", choices=["mean", "response"], default="response")
    pred.add_argument("--seed", type=int, default=1)
    pred.add_argument("--out", required=True, help="output directory")
    pred.set_defaults(func=_cmd_predict)

    sim = sub.add_parser("simulate", help="write the reference synthetic dataset")
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--seed", type=int, default=1)
    sim.add_argument("--out", required=True, help="output CSV path")
    sim.set_defaults(func=_cmd_simulate)

    summ = sub.add_parser("summary", help="recompute summary.csv from draws.csv")
    summ.add_argument("--draws", required=True, help="draws.csv from a fit")
    summ.add_argument("--out", default=None, help="output CSV (default: stdout)")
    summ.set_defaults(func=_cmd_summary)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormulaError as exc:
        print(f"tvreg: formula error: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"tvreg: usage error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, DataError) as exc:
        print(f"tvreg: data error: {exc}", file=sys.stderr)
        return 3
    except (InitFailureError, NumericalBreakdownError, OverflowError) as exc:
        print(f"tvreg: numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
