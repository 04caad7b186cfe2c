"""Command-line surface: fit, sample, density, compare, heatmap.

Every command validates its inputs before producing side effects; output
files are written to a temporary name and renamed, so failures never
leave partial files behind. Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .dataset import DataError, load_csv, save_csv, split, to_unit
from .gcm import fit_gcm
from .gmcm import FitDivergedError, FitOptions, fit_gmcm
from .gmm import fit_em
from .marginals import DEFAULT_CENTER_CAP, MarginalModel
from .metrics import SinkhornConfig, compare_models
from .modelio import (
    FittedGcm,
    FittedGmcm,
    FittedGmm,
    ModelFileError,
    data_fingerprint,
    load_model,
    save_model,
)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _write_rows_atomic(path: str, header: list[str], rows) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(row) + "\n")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def cmd_fit(args) -> int:
    ds = load_csv(args.input)
    meta = {
        "seed": args.seed,
        "data_fingerprint": data_fingerprint(ds),
        "n": ds.n,
    }

    def log(msg: str) -> None:
        print(msg, file=sys.stderr)

    if args.model == "gmm":
        params, history = fit_em(ds, args.components, args.seed, return_history=True)
        for i, ll in enumerate(history):
            log(f"iteration {i}: mean log-likelihood {ll:.6f}")
        model = FittedGmm(params, ds.columns)
        meta["components"] = args.components
    else:
        marginals = MarginalModel.fit(ds, center_cap=args.kde_cap, seed=args.seed)
        unit = to_unit(ds, marginals)
        meta["kde_cap"] = args.kde_cap
        if args.model == "gcm":
            model = FittedGcm(fit_gcm(unit), marginals)
        else:
            opts = FitOptions(
                K=args.components,
                learning_rate=args.learning_rate,
                batch_size=args.batch_size,
                max_epochs=args.epochs,
                prior_sigma=args.prior_sigma,
                seed=args.seed,
            )
            base = fit_gmcm(
                unit,
                opts,
                progress=lambda e, obj: log(f"epoch {e}: objective {obj:.6f}"),
            )
            model = FittedGmcm(base, marginals)
            meta["options"] = {
                "K": opts.K,
                "learning_rate": opts.learning_rate,
                "batch_size": opts.batch_size,
                "max_epochs": opts.max_epochs,
                "prior_sigma": opts.prior_sigma,
            }
    save_model(model, args.output, meta)
    log(f"wrote {args.model} model to {args.output}")
    return 0


def cmd_sample(args) -> int:
    model, _ = load_model(args.model)
    ds = model.sample(args.n, args.seed)
    save_csv(ds, args.output)
    return 0


def cmd_density(args) -> int:
    model, _ = load_model(args.model)
    ds = load_csv(args.input)
    if ds.columns != model.columns:
        raise DataError(
            f"input columns {ds.columns} do not match model columns {model.columns}"
        )
    log_density = model.logpdf(ds.values)
    header = ds.columns + ["log_density"]
    rows = (
        [repr(float(v)) for v in ds.values[i]] + [repr(float(log_density[i]))]
        for i in range(ds.n)
    )
    _write_rows_atomic(args.output, header, rows)
    return 0


def cmd_compare(args) -> int:
    ds = load_csv(args.input)
    train, test = split(ds, args.holdout, args.seed)
    cfg = SinkhornConfig(
        subset_size=args.sinkhorn_size,
        n_subsets=args.sinkhorn_subsets,
        tol=args.sinkhorn_tol,
        seed=args.seed,
    )
    specs = args.models.split(",")
    fit_options = FitOptions(
        K=args.components,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        prior_sigma=args.prior_sigma,
        seed=args.seed,
    )
    report = compare_models(
        train,
        test,
        specs,
        cfg,
        seed=args.seed,
        components=args.components,
        fit_options=fit_options,
        kde_cap=args.kde_cap,
    )
    text = report.to_json()
    tmp = f"{args.output}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, args.output)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    print(report.render_table(), end="")
    failures = [m for m in report.models if m.error is not None]
    for m in failures:
        print(f"model {m.name} failed: {m.error}", file=sys.stderr)
    return 0 if len(failures) < len(report.models) else 1


def cmd_heatmap(args) -> int:
    model, _ = load_model(args.model)
    try:
        j1, j2 = (int(p) for p in args.dims.split(","))
    except ValueError:
        raise DataError(f"--dims expects two comma-separated indices, got {args.dims!r}")
    if j1 == j2:
        raise DataError("heatmap dimensions must differ")
    if not (0 <= j1 < model.d and 0 <= j2 < model.d):
        raise DataError(f"dimensions out of range for d={model.d}")
    sub = model.restrict([j1, j2])
    bounds = []
    if isinstance(sub, FittedGmm):
        p = sub.params
        for j in range(2):
            sd = np.sqrt(p.covariances[:, j, j])
            bounds.append(
                (float(np.min(p.means[:, j] - 5.0 * sd)),
                 float(np.max(p.means[:, j] + 5.0 * sd)))
            )
    else:
        for marg in sub.marginals.marginals:
            bounds.append(
                (float(marg.centers.min() - 3.0 * marg.bandwidth),
                 float(marg.centers.max() + 3.0 * marg.bandwidth))
            )
    xs = np.linspace(bounds[0][0], bounds[0][1], args.grid)
    ys = np.linspace(bounds[1][0], bounds[1][1], args.grid)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    density = np.exp(sub.logpdf(pts))
    rows = (
        [repr(float(pts[i, 0])), repr(float(pts[i, 1])), repr(float(density[i]))]
        for i in range(pts.shape[0])
    )
    _write_rows_atomic(args.output, ["x1", "x2", "density"], rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scendens",
        description="Fit and compare joint density models of scenario parameters.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_fit_options(p: argparse.ArgumentParser) -> None:
        p.add_argument("--components", "-K", type=_positive_int, default=4)
        p.add_argument("--learning-rate", type=float, default=1e-3)
        p.add_argument("--prior-sigma", type=float, default=0.1)
        p.add_argument("--epochs", type=int, default=200)
        p.add_argument("--batch-size", type=_positive_int, default=1024)
        p.add_argument("--kde-cap", type=_positive_int, default=DEFAULT_CENTER_CAP)

    p_fit = sub.add_parser("fit", help="fit a model and write it as JSON")
    p_fit.add_argument("--input", required=True)
    p_fit.add_argument("--model", required=True, choices=["gmm", "gcm", "gmcm"])
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--output", required=True)
    add_fit_options(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_sample = sub.add_parser("sample", help="draw samples from a fitted model")
    p_sample.add_argument("--model", required=True)
    p_sample.add_argument("-n", type=_positive_int, required=True)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--output", required=True)
    p_sample.set_defaults(func=cmd_sample)

    p_density = sub.add_parser(
        "density", help="append a log_density column to a CSV"
    )
    p_density.add_argument("--model", required=True)
    p_density.add_argument("--input", required=True)
    p_density.add_argument("--output", required=True)
    p_density.set_defaults(func=cmd_density)

    p_compare = sub.add_parser(
        "compare", help="fit requested models and report metrics"
    )
    p_compare.add_argument("--input", required=True)
    p_compare.add_argument("--models", default="gmm,gcm,gmcm")
    p_compare.add_argument("--holdout", type=float, default=0.2)
    p_compare.add_argument("--sinkhorn-subsets", type=_positive_int, default=10)
    p_compare.add_argument("--sinkhorn-size", type=_positive_int, default=5000)
    # Ranking models needs ~1e-4 relative accuracy; the strict library
    # default (1e-9) can exceed max_iter on unlucky subsets.
    p_compare.add_argument("--sinkhorn-tol", type=float, default=1e-6)
    p_compare.add_argument("--seed", type=int, default=0)
    p_compare.add_argument("--output", required=True)
    add_fit_options(p_compare)
    p_compare.set_defaults(func=cmd_compare)

    p_heatmap = sub.add_parser(
        "heatmap", help="export a bivariate marginal density grid"
    )
    p_heatmap.add_argument("--model", required=True)
    p_heatmap.add_argument("--dims", required=True)
    p_heatmap.add_argument("--grid", type=_positive_int, default=101)
    p_heatmap.add_argument("--output", required=True)
    p_heatmap.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ModelFileError, FitDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
