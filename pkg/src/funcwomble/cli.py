"""``womble`` command-line interface.

Subcommands::

    womble fit       fit a trace (co)variogram model to functional data
    womble womble    wombling measures and bootstrap pseudo-p values per curve
    womble bayes     Bayesian wombling scores from a truncated basis expansion
    womble simulate  the mean-like / covariance-like boundary experiment

Exit codes: 0 success, 2 input error, 3 fit failure, 4 chain failure, 1 other.
The log level is read from the ``WOMBLE_LOG`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .bayes import BayesConfig, ChainConfig, functional_bayes_womble
from .bootstrap import BootstrapConfig, pseudo_p_many
from .covmodel import (
    FitOptions,
    empirical_covariogram_cloud,
    empirical_variogram_cloud,
    fit,
    trace_cov,
    variogram_of_distance,
)
from .errors import (
    ChainStuck,
    DegenerateCloud,
    FitFailed,
    IllConditioned,
    InputError,
    InsufficientData,
    WombleError,
)
from .geometry import QuadratureRule
from .simlab import (
    DEFAULT_F_VALUES,
    EXPERIMENT_HEADER,
    ExperimentSettings,
    MethodSpec,
    SimConfig,
    boundary_pair,
    generate,
    replicate_seeds,
    run_experiment,
)
from .womble import WombleBLUP

log = logging.getLogger("funcwomble")

REPORT_HEADER = ["boundary", "measure", "p_value", "p_ci_halfwidth"]
BAYES_HEADER = ["curve", "score", "post_mean", "post_sd"]
CHAIN_HEADER = ["iteration", "component", "nugget", "sill", "range", "acceptance"]

EXIT_OK, EXIT_OTHER, EXIT_INPUT, EXIT_FIT, EXIT_CHAIN = 0, 1, 2, 3, 4


# ---------------------------------------------------------------------------
# helpers


def _fmt(x: float) -> str:
    return repr(float(x))


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(args) -> int:
    return max(1, args.threads or os.cpu_count() or 1)


def _load(args, need_mean: bool = False):
    if need_mean and args.mean is None:
        raise InputError("a covariogram cloud needs the known mean; pass --mean FILE or --mean identity")
    if args.mean is not None and args.mean != "identity" and not Path(args.mean).is_file():
        raise InputError(f"{args.mean}: mean file not found")
    data = io.load_dataset(args.locations, args.functions, args.mean)
    if data.n < 3:
        raise InsufficientData(f"need at least 3 locations, got {data.n}")
    return data


def _cloud(args, data):
    if args.cloud == "covariogram":
        if not data.mean_known:
            raise InputError("a covariogram cloud needs the known mean; pass --mean FILE or --mean identity")
        return empirical_covariogram_cloud(data.values, data.locations, data.grid, data.known_mean)
    return empirical_variogram_cloud(data.values, data.locations, data.grid)


def _fit(args, data):
    cloud = _cloud(args, data)
    n_bins = None if args.fit_mode == "raw" else args.bins
    return fit(cloud, args.components, FitOptions(n_bins=n_bins, seed=args.seed))


def _svg_setup():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "funcwomble"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save_svg(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def _plot_fit(result, path) -> None:
    plt = _svg_setup()
    b, model = result.binned, result.model
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(b.distances, b.values, s=12 + 60 * b.counts / max(b.counts.max(), 1), color="0.3", label="empirical")
    h = np.linspace(0.0, max(float(b.distances.max()), 1e-12), 200)
    if b.kind == "variogram":
        curve = variogram_of_distance(model, h)
        ax.set_ylabel("trace variogram")
    else:
        curve = trace_cov(model, np.column_stack([h, np.zeros_like(h)]))
        ax.set_ylabel("trace covariogram")
    ax.plot(h, curve, color="C0", label="fitted")
    ax.set_xlabel("distance")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def _plot_experiment(rows, path) -> None:
    plt = _svg_setup()
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, method in enumerate(sorted({r.method for r in rows})):
        sel = [r for r in rows if r.method == method]
        f = np.array([r.f for r in sel])
        p = np.array([r.prob_true_chosen for r in sel])
        hw = np.array([r.ci_halfwidth for r in sel])
        ax.errorbar(f, p, yerr=hw, marker="o", capsize=3, color=f"C{k}", label=method)
    ax.axhline(0.5, color="0.6", lw=0.8, ls="--")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("boundary factor f")
    ax.set_ylabel("P(true boundary chosen)")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def _chain_config(args, seed: int) -> ChainConfig:
    return ChainConfig(n_iter=args.iterations, burn_in=args.burn_in, thin=args.thin, seed=seed)


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    data = _load(args, need_mean=args.cloud == "covariogram")
    out = _outdir(args)
    result = _fit(args, data)
    io.write_model(out / "model.json", result.model)
    io.write_cloud(out / "cloud.csv", result.binned)
    io.write_json(
        out / "fit.json",
        {
            "cloud": args.cloud,
            "fit_mode": args.fit_mode,
            "components": args.components,
            "objective": result.objective,
            "iterations": result.iterations,
            "starts": result.diagnostics,
        },
    )
    _plot_fit(result, out / "fit.svg")
    print(f"fitted {result.model} -> {out / 'model.json'}")
    return EXIT_OK


def _report_rows(results, outcomes):
    rows = []
    for k, res in enumerate(results):
        o = outcomes[k] if outcomes else None
        rows.append((res.curve, res.squared_norm, None if o is None else o.pseudo_p, None if o is None else o.wald_halfwidth))
    # smallest p first, larger measure first among equal p
    rows.sort(key=lambda r: (r[2] if r[2] is not None else 0.0, -r[1], r[0]))
    return rows


def cmd_womble(args) -> int:
    if args.B and args.B < 19:
        raise InputError("--B must be 0 (no bootstrap) or at least 19")
    data = _load(args, need_mean=args.model is None and args.cloud == "covariogram")
    curves = io.read_curves(args.curves)
    out = _outdir(args)
    if args.model:
        model = io.read_model(args.model)
    else:
        model = _fit(args, data).model
        io.write_model(out / "model.json", model)
    rule = QuadratureRule(args.quad_nodes)
    results = WombleBLUP(data, model, rule).predict(curves)

    outcomes = None
    if args.B:
        config = BootstrapConfig(B=args.B, seed=args.seed)

        # each curve's result depends only on the seed, so curves can run in any order
        def one(curve):
            return pseudo_p_many(data, model, [curve], rule, config)[0]

        with ThreadPoolExecutor(max_workers=_threads(args)) as pool:
            outcomes = list(pool.map(one, curves))

    rows = _report_rows(results, outcomes)
    io.write_csv(
        out / "report.csv",
        REPORT_HEADER,
        (
            [name, f"{m:.4e}", "" if p is None else f"{p:.6g}", "" if hw is None else f"{hw:.7f}"]
            for name, m, p, hw in rows
        ),
    )
    by_name = {o.curve: o for o in outcomes or []}
    doc = []
    for res in results:
        entry = res.to_dict(weights=False, measure=True)
        if res.curve in by_name:
            o = by_name[res.curve].to_dict()
            entry.update({k: o[k] for k in ("p", "p_ci_halfwidth", "B", "seed")})
        doc.append(entry)
    io.write_json(out / "report.json", {"model": model.to_dict(), "curves": doc})
    for name, m, p, hw in rows:
        print(f"{name}\t{m:.4e}\t{'' if p is None else f'{p:.6g}'}")
    return EXIT_OK


def cmd_bayes(args) -> int:
    data = _load(args)
    curves = io.read_curves(args.curves)
    out = _outdir(args)
    config = BayesConfig(
        p=args.p,
        basis=args.basis,
        chain=_chain_config(args, args.seed),
        nodes_per_segment=args.quad_nodes,
        seed=args.seed,
    )
    report = functional_bayes_womble(data, args.p, curves, config)
    io.write_json(
        out / "bayes_report.json",
        {
            "p": args.p,
            "basis": args.basis,
            "seed": args.seed,
            "curves": [s.to_dict() for s in report.summaries],
            "acceptance": report.chain.acceptance.tolist(),
        },
    )
    io.write_csv(
        out / "bayes_report.csv",
        BAYES_HEADER,
        ([s.curve, _fmt(s.score), _fmt(s.post_mean), _fmt(s.post_sd)] for s in report.summaries),
    )
    io.write_csv(
        out / "chain.csv",
        CHAIN_HEADER,
        ([it, j, _fmt(a), _fmt(b), _fmt(c), _fmt(acc)] for it, j, a, b, c, acc in report.chain.diagnostics_rows()),
    )
    for s in report.summaries:
        print(f"{s.curve}\tscore {s.score:.4g}\tmean {s.post_mean:.4g}\tsd {s.post_sd:.4g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = _outdir(args)
    f_values = args.f if args.f else list(DEFAULT_F_VALUES)
    methods = [MethodSpec.parse(m) for m in (args.method or ["nonparametric:1", "bayes:3"])]
    settings = ExperimentSettings(
        boundary_kind=args.boundary,
        n=args.n,
        B=args.B,
        nodes_per_segment=args.quad_nodes,
        chain=_chain_config(args, 0),
    )
    if args.emit_data:
        seeds = replicate_seeds(args.seed, 0)
        data, _ = generate(SimConfig(n=args.n, boundary_kind=args.boundary, f=f_values[-1], seed=seeds["data"]))
        io.write_dataset(out / "data", data, boundary_pair())
    if args.replicates > 0:
        rows = run_experiment(f_values, methods, args.replicates, settings, args.seed, _threads(args))
        io.write_csv(out / "experiment.csv", EXPERIMENT_HEADER, (r.as_csv_row() for r in rows))
        if args.plot:
            _plot_experiment(rows, out / "experiment.svg")
        for r in rows:
            print(f"f={r.f:g}\t{r.method}\t{r.prob_true_chosen:.3f} +/- {r.ci_halfwidth:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _data_flags(p: argparse.ArgumentParser, curves: bool) -> None:
    p.add_argument("--locations", required=True, help="CSV with columns id,x,y")
    p.add_argument("--functions", required=True, help="CSV with columns id,v_0,...; optional __grid__ row")
    if curves:
        p.add_argument("--curves", required=True, help="curve JSON file")
    p.add_argument("--mean", help="known mean CSV, or 'identity' for mu(t) = t")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--components", type=int, default=1, help="number of Gaussian terms (default 1)")
    p.add_argument("--bins", type=int, default=15, help="distance bins for the binned fit (default 15)")
    p.add_argument("--fit-mode", choices=("binned", "raw"), default="binned")
    p.add_argument("--cloud", choices=("variogram", "covariogram"), default="variogram")


def _chain_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--burn-in", type=int, default=2000)
    p.add_argument("--thin", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="womble", description="Functional wombling for spatial functional data.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="worker count (default: logical cores)")
    common.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("fit", parents=[common], help="fit a trace (co)variogram model")
    _data_flags(p, curves=False)
    _model_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("womble", parents=[common], help="wombling measures with bootstrap pseudo-p values")
    _data_flags(p, curves=True)
    _model_flags(p)
    p.add_argument("--model", help="model JSON; fitted from the data when omitted")
    p.add_argument("--quad-nodes", type=int, default=16)
    p.add_argument("--B", type=int, default=1000, help="bootstrap replicates; 0 skips the bootstrap")
    p.set_defaults(func=cmd_womble)

    p = sub.add_parser("bayes", parents=[common], help="Bayesian wombling scores")
    _data_flags(p, curves=True)
    p.add_argument("--p", type=int, default=3, help="number of basis functions")
    p.add_argument("--basis", choices=("fourier", "legendre"), default="fourier")
    p.add_argument("--quad-nodes", type=int, default=16)
    _chain_flags(p)
    p.set_defaults(func=cmd_bayes)

    p = sub.add_parser("simulate", parents=[common], help="boundary-detection simulation experiment")
    p.add_argument("--f", type=float, nargs="+", help="boundary factors (default 0 0.5 1 2 5)")
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument(
        "--method", action="append", help="nonparametric[:K] or bayes[:p]; repeatable (default both)"
    )
    p.add_argument("--boundary", choices=("mean_like", "covariance_like"), default="mean_like")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--quad-nodes", type=int, default=16)
    p.add_argument("--emit-data", action="store_true", help="also write one replicate's dataset under OUT/data")
    p.add_argument("--plot", action="store_true", help="write experiment.svg")
    _chain_flags(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("WOMBLE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FitFailed, DegenerateCloud, IllConditioned) as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        for d in getattr(exc, "diagnostics", []):
            print(f"  {d}", file=sys.stderr)
        return EXIT_FIT
    except ChainStuck as exc:
        print(f"chain failed: {exc}", file=sys.stderr)
        return EXIT_CHAIN
    except ValueError as exc:
        # invalid option values (method names, bootstrap size, chain lengths)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except WombleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
