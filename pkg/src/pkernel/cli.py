"""Command-line front end.

Usage:
    pkernel simulate --truth bimodal --n 200 --sigma 0.01 --seed 7 --out quotes.csv
    pkernel fit --method cls --in quotes.csv --out cls.json
    pkernel fit --method rme --in quotes.csv --prior uniform --auto-lambda --out rme.json
    pkernel study --config study.json --seed 0 --out results/study
    pkernel demo --alpha 1 --beta 10 --beta 100 --beta 1000
    pkernel check

Exit codes: 0 success, 1 failed check, 2 usage or parse error,
3 solver non-convergence, 4 exact maximum entropy infeasible.
"""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .analysis import StudyConfig, illposed_demo, run_check_suite, run_consistency_study
from .core import Grid
from .errors import ConvergenceError, InfeasibleError, InputError, PkernelError
from .estimators import FitOptions, fit_cls, fit_me_exact, fit_rme, lambda_schedule
from .io import (
    estimate_to_dict,
    kernel_from_dict,
    kernel_to_dict,
    read_json,
    read_quotes_csv,
    validate,
    write_json,
    write_quotes_csv,
    write_study_csv,
    write_timing_csv,
)
from .synth import KernelSpec, NoiseSpec, StrikeDensitySpec, generate_quotes, make_kernel, sample_strikes

__all__ = ["main", "build_parser"]

log = logging.getLogger("pkernel")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONVERGENCE, EXIT_INFEASIBLE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.name.rsplit(".", 1)[0] + suffix) if "." in path.name else path.with_name(path.name + suffix)


def _write_manifest(path: Path, subcommand: str, config: dict, seed, started: str, inputs, outputs):
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "master_seed": seed,
        "version": __version__,
        "started": started,
        "finished": _now(),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
    }
    validate(manifest, "manifest")
    write_json(path, manifest)


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _non_negative_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _kernel_arg(value: str, grid: Grid):
    """A shape name with default parameters, or a kernel/spec JSON file."""
    shapes = {"uniform": KernelSpec("uniform", total_mass=1.0),
              "bimodal": KernelSpec(),
              "triangular": KernelSpec("triangular", total_mass=1.0, modes=(0.5,))}
    if value in shapes:
        spec = shapes[value]
        return make_kernel(spec, grid), spec
    d = read_json(value)
    if "shape" in d:
        spec = KernelSpec.from_dict(d)
        return make_kernel(spec, grid), spec
    P = kernel_from_dict(d)
    if P.grid != grid:
        raise UsageError(f"kernel in {value} lives on {P.grid}, expected {grid}")
    return P, None


def cmd_simulate(args) -> int:
    started = _now()
    grid = Grid(args.B, args.M)
    truth, spec = _kernel_arg(args.truth, grid)
    strike_spec = StrikeDensitySpec(args.strikes, args.k, args.K_bar if args.K_bar is not None else grid.B)
    strikes = sample_strikes(args.n, strike_spec, args.seed, args.design)
    noise = NoiseSpec(args.noise, args.sigma, args.seed)
    quotes = generate_quotes(truth, strikes, noise, K_bar=strike_spec.K_bar)
    out = Path(args.out)
    truth_path = _sidecar(out, ".truth.json")
    write_quotes_csv(out, quotes, with_sigma=args.with_sigma)
    write_json(truth_path, kernel_to_dict(truth, spec))
    config = {"truth": args.truth, "n": args.n, "sigma": args.sigma, "noise": args.noise,
              "grid": {"B": grid.B, "M": grid.M}, "strike_spec": strike_spec.to_dict(), "design": args.design}
    _write_manifest(_sidecar(out, ".manifest.json"), "simulate", config, args.seed, started,
                    [], [out, truth_path])
    print(f"wrote {len(quotes)} quotes to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    started = _now()
    grid = Grid(args.B, args.M)
    quotes = read_quotes_csv(args.input)
    opts = FitOptions(max_iterations=args.max_iterations, kkt_tol=args.kkt_tol,
                      objective_rel_tol=args.objective_rel_tol, entropy_form=args.entropy_form)
    inputs = [args.input]
    prior = None
    if args.method in ("rme", "me"):
        if args.prior is None:
            raise UsageError(f"--method {args.method} requires --prior")
        prior, _ = _kernel_arg(args.prior, grid)
        if Path(args.prior).exists():
            inputs.append(args.prior)
    lam = 0.0
    if args.method == "rme":
        if args.auto_lambda:
            lam = lambda_schedule(len(quotes), args.lambda0, args.gamma)
        elif args.lam is None:
            raise UsageError("--method rme requires --lambda or --auto-lambda")
        else:
            lam = args.lam
    if args.method == "cls":
        est = fit_cls(quotes, grid, opts)
    elif args.method == "rme":
        est = fit_rme(quotes, prior, lam, grid, opts)
    else:
        est = fit_me_exact(quotes, prior, grid, opts)
    truth = None
    if args.truth:
        truth, _ = _kernel_arg(args.truth, grid)
        inputs.append(args.truth)
    for w in est.warnings:
        print(f"warning: {w}", file=sys.stderr)
    out = Path(args.out)
    doc = estimate_to_dict(est, quotes, args.entropy_form, truth)
    validate(doc, "estimate")
    write_json(out, doc)
    config = {"method": args.method, "lambda": lam, "prior": args.prior,
              "grid": {"B": grid.B, "M": grid.M}, "options": vars(opts)}
    _write_manifest(_sidecar(out, ".manifest.json"), "fit", config, None, started, inputs, [out])
    msg = f"{args.method}: objective {est.objective:.6g}, mse {est.mse_term:.6g}, {est.iterations} iterations"
    if truth is not None:
        msg += f", sup error {doc['errors']['sup_error']:.6g}, L2 error {doc['errors']['l2_error']:.6g}"
    print(msg)
    return EXIT_OK


def cmd_study(args) -> int:
    started = _now()
    raw = read_json(args.config)
    validate(raw, "study_config")
    if "master_seed" in raw and raw["master_seed"] != args.seed:
        raise UsageError(f"config master_seed {raw['master_seed']} conflicts with --seed {args.seed}")
    raw = dict(raw, master_seed=args.seed)
    config = StudyConfig.from_dict(raw)
    report = run_consistency_study(config, progress=lambda m: print(m, file=sys.stderr))
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_name(prefix.name + ".csv")
    json_path = prefix.with_name(prefix.name + ".json")
    timing_path = prefix.with_name(prefix.name + ".timing.csv")
    write_study_csv(csv_path, report)
    summary = report.summary()
    validate(summary, "study_summary")
    write_json(json_path, summary)
    write_timing_csv(timing_path, report)
    _write_manifest(prefix.with_name(prefix.name + ".manifest.json"), "study", config.to_dict(), args.seed,
                    started, [args.config], [csv_path, json_path, timing_path])
    print("method\tN\tmedian_sup_error\tmedian_l2_error")
    for row in report.medians():
        print(f"{row['method']}\t{row['N']}\t{row['median_sup_error']:.6g}\t{row['median_l2_error']:.6g}")
    return EXIT_OK


def cmd_demo(args) -> int:
    rows = []
    print("alpha\tbeta\tinput_sup\toutput_sup\tamplification\tamplification_over_beta")
    for beta in args.beta or [10.0, 100.0, 1000.0]:
        res = illposed_demo(args.alpha, beta, args.K_bar, Grid(args.K_bar, args.M))
        rows.append(res)
        ratio = res.amplification / beta
        print(f"{res.alpha:g}\t{beta:g}\t{res.input_sup:.6g}\t{res.output_sup:.6g}\t"
              f"{res.amplification:.6g}\t{ratio:.6g}")
    return EXIT_OK


def cmd_check(args) -> int:
    results = run_check_suite(args.seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}\t{r.name}\ttrials={r.trials}\tviolations={r.violations}\t{r.detail}")
    if args.out:
        write_json(args.out, [vars(r) for r in results])
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pkernel", description="Estimate cumulative pricing kernels from put quotes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def grid_args(sp):
        sp.add_argument("--B", type=float, default=1.0, help="upper factor bound (default 1)")
        sp.add_argument("--M", type=_positive_int, default=400, help="grid cells (default 400)")

    s = sub.add_parser("simulate", help="simulate noisy put quotes from a known kernel")
    s.add_argument("--truth", default="bimodal", help="uniform | triangular | bimodal | kernel JSON path")
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--sigma", type=_non_negative_float, default=0.01)
    s.add_argument("--noise", choices=("gaussian", "uniform"), default="gaussian")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--strikes", choices=("uniform", "linear-tilt"), default="uniform")
    s.add_argument("--design", choices=("random", "quantile"), default="random",
                   help="i.i.d. strikes or strikes at the density quantiles")
    s.add_argument("--k", type=float, default=None, help="strike density lower bound")
    s.add_argument("--K-bar", dest="K_bar", type=float, default=None)
    s.add_argument("--with-sigma", action="store_true", help="add a sigma column to the CSV")
    s.add_argument("--out", required=True)
    grid_args(s)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a kernel to a quotes CSV")
    f.add_argument("--method", choices=("cls", "rme", "me"), required=True)
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--prior", help="uniform | triangular | bimodal | kernel JSON path")
    lam = f.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", type=_non_negative_float)
    lam.add_argument("--auto-lambda", action="store_true", help="use lambda0 * N^-gamma")
    f.add_argument("--lambda0", type=float, default=0.1)
    f.add_argument("--gamma", type=float, default=0.5)
    f.add_argument("--entropy-form", choices=("generalized", "paper"), default="generalized")
    f.add_argument("--truth", help="kernel to score the fit against")
    f.add_argument("--max-iterations", type=_positive_int, default=100_000)
    f.add_argument("--kkt-tol", type=float, default=1e-8)
    f.add_argument("--objective-rel-tol", type=float, default=1e-10)
    grid_args(f)
    f.set_defaults(func=cmd_fit)

    st = sub.add_parser("study", help="run the Monte Carlo consistency study")
    st.add_argument("--config", required=True, help="StudyConfig JSON")
    st.add_argument("--seed", type=int, required=True)
    st.add_argument("--out", required=True, help="output prefix")
    st.set_defaults(func=cmd_study)

    d = sub.add_parser("demo", help="instability of the unrestricted inverse")
    d.add_argument("--alpha", type=_non_negative_float, default=1.0)
    d.add_argument("--beta", type=float, action="append")
    d.add_argument("--K-bar", dest="K_bar", type=float, default=1.0)
    d.add_argument("--M", type=_positive_int, default=10_000)
    d.set_defaults(func=cmd_demo)

    c = sub.add_parser("check", help="run the randomized lemma suites")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", help="write suite results as JSON")
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UsageError, InputError, PkernelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
