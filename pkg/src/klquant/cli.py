"""``klquant`` command line.

Subcommands: ``eigs``, ``quantize``, ``reconstruct``, ``price`` and
``bench-variance``. Exit codes: 2 invalid input, 3 numerical failure,
4 missing file.
"""

import argparse
import contextlib
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .eigensolver import EigenConvergenceError
from .fbm import kl_for_kernel
from .io import load_quantizer, save_quantizer
from .kernels import Family, closed_form_kl, kernel_trace, make_kernel
from .pricing import (
    BARRIER_CONFIGS,
    DEFAULT_STRATA,
    MarketParams,
    price_up_in_call,
    price_vanilla_mc,
)
from .quantizer import (
    QuantizerConvergenceError,
    blind_decomposition,
    build_functional_quantizer,
    lloyd_multivariate,
)
from .stratification import ConditionalSampler, build_stratification, reconstruct_process

EXIT_INVALID = 2
EXIT_NUMERIC = 3
EXIT_MISSING = 4
OUTPUT_DIR_ENV = "KLQUANT_OUTPUT_DIR"
RULES = ("plain", "prop", "lip", "opt")


class UsageError(ValueError):
    pass


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


@contextlib.contextmanager
def _output(path, default_name):
    """Open ``path``; without one, use the output directory or stdout."""
    if path is None and os.environ.get(OUTPUT_DIR_ENV):
        path = os.path.join(os.environ[OUTPUT_DIR_ENV], default_name)
    if path is None or path == "-":
        yield sys.stdout
        return
    with open(path, "w", newline="") as fh:
        yield fh


def _write_csv(rows, header, path, default_name):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    with _output(path, default_name) as fh:
        fh.write(buf.getvalue())


def _kernel_from_args(a):
    return make_kernel(a.process, T=a.T, H=a.H, theta=a.theta, sigma=a.sigma, sigma0=a.sigma0)


def _add_process_args(p, resolutions="25,50,100"):
    p.add_argument("--process", choices=[f.value for f in Family if f is not Family.CUSTOM], default="bm")
    p.add_argument("--T", type=float, default=1.0, help="horizon")
    p.add_argument("--H", type=float, default=None, help="Hurst exponent (fbm)")
    p.add_argument("--theta", type=float, default=1.0, help="OU mean reversion")
    p.add_argument("--sigma", type=float, default=1.0, help="OU volatility")
    p.add_argument("--sigma0", type=float, default=None, help="stationary OU initial std (default stationary)")
    p.add_argument("--resolutions", type=_ints, default=_ints(resolutions))


# ---------------------------------------------------------------------------


def cmd_eigs(a):
    kernel = _kernel_from_args(a)
    kl = kl_for_kernel(kernel, a.modes, a.resolutions)
    raw = kl.raw_eigenvalues()
    closed = None
    with contextlib.suppress(ValueError):
        closed = closed_form_kl(kernel, a.modes).eigenvalues
    header = ["k"] + [f"lambda_{n}" for n in kl.resolutions] + ["lambda_rr"]
    if closed is not None:
        header += ["lambda_closed", "abs_err"]
    grid = np.linspace(0.0, kernel.T, a.grid) if a.grid else np.zeros(0)
    if a.grid:
        header += [f"t={_fmt(t)}" for t in grid]
        ef = kl.eigenfunctions(grid, a.modes)
    rows = []
    for k in range(a.modes):
        row = [k + 1, *raw[:, k], kl.eigenvalues[k]]
        if closed is not None:
            row += [closed[k], abs(kl.eigenvalues[k] - closed[k])]
        if a.grid:
            row += list(ef[k])
        rows.append(row)
    _write_csv(rows, header, a.out, "eigs.csv")
    return 0


def cmd_quantize(a):
    kernel = _kernel_from_args(a)
    if a.N < 1:
        raise UsageError("--N must be >= 1")
    d_max = max(1, int(math.floor(math.log2(max(a.N, 2)))))
    kl = kl_for_kernel(kernel, max(d_max, len(a.sizes or ())), a.resolutions)
    meta = {"N": a.N}
    if a.structure == "product":
        if a.sizes:
            if math.prod(a.sizes) > a.N:
                raise UsageError(f"--sizes product {math.prod(a.sizes)} exceeds --N {a.N}")
            sizes = tuple(a.sizes)
        else:
            dec = blind_decomposition(a.N, kl.eigenvalues, kernel_trace(kernel), max_dim=d_max)
            sizes = dec.sizes
            meta["criterion"] = dec.criterion
        structure = sizes
    else:
        dim = a.dim or len(blind_decomposition(a.N, kl.eigenvalues, kernel_trace(kernel), max_dim=d_max).sizes)
        mq = lloyd_multivariate(kl.eigenvalues[:dim], a.N, budget=a.budget, seed=a.seed)
        meta.update(distortion=mq.distortion, distortion_se=mq.distortion_se, iterations=mq.iterations, seed=a.seed)
        structure = mq
    fq = build_functional_quantizer(kl, structure, meta)
    out = a.out
    if out is None:
        out = os.path.join(os.environ.get(OUTPUT_DIR_ENV, "."), "quantizer.json")
    save_quantizer(fq, out)
    if a.dump_paths:
        grid = np.linspace(0.0, kernel.T, a.grid)
        paths = fq.paths(grid)
        rows = [[i, fq.probabilities[i], *paths[i]] for i in range(fq.N)]
        _write_csv(rows, ["i", "p"] + [f"t={_fmt(t)}" for t in grid], a.dump_paths, "paths.csv")
    return 0


def cmd_reconstruct(a):
    fq = load_quantizer(a.quantizer)
    strat = build_stratification(fq)
    sched = a.schedule or tuple(i * fq.kl.T / 5 for i in range(1, 6))
    sampler = ConditionalSampler(fq.kl, np.asarray(sched), fq.d)
    rec = reconstruct_process(strat, sampler, a.paths, seed=a.seed, threads=a.threads)
    n = len(sched)
    rows = [
        [i + 1, j + 1, rec.theoretical[i, j], rec.estimated[i, j], rec.ci_lo[i, j], rec.ci_hi[i, j]]
        for i in range(n)
        for j in range(n)
    ]
    _write_csv(rows, ["i", "j", "theoretical", "estimated", "ci_lo", "ci_hi"], a.out, "cov.csv")
    return 0


def _market(a):
    return MarketParams(S0=a.S, K=a.K, B=a.B, r=a.r, sigma=a.sigma, T=a.T, H=a.H, n=a.fixings)


def _strata_kw(a):
    kw = {"threads": a.threads}
    if a.quantizer:
        kw["quantizer"] = load_quantizer(a.quantizer)
    else:
        kw["strata"] = a.strata
    return kw


def _pricer(payoff):
    return price_vanilla_mc if payoff == "vanilla" else price_up_in_call


def cmd_price(a):
    p = _market(a)
    if a.payoff == "up-in-call" and p.B is None:
        raise UsageError("--B is required for up-in-call")
    est = _pricer(a.payoff)(p, a.paths, a.rule, a.seed, **_strata_kw(a))
    if a.format == "json":
        with _output(a.out, "price.json") as fh:
            fh.write(json.dumps(est.to_dict(), indent=1) + "\n")
    else:
        lo, hi = est.ci
        _write_csv(
            [[est.estimate, est.variance, est.normalized_variance, lo, hi, est.rule, est.M, est.seed]],
            ["price", "variance", "normalized_variance", "ci_lo", "ci_hi", "rule", "M", "seed"],
            a.out,
            "price.csv",
        )
    return 0


def cmd_bench_variance(a):
    if a.config:
        base = BARRIER_CONFIGS[a.config - 1]
        p = MarketParams(
            S0=base.S0, K=base.K, B=base.B, r=base.r, sigma=base.sigma, T=base.T, H=base.H, n=base.n
        )
    else:
        p = _market(a)
    kw = _strata_kw(a)
    rows = []
    for rule in RULES:
        est = _pricer(a.payoff)(p, a.paths, rule, a.seed, **kw)
        lo, hi = est.ci
        rows.append([rule, est.estimate, lo, hi, est.normalized_variance, est.normalized_variance_se])
    _write_csv(rows, ["rule", "price", "ci_lo", "ci_hi", "variance", "variance_se"], a.out, "bench_variance.csv")
    return 0


def _add_market_args(p):
    p.add_argument("--payoff", choices=("vanilla", "up-in-call"), default="up-in-call")
    p.add_argument("--S", type=float, default=100.0)
    p.add_argument("--K", type=float, default=100.0)
    p.add_argument("--B", type=float, default=None)
    p.add_argument("--r", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--H", type=float, default=0.3)
    p.add_argument("--fixings", type=int, default=11)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strata", type=_ints, default=DEFAULT_STRATA, help="product decomposition, e.g. 10,5,2")
    p.add_argument("--quantizer", default=None, help="quantizer JSON (overrides --strata)")


def build_parser():
    ap = argparse.ArgumentParser(prog="klquant", description="K-L decompositions, functional quantizers and stratified pricing.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for stratum simulation (1 = reproducible)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eigs", help="K-L eigenvalues by extrapolated Nystrom")
    _add_process_args(p)
    p.add_argument("--modes", type=int, default=5)
    p.add_argument("--grid", type=int, default=0, help="append eigenfunction samples on this many points")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eigs)

    p = sub.add_parser("quantize", help="build and save a functional quantizer")
    _add_process_args(p, "50,100,200")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--structure", choices=("product", "optimal"), default="product")
    p.add_argument("--sizes", type=_ints, default=None, help="explicit product decomposition")
    p.add_argument("--dim", type=int, default=None, help="dimension of the optimal quantizer")
    p.add_argument("--budget", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-paths", default=None, help="write codeword paths to this CSV")
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("reconstruct", help="rebuild the process by stratified sampling")
    p.add_argument("--quantizer", required=True)
    p.add_argument("--schedule", type=_floats, default=None)
    p.add_argument("--paths", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("price", help="price a call under fractional Black-Scholes")
    _add_market_args(p)
    p.add_argument("--rule", choices=RULES, default="opt")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("bench-variance", help="compare allocation rules (plain, prop, lip, opt)")
    _add_market_args(p)
    p.add_argument("--config", type=int, choices=(1, 2), default=None, help="preset barrier configuration")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench_variance)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("klquant: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"klquant: error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING
    except (np.linalg.LinAlgError, EigenConvergenceError, QuantizerConvergenceError, FloatingPointError) as exc:
        print(f"klquant: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError) as exc:
        print(f"klquant: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
