"""Command-line front end.

Exit codes: 0 success; 1 bad input file or fit failure; 2 data consistent
with zero (``check-zero``, and ``fit`` without ``--allow-zero``); 3 fit not
accepted (best-effort spline still written); 64 command-line usage error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import errors as er
from . import testbed as tb
from .accum import GridMismatchError, HistogramFormatError, merge, read_hist, write_hist
from .hierarchy import build
from .splinefit import FitConfig, FitError, SplineFormatError, adaptive_fit, read_spline, write_spline
from .transforms import Transform, parse, restore, restore_factor
from .zerocheck import check_zero

EXIT_ZERO = 2
EXIT_UNACCEPTED = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_transform(p):
    p.add_argument("--transform", choices=("none", "arctan", "exp"), default=None)
    p.add_argument("--weight-power", type=float, default=None)
    p.add_argument("--measure", choices=("sample", "restore"), default="sample")


def _add_fit(p):
    d = FitConfig()
    p.add_argument("--order", type=int, default=d.order)
    p.add_argument("--t-min", type=float, default=d.t_min)
    p.add_argument("--t-max", type=float, default=d.t_max)
    p.add_argument("--t-step", type=float, default=d.t_step)
    p.add_argument("--min-count", type=int, default=d.min_count)
    p.add_argument("--no-jump-constraint", action="store_true")
    p.add_argument("--sv-cutoff", type=float, default=d.sv_cutoff)


def _add_band(p):
    p.add_argument("--errors", choices=("cov", "bootstrap", "evolution"), default="cov")
    p.add_argument("--parts", nargs="+", default=[], help="partial histograms for bootstrap")
    p.add_argument("--m-tilde", type=int, default=None)
    p.add_argument("--snapshots", nargs="+", default=[], help="spline files after k*delta samples, k = 1, 2, ...")
    p.add_argument("--delta", type=int, default=1)
    p.add_argument("--k0", type=int, default=1)
    p.add_argument("--grid", type=int, default=er.DEFAULT_GRID)
    p.add_argument("--x-lo", type=float, default=None)
    p.add_argument("--x-hi", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--min-count", type=int, default=FitConfig().min_count)


def build_parser():
    ap = _Parser(prog="bhm", description="Bin hierarchy method: smooth functions from sampled integrals.")
    sub = ap.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("sample", help="sample a built-in distribution into a histogram")
    p.add_argument("--dist", required=True, choices=tb.BUILTIN)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--parts", type=int, default=1, help="also write this many partial histograms")
    p.add_argument("--out", required=True)
    _add_transform(p)

    p = sub.add_parser("merge", help="pool histograms on one grid")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit a spline to a histogram")
    p.add_argument("hist")
    p.add_argument("--out", required=True)
    p.add_argument("--allow-zero", action="store_true")
    p.add_argument("--zero-method", choices=("exact", "normal"), default="exact")
    _add_fit(p)

    p = sub.add_parser("eval", help="tabulate a spline with an error band")
    p.add_argument("spline")
    p.add_argument("--out", default="-")
    _add_band(p)
    _add_transform(p)

    p = sub.add_parser("check-zero", help="test a histogram against the zero function")
    p.add_argument("hist")
    p.add_argument("--method", choices=("exact", "normal"), default="exact")
    p.add_argument("--min-count", type=int, default=FitConfig().min_count)

    p = sub.add_parser("compare", help="tabulate fit minus a built-in truth")
    p.add_argument("spline")
    p.add_argument("--dist", required=True, choices=tb.BUILTIN)
    p.add_argument("--out", default="-")
    _add_band(p)
    _add_transform(p)

    p = sub.add_parser("errors", help="write error bands for a spline")
    p.add_argument("spline")
    p.add_argument("--methods", default="cov", help="comma separated subset of cov,bootstrap,evolution")
    p.add_argument("--out", default="-")
    _add_band(p)
    _add_transform(p)
    return ap


def _config(a) -> FitConfig:
    return FitConfig(order=a.order, t_min=a.t_min, t_max=a.t_max, t_step=a.t_step, min_count=a.min_count,
                     jump_constraint=not a.no_jump_constraint, sv_cutoff=a.sv_cutoff)


def _transform(a, default: Transform | None = None) -> Transform:
    if a.transform is None and a.weight_power is None:
        return default or Transform()
    base = default or Transform()
    kind = base.kind if a.transform is None else a.transform
    p = base.weight_power if a.weight_power is None else a.weight_power
    return parse(kind, p, a.measure)


def _write_tsv(path, header, columns):
    lines = ["# " + "\t".join(header)]
    rows = zip(*columns)
    lines += ["\t".join(c if isinstance(c, str) else "%.17g" % c for c in r) for r in rows]
    text = "\n".join(lines) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _grid(a, model, t: Transform):
    """Evaluation points in original coordinates and their images in spline coordinates."""
    lo, hi = model.domain
    if t.maps_domain:
        x_lo = float(t.x(np.array(lo))) if a.x_lo is None else a.x_lo
        if a.x_hi is None:
            raise ValueError("--x-hi is required for semi-infinite transforms")
        x = np.linspace(x_lo, a.x_hi, a.grid)
    else:
        x = np.linspace(lo if a.x_lo is None else a.x_lo, hi if a.x_hi is None else a.x_hi, a.grid)
    if t.weight_power > 0:
        x = x[x > 0]
    return x, t.y(x)


def _band(a, method, model, t, x, y):
    """Sigma on the grid in original coordinates."""
    if method == "cov":
        s = er.covariance_error(model, y)
    elif method == "bootstrap":
        if not a.parts:
            raise ValueError("--errors bootstrap needs --parts")
        parts = [read_hist(p) for p in a.parts]
        cfg = FitConfig(order=model.order, min_count=a.min_count)
        s = er.bootstrap_error(parts, model.breakpoints, cfg, a.m_tilde, y, a.seed, a.threads).sigma
    else:
        if not a.snapshots:
            raise ValueError("--errors evolution needs --snapshots")
        snaps = [read_spline(p)[0](y) for p in a.snapshots]
        s = er.evolution_error(er.EvolutionTrace(a.delta, a.k0, y, np.array(snaps))).sigma
    return s / restore_factor(t, x)


METHOD_NAMES = {"cov": "covariance", "bootstrap": "bootstrap", "evolution": "evolution"}


def cmd_sample(a):
    dist = tb.builtin(a.dist)
    t = _transform(a, dist.transform)
    if a.parts < 1:
        raise ValueError("--parts must be >= 1")
    parts = tb.sample_parts(dist, a.n, a.parts, a.seed, a.k, t)
    total = parts[0]
    for p in parts[1:]:
        total = merge(total, p)
    write_hist(total, a.out)
    if a.parts > 1:
        out = Path(a.out)
        for i, p in enumerate(parts):
            write_hist(p, out.with_name(f"{out.stem}.part{i:03d}{out.suffix}"))
    return 0


def cmd_merge(a):
    acc = read_hist(a.inputs[0])
    for path in a.inputs[1:]:
        acc = merge(acc, read_hist(path))
    write_hist(acc, a.out)
    return 0


def cmd_fit(a):
    cfg = _config(a)
    h = build(read_hist(a.hist), cfg.min_count)
    verdict = check_zero(h, a.zero_method)
    if verdict.consistent_with_zero and not a.allow_zero:
        print("data consistent with zero; not fitting (use --allow-zero to override)", file=sys.stderr)
        return EXIT_ZERO
    model, diag = adaptive_fit(h, cfg)
    write_spline(model, a.out, diag)
    print(f"pieces {model.n_pieces} accepted {diag.accepted} T {diag.accepted_threshold} "
          f"lambda {diag.constraint_lambda:.6g}", file=sys.stderr)
    for c in diag.levels:
        print(f"level {c.n} n_tilde {c.n_tilde} chi2/n {c.chi2_over_n:.4f} limit {c.limit:.4f}", file=sys.stderr)
    return 0 if diag.accepted else EXIT_UNACCEPTED


def cmd_eval(a):
    model, _ = read_spline(a.spline)
    t = _transform(a)
    x, y = _grid(a, model, t)
    value = restore(t, model, x)
    sigma = _band(a, a.errors, model, t, x, y)
    method = METHOD_NAMES[a.errors]
    _write_tsv(a.out, ("x", "value", "sigma", "method"), (x, value, sigma, [method] * x.size))
    return 0


def cmd_check_zero(a):
    h = build(read_hist(a.hist), a.min_count)
    v = check_zero(h, a.method)
    print(f"verdict {v.verdict.value}")
    print(f"condition {v.triggered_condition or '-'}")
    print("# level\tn_tilde\tchi2_over_n\texcess")
    for e in v.levels:
        print(f"{e.n}\t{e.n_tilde}\t{e.chi2_over_n:.6g}\t{e.excess:.4f}")
    return EXIT_ZERO if v.consistent_with_zero else 0


def cmd_compare(a):
    model, _ = read_spline(a.spline)
    dist = tb.builtin(a.dist)
    t = _transform(a, dist.transform)
    x, y = _grid(a, model, t)
    diff = restore(t, model, x) - dist.truth(x)
    sigma = _band(a, a.errors, model, t, x, y)
    _write_tsv(a.out, ("x", "diff", "sigma"), (x, diff, sigma))
    return 0


def cmd_errors(a):
    model, _ = read_spline(a.spline)
    t = _transform(a)
    x, y = _grid(a, model, t)
    value = restore(t, model, x)
    cols = [[], [], [], []]
    for m in a.methods.split(","):
        if m not in METHOD_NAMES:
            raise ValueError(f"unknown error method {m!r}")
        s = _band(a, m, model, t, x, y)
        for c, vals in zip(cols, (x, value, s, [METHOD_NAMES[m]] * x.size)):
            c.extend(vals)
    _write_tsv(a.out, ("x", "value", "sigma", "method"), cols)
    return 0


COMMANDS = {
    "sample": cmd_sample, "merge": cmd_merge, "fit": cmd_fit, "eval": cmd_eval,
    "check-zero": cmd_check_zero, "compare": cmd_compare, "errors": cmd_errors,
}


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    if a.verb == "merge" and len(a.inputs) < 2:
        ap.error("merge needs at least two inputs")
    try:
        return COMMANDS[a.verb](a)
    except (HistogramFormatError, SplineFormatError, GridMismatchError, FitError, ValueError, OSError) as exc:
        print(f"bhm {a.verb}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
