"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

from .bitstream import BitstreamError
from .cloud import CloudError, read_cloud, write_ply
from .codec import CodecError, EncoderConfig, decode, encode
from .metrics import MetricError, RdCurve, bd_rate, evaluate
from .rdo import (DEFAULT_LAMBDAS, DEFAULT_QG_GRID, DEFAULT_T_STEPS, LambdaModel,
                  fit_lambda_model, read_optima_csv, sweep, write_grid_csv, write_optima_csv)
from .synthetic import SyntheticConfig, gen_synthetic, write_truth

PSNR_SENTINEL = 999.0
DATA_ERRORS = (CloudError, CodecError, BitstreamError, MetricError, OSError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _fmt_psnr(x):
    return PSNR_SENTINEL if math.isinf(x) else round(x, 6)


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _require(cond, msg):
    if not cond:
        raise UsageError(msg)


def threads_from_env(default=1):
    raw = os.environ.get("LINECODEC_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"LINECODEC_THREADS must be an integer, got {raw!r}")


# --- commands -------------------------------------------------------------------

def cmd_encode(a):
    _require(a.qg is None or a.qg > 0, "--qg must be positive")
    _require(1 <= a.qa <= 4096, "--qa must be in 1..4096")
    _require(a.lam is None or a.lam >= 0, "--lambda must be non-negative")
    _require(a.qr is None or a.qr > 0, "--qr must be positive")
    model = LambdaModel.load(a.model) if a.model else None
    cloud = read_cloud(a.input)
    q_g = 1.0 if (a.qg is None and a.lam is None) else a.qg
    cfg = EncoderConfig.make(q_g=q_g, q_a=a.qa, lam=a.lam, T=a.T, lossless=a.lossless,
                             linear=not a.no_linear, q_r=a.qr, model=model)
    data, stats = encode(cloud, cfg)
    Path(a.output).write_bytes(data)
    bpp = 8.0 * len(data) / len(cloud)
    if a.stats:
        d = stats.to_dict()
        d["bpp"] = bpp
        d["points"] = len(cloud)
        with open(a.stats, "w") as f:
            json.dump(d, f, indent=1)
            f.write("\n")
    print(f"{a.input}: {len(cloud)} points -> {len(data)} bytes, {bpp:.4f} bpp "
          f"(qg={stats.q_g:g} lambda={stats.lam:g} T={stats.T:.3f} lines={stats.lines_coded})")
    return 0


def cmd_decode(a):
    data = Path(a.input).read_bytes()
    cloud = decode(data)
    write_ply(cloud, a.output, format="ascii" if a.ascii else "binary")
    print(f"{a.input}: {len(cloud)} points -> {a.output}")
    return 0


EVAL_FIELDS = ["ref", "test", "peak", "d1_mse", "d2_mse", "d1_psnr", "d2_psnr", "d2_fallbacks"]


def cmd_eval(a):
    _require(a.normals_k >= 3, "--normals-k must be at least 3")
    _require(a.peak is None or a.peak > 0, "--peak must be positive")
    ref = read_cloud(a.ref)
    test = read_cloud(a.test)
    r = evaluate(ref, test, a.normals_k, a.peak)
    row = [a.ref, a.test, r.peak, r.d1_mse, r.d2_mse, _fmt_psnr(r.d1_psnr), _fmt_psnr(r.d2_psnr),
           r.d2_fallbacks]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(EVAL_FIELDS)
    w.writerow(row)
    if a.out:
        new = not os.path.exists(a.out) or os.path.getsize(a.out) == 0
        with open(a.out, "a", newline="") as f:
            fw = csv.writer(f, lineterminator="\n")
            if new:
                fw.writerow(EVAL_FIELDS)
            fw.writerow(row)
    return 0


def read_rd_csv(path, metric, cloud=None, mode=None):
    """RD points from a CSV with columns bpp and d1_psnr / d2_psnr (optionally
    filtered on the cloud and mode columns).  The 999 sentinel is dropped."""
    col = f"{metric}_psnr"
    pts = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            if cloud is not None and row.get("cloud") != cloud:
                continue
            if mode is not None and row.get("mode") != mode:
                continue
            p = float(row[col])
            pts.append((float(row["bpp"]), math.inf if p >= PSNR_SENTINEL else p))
    return RdCurve.from_points(pts)


def cmd_bdrate(a):
    anchor = read_rd_csv(a.anchor, a.metric, a.cloud, a.anchor_mode)
    test = read_rd_csv(a.test, a.metric, a.cloud, a.test_mode)
    print(f"{bd_rate(anchor, test):.4f}")
    return 0


PLOT_TEMPLATE = """set datafile separator ','
set key autotitle columnhead
set xlabel 'lambda'
set multiplot layout 1,2
set ylabel 'optimal Q_g'
plot '{csv}' using 1:2 with linespoints
set ylabel 'optimal T'
plot '{csv}' using 1:3 with linespoints
unset multiplot
"""


def _cloud_files(directory):
    d = Path(directory)
    if not d.is_dir():
        raise OSError(f"{directory}: not a directory")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".ply", ".xyz"))
    if not files:
        raise OSError(f"{directory}: no .ply or .xyz clouds")
    return files


def cmd_sweep(a):
    lams = a.lambdas if a.lambdas is not None else list(DEFAULT_LAMBDAS)
    qgs = a.qgs if a.qgs is not None else list(DEFAULT_QG_GRID)
    _require(lams and all(x >= 0 for x in lams), "--lambdas must be non-negative")
    _require(qgs and all(x > 0 for x in qgs), "--qgs must be positive")
    _require(a.t_steps >= 1, "--t-steps must be at least 1")
    threads = threads_from_env()
    clouds = [read_cloud(p) for p in _cloud_files(a.inputs)]
    rows, opt = sweep(clouds, lams, qgs, a.t_steps, {"q_a": a.qa}, threads=threads)
    out = Path(a.out)
    write_optima_csv(opt, out)
    write_grid_csv(rows, out.with_name(out.stem + "_grid.csv"))
    for r in opt:
        print(f"lambda={r.lam:g} qg*={r.q_g:g} T*={r.T:.3f} rds={r.rds:.3f}")
    if a.emit_plot_script:
        Path(a.emit_plot_script).write_text(PLOT_TEMPLATE.format(csv=out.name))
    return 0


def cmd_fit_lambda(a):
    opt = read_optima_csv(a.inp)
    model = fit_lambda_model([r.lam for r in opt], [r.q_g for r in opt], [r.T for r in opt])
    model.save(a.out)
    al, be = model.qg_coeffs
    ga, de = model.t_coeffs
    print(f"qg(lambda) = {al:.6g} * exp({be:.6g} * lambda)")
    print(f"T(lambda)  = {ga:.6g} * exp(-{de:.6g} * lambda)")
    for r, (eq, et) in zip(opt, model.fit_residuals):
        print(f"lambda={r.lam:g} residual qg={eq:+.4f} T={et:+.4f}")
    if not model.check_monotone():
        print("warning: fitted model is not monotone over the lambda range", file=sys.stderr)
    return 0


def cmd_gen_synthetic(a):
    _require(a.lines >= 1 and a.points_per_line >= 1 and a.box >= 1,
             "--lines, --points-per-line and --box must be positive")
    _require(a.noise >= 0 and a.clutter >= 0, "--noise and --clutter must be non-negative")
    cfg = SyntheticConfig(a.lines, a.points_per_line, a.noise, a.box, a.seed, clutter=a.clutter)
    cloud, truth = gen_synthetic(cfg)
    out = Path(a.output)
    write_ply(cloud, out)
    truth_path = Path(a.truth) if a.truth else out.with_name(out.stem + "_lines.json")
    write_truth(truth, truth_path)
    print(f"{out}: {len(cloud)} points, {len(truth)} lines (truth in {truth_path})")
    return 0


# --- parser ---------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="linecodec", description="Linear-model geometry codec for point clouds.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    e = sub.add_parser("encode", help="compress a cloud")
    e.add_argument("--input", required=True)
    e.add_argument("--output", required=True)
    e.add_argument("--qg", type=float, help="geometry step (default 1, or from --lambda)")
    e.add_argument("--qa", type=int, default=40, help="angle resolution")
    e.add_argument("--lambda", dest="lam", type=float, help="rate-distortion trade-off")
    e.add_argument("--T", type=float, help="RDS threshold override")
    e.add_argument("--qr", type=float, help="residual offset step (lossy)")
    e.add_argument("--lossless", action="store_true")
    e.add_argument("--no-linear", action="store_true", help="pure octree stream")
    e.add_argument("--model", help="lambda model JSON (default: bundled)")
    e.add_argument("--stats", help="write encoder statistics JSON")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="decompress a stream to PLY")
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.add_argument("--ascii", action="store_true")
    d.set_defaults(func=cmd_decode)

    v = sub.add_parser("eval", help="D1/D2 between two clouds (CSV)")
    v.add_argument("--ref", required=True)
    v.add_argument("--test", required=True)
    v.add_argument("--normals-k", type=int, default=12)
    v.add_argument("--peak", type=float)
    v.add_argument("--out", help="append the row to this CSV")
    v.set_defaults(func=cmd_eval)

    b = sub.add_parser("bdrate", help="BD-rate between two RD CSVs")
    b.add_argument("--anchor", required=True)
    b.add_argument("--test", required=True)
    b.add_argument("--metric", choices=("d1", "d2"), default="d1")
    b.add_argument("--cloud", help="only rows of this cloud")
    b.add_argument("--anchor-mode", help="only anchor rows with this mode")
    b.add_argument("--test-mode", help="only test rows with this mode")
    b.set_defaults(func=cmd_bdrate)

    s = sub.add_parser("sweep", help="grid search of (Q_g, T) per lambda")
    s.add_argument("--inputs", required=True, help="directory of training clouds")
    s.add_argument("--lambdas", type=_float_list)
    s.add_argument("--qgs", type=_float_list)
    s.add_argument("--t-steps", type=int, default=DEFAULT_T_STEPS)
    s.add_argument("--qa", type=int, default=40)
    s.add_argument("--out", required=True, help="optima CSV (grid goes to <stem>_grid.csv)")
    s.add_argument("--emit-plot-script", help="write a gnuplot script for the optima")
    s.set_defaults(func=cmd_sweep)

    f = sub.add_parser("fit-lambda", help="fit the lambda model to sweep optima")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit_lambda)

    g = sub.add_parser("gen-synthetic", help="seeded line-segment cloud")
    g.add_argument("--lines", type=int, default=100)
    g.add_argument("--points-per-line", type=int, default=64)
    g.add_argument("--noise", type=float, default=0.5)
    g.add_argument("--box", type=int, default=1024)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--clutter", type=float, default=0.0)
    g.add_argument("--output", required=True)
    g.add_argument("--truth", help="ground-truth JSON (default <stem>_lines.json)")
    g.set_defaults(func=cmd_gen_synthetic)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except UsageError as e:
        print(f"linecodec {args.cmd}: {e}", file=sys.stderr)
        return 1
    except DATA_ERRORS as e:
        print(f"linecodec {args.cmd}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
