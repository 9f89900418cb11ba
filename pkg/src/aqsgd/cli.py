"""Command-line entry points: ``train``, ``design``, ``bounds``, ``inspect``.

Exit codes: 0 ok, 2 usage or configuration error, 3 corrupt data.
The default output root for ``train`` is ``$AQSGD_OUT`` or ``./out``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import codec
from .bounds import variance_bound
from .config import ConfigError, load_config
from .distributions import (
    SIGNED_SUPPORT,
    UNSIGNED_SUPPORT,
    DegenerateDistributionError,
    MixtureModel,
    fit_truncated_normal,
)
from .levels import LevelSet, NormKind, exponential_levels, levels_for_bits, uniform_levels
from .optimizer import Objective, SolverConfig, alq_solve, amq_solve, gd_solve, psi
from .trainer import DegenerateStatisticsError, format_metrics, run

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CORRUPT = 3


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunManifest:
    config_path: str
    seed: int
    out_dir: str
    config_hash: str

    def text(self) -> str:
        return (f"config={self.config_path}\nseed={self.seed}\n"
                f"config_hash={self.config_hash}\nout={self.out_dir}\n")


def content_hash(data: bytes) -> str:
    """Git blob id of ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_row(row: dict) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(row.keys())
    wr.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row.values()])
    return buf.getvalue()


# --- train -----------------------------------------------------------------

def cmd_train(args, out) -> int:
    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    raw = Path(args.config).read_bytes()
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    root = Path(args.out or os.environ.get("AQSGD_OUT", "out"))
    manifest = RunManifest(str(args.config), cfg.seed, "", content_hash(raw)[:12])
    out_dir = root / f"{manifest.config_hash}-s{cfg.seed}"
    manifest = dataclasses.replace(manifest, out_dir=str(out_dir))
    result = run(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(format_metrics(result.rows), encoding="utf-8")
    s = result.summary
    summary = (
        f"method={cfg.method}\nsteps={s['step']}\nfinal_loss={s['loss']:.17g}\n"
        f"mean_epsilon_q={s['epsilon_q']:.17g}\nmean_code_bound_bits={s['code_bound_bits']:.17g}\n"
        f"mean_bits_per_coord={s['bits_per_coord']:.17g}\n"
    )
    (out_dir / "summary.txt").write_text(summary, encoding="utf-8")
    (out_dir / "manifest.txt").write_text(manifest.text(), encoding="utf-8")
    out.write(summary)
    out.write(f"wrote {out_dir}\n")
    return EXIT_OK


# --- design ----------------------------------------------------------------

def _parse_components(specs):
    mus, sigmas, weights = [], [], []
    for item in specs:
        parts = [p for p in item.replace(":", ",").split(",") if p.strip()]
        if len(parts) not in (2, 3):
            raise UsageError(f"--model-params expects mu,sigma[,weight], got {item!r}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise UsageError(f"--model-params: not a number in {item!r}") from None
        mus.append(vals[0])
        sigmas.append(vals[1])
        weights.append(vals[2] if len(vals) == 3 else 1.0)
    if any(not sg > 0 for sg in sigmas) or any(not w > 0 for w in weights):
        raise UsageError("--model-params: sigma and weight must be positive")
    return mus, sigmas, weights


def _read_samples(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read samples file: {exc}") from None
    try:
        vals = np.array([float(t) for t in text.replace(",", " ").split()])
    except ValueError:
        raise UsageError("samples file must contain numbers only") from None
    if vals.size < 2:
        raise UsageError("samples file needs at least 2 values")
    return vals


def cmd_design(args, out) -> int:
    if (args.model_params is None) == (args.samples_file is None):
        raise UsageError("give exactly one of --model-params or --samples-file")
    symmetric = args.symmetric or args.method == "amq"
    lo, hi = SIGNED_SUPPORT if symmetric else UNSIGNED_SUPPORT
    if args.model_params is not None:
        mus, sigmas, weights = _parse_components(args.model_params)
        model = MixtureModel.from_params(mus, sigmas, lo, hi, weights)
    else:
        x = _read_samples(args.samples_file)
        if not symmetric:
            x = np.abs(x)
        if np.any(x < lo) or np.any(x > hi):
            raise UsageError(f"samples must lie in [{lo}, {hi}] (normalized coordinates)")
        model = MixtureModel.single(fit_truncated_normal(x, lo, hi))
    try:
        s = levels_for_bits(args.bits, symmetric)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    obj = Objective(model, weighted=True, symmetric=symmetric)
    cfg = SolverConfig(max_sweeps=args.max_sweeps)
    if args.method == "amq":
        start = exponential_levels(s, cfg.init_p, symmetric)
        res = amq_solve(s, obj, cfg)
    elif args.method == "gd":
        start = uniform_levels(s, symmetric)
        res = gd_solve(s, obj, cfg, start=start)
    else:
        start = uniform_levels(s, symmetric)
        res = alq_solve(s, obj, cfg)
    out.write(f"levels: {' '.join(format(v, '.10g') for v in res.levels.interior)}\n")
    out.write(f"grid: {' '.join(format(v, '.10g') for v in res.levels.grid)}\n")
    if res.p is not None:
        out.write(f"p: {res.p:.10g}\n")
    out.write(f"psi_before: {psi(start, obj):.10g}\n")
    out.write(f"psi_after: {res.psi:.10g}\n")
    out.write(f"sweeps: {res.iterations}\n")
    out.write(f"converged: {res.converged}\n")
    return EXIT_OK


# --- bounds / inspect ------------------------------------------------------

def _parse_levels(text: str) -> LevelSet:
    try:
        return LevelSet.from_text(text.replace(" ", ""))
    except ValueError as exc:
        raise UsageError(f"--levels: {exc}") from None


def cmd_bounds(args, out) -> int:
    levels = _parse_levels(args.levels)
    try:
        q = NormKind.parse(args.norm)
    except ValueError as exc:
        raise UsageError(f"--norm: {exc}") from None
    if args.dim < 1:
        raise UsageError("--dim must be >= 1")
    rep = variance_bound(levels, args.dim, q)
    if rep.applicable:
        out.write(f"epsilon_Q = {rep.epsilon_q:.10g}  (ratio term {rep.ratio_term:.10g} at j*={rep.j_star}, "
                  f"small term {rep.small_term:.10g})\n")
        if rep.p == rep.p:
            out.write(f"K_p = {rep.k_p:.10g} at p = {rep.p:.10g}\n")
    else:
        out.write("epsilon_Q: not applicable (no interior level)\n")
    out.write(f"code length bound (model-free) = {rep.code_length_bits:.10g} bits per bucket of {args.dim}\n")
    out.write(_csv_row(rep.as_row()))
    return EXIT_OK


def cmd_inspect(args, out) -> int:
    try:
        data = Path(args.blob).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read blob: {exc}") from None
    info = codec.inspect_blob(data)
    out.write(f"version={info['version']} symmetric={info['symmetric']} s={info['s']} "
              f"bucket_size={info['bucket_size']} buckets={info['bucket_count']} "
              f"tail={info['tail_len']} level_hash={info['level_hash']} bytes={info['total_bytes']}\n")
    out.write(f"code_lengths={','.join(str(x) for x in info['code_lengths'])}\n")
    out.write("bucket,norm,bits,nonzero\n")
    for b, row in enumerate(info["buckets"]):
        out.write(f"{b},{row['norm']:.9g},{row['bits']},{row['nonzero']}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aqsgd", description="Adaptive gradient quantization toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("train", help="run a simulated data-parallel training job")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output root (default $AQSGD_OUT or ./out)")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("design", help="solve quantization levels for a coordinate model")
    d.add_argument("--model-params", action="append", metavar="MU,SIGMA[,WEIGHT]",
                   help="truncated-normal component; repeat for a mixture")
    d.add_argument("--samples-file", help="file of normalized coordinate values")
    d.add_argument("--bits", type=int, default=3)
    d.add_argument("--method", choices=("alq", "gd", "amq"), default="alq")
    d.add_argument("--symmetric", action="store_true")
    d.add_argument("--max-sweeps", type=int, default=50)
    d.set_defaults(func=cmd_design)

    b = sub.add_parser("bounds", help="variance and code-length bounds for a level set")
    b.add_argument("--levels", required=True, help="interior levels, e.g. 0.25,0.5 or sym:0.1,0.4")
    b.add_argument("--dim", type=int, required=True)
    b.add_argument("--norm", default="2")
    b.set_defaults(func=cmd_bounds)

    i = sub.add_parser("inspect", help="print the header and bucket sizes of an encoded blob")
    i.add_argument("blob")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, out)
    except UsageError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_USAGE
    except ConfigError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (DegenerateStatisticsError, DegenerateDistributionError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_USAGE
    except codec.CorruptBlobError as exc:
        err.write(f"corrupt blob: {exc}\n")
        return EXIT_CORRUPT


if __name__ == "__main__":
    sys.exit(main())
