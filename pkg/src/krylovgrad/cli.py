"""Command-line harness: verification experiments emitting CSV.

Examples::

    krylovgrad hilbert-accuracy --n 8
    krylovgrad bench-matvecs --k 10,50,100
    krylovgrad wave-demo --n 8 --t 1.0 --out wave.csv
    krylovgrad logdet-demo --n 100 --k 30 --l 100 --seed 0

The exit code is 0 iff every check passes; otherwise one line per failing
check is written to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import dataclass
from typing import List, Optional, Sequence

from . import experiments
from .operator import make_hilbert_operator, read_matrix_market

SUBCOMMANDS = ("hilbert-accuracy", "bench-matvecs", "wave-demo", "logdet-demo")


@dataclass
class ExperimentConfig:
    """Parsed options; ``None`` means the subcommand's default. Double precision only."""

    subcommand: str
    n: Optional[int] = None
    k: Optional[tuple] = None
    l: Optional[int] = None
    seed: int = 0
    t: Optional[float] = None
    reorth: Optional[bool] = None
    reproject: Optional[bool] = None
    mtx: Optional[str] = None
    out: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand {self.subcommand!r}")
        for name in ("n", "l", "t"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"--{name} must be positive")
        if self.k is not None and (len(self.k) == 0 or any(k < 1 for k in self.k)):
            raise ValueError("--k must be a non-empty list of positive integers")
        if self.seed < 0:
            raise ValueError("--seed must be non-negative")
        if self.workers < 1:
            raise ValueError("--workers must be positive")


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="krylovgrad", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--n", type=int, help="matrix size, grid size or largest N")
        p.add_argument("--k", type=_int_list, help="Krylov depth(s), comma separated")
        p.add_argument("--l", type=int, help="number of probes")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--t", type=float, help="time for the exponential")
        p.add_argument("--reorth", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--reproject", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--mtx", help="Matrix Market file (bench-matvecs)")
        p.add_argument("--out", help="write CSV here instead of stdout")
        p.add_argument("--workers", type=int, default=1, help="threads for probe evaluation")
    return parser


def parse_config(argv: Optional[Sequence[str]] = None) -> ExperimentConfig:
    ns = build_parser().parse_args(argv)
    return ExperimentConfig(**vars(ns))


def format_value(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def to_csv(result: experiments.ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result.header)
    for row in result.rows:
        w.writerow([format_value(x) for x in row])
    return buf.getvalue()


def run(cfg: ExperimentConfig) -> experiments.ExperimentResult:
    reorth = True if cfg.reorth is None else cfg.reorth
    if cfg.subcommand == "hilbert-accuracy":
        if cfg.reproject is None:
            modes = experiments.HILBERT_MODES
        else:
            modes = ("proj",) if cfg.reproject else ("noproj",)
        return experiments.hilbert_accuracy(cfg.n or 8, modes, reorth)
    if cfg.subcommand == "bench-matvecs":
        if cfg.mtx is not None:
            op = read_matrix_market(cfg.mtx)
        else:
            op = make_hilbert_operator(cfg.n or 100)
        ks = cfg.k or tuple(k for k in (1, 10, 50, 100) if k <= op.dim)
        # plain Lanczos by default: with re-orthogonalisation Hilbert(100) breaks down early
        reorth_b = False if cfg.reorth is None else cfg.reorth
        return experiments.bench_matvecs(op, ks, reorth_b, cfg.seed, check_walltime=cfg.mtx is not None)
    if cfg.subcommand == "wave-demo":
        return experiments.wave_demo(
            cfg.n or 8, cfg.t if cfg.t is not None else 1.0, cfg.k, cfg.seed, reorth, cfg.reproject
        )
    k = cfg.k[0] if cfg.k else 30
    return experiments.logdet_demo(
        cfg.n or 100, k, cfg.l or 100, cfg.seed, workers=cfg.workers, reorthogonalize=reorth
    )


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cfg = parse_config(argv)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run(cfg)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = to_csv(result)
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    failures = result.failures()
    for c in failures:
        print(f"FAIL {c.name}: {c.detail}", file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
