"""Command-line experiment runner.

``flgsr run <config> [--out DIR]`` executes every run of a config and writes
``results.csv``, ``manifest.json`` and one recovered ``.pgm`` per run.
``flgsr validate <config>`` only reports problems. Exit codes: 0 success,
1 configuration error, 2 numerical failure.

``FLGSR_THREADS`` caps how many runs execute concurrently (default 1).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__, _kernels
from .config import ConfigError, ExperimentConfig, RunEntry, entry_seed, expand_runs, load_config, validate
from .data import GrayImage, crop_center, downsample, encode_pgm, generate_mask, resolve_image, synth_lowrank
from .errors import NumericalFailure
from .iral import iral_solve
from .linops import SamplingProblem
from .metrics import psnr, rel_error, ssim

CSV_COLUMNS = ["image", "mode", "groups", "restart_on", "psnr_db", "ssim", "rel_err",
               "wall_time_s", "outer_iters", "restarts"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


@dataclass
class RunOutcome:
    entry: RunEntry
    row: dict
    record: dict
    pgm: bytes


def thread_count(env=None) -> int:
    env = os.environ if env is None else env
    raw = env.get("FLGSR_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError([f"FLGSR_THREADS: expected a positive integer, got {raw!r}"]) from None
    if n < 1:
        raise ConfigError([f"FLGSR_THREADS: expected a positive integer, got {raw!r}"])
    return n


def prepare_image(spec: str, size, base_dir) -> GrayImage:
    """Load ``spec`` and shrink it to ``size x size`` (block mean, then center crop)."""
    img = resolve_image(spec, base_dir)
    if size is None:
        return img
    factor = max(1, min(img.rows, img.cols) // size)
    if factor > 1:
        img = downsample(img, factor)
    return crop_center(img, size)


def build_instance(entry: RunEntry, cfg: ExperimentConfig):
    """Reference matrix, sampling problem and data seed for ``entry``."""
    seed = entry_seed(cfg.seed, entry.data_key)
    if entry.image == "synthetic":
        syn = cfg.synthetic
        inst = synth_lowrank(int(syn["m"]), int(syn["n"]), int(syn["rank"]), seed,
                             float(syn["noise_sigma"]), cfg.sr)
        return inst.M, inst.problem, seed
    ref = prepare_image(entry.image, cfg.size, cfg.base_dir).pixels
    m, n = ref.shape
    mask = generate_mask(m, n, cfg.sr, seed)
    sigma = cfg.sigma_per_entry * math.sqrt(mask.size)
    return ref, SamplingProblem(m, n, mask, ref.ravel()[mask], sigma), seed


def output_name(entry: RunEntry) -> str:
    slug = re.sub(r"[^A-Za-z0-9]+", "_", entry.image).strip("_")
    return f"{slug}_{entry.mode}_g{entry.groups}_r{int(entry.restart)}.pgm"


def encode_mask(P: SamplingProblem) -> dict:
    """Observed positions as a flat, row-major sorted list ``[r0, c0, r1, c1, ...]``."""
    return dict(encoding="row-col-pairs", count=int(P.nobs), pairs=P.pairs().ravel().tolist())


def decode_mask(record: dict, shape) -> np.ndarray:
    """Inverse of :func:`encode_mask`; returns flat row-major indices."""
    rc = np.asarray(record["pairs"], dtype=np.int64).reshape(-1, 2)
    return rc[:, 0] * shape[1] + rc[:, 1]


def execute(entry: RunEntry, cfg: ExperimentConfig) -> RunOutcome:
    ref, P, seed = build_instance(entry, cfg)
    solver = dataclasses.replace(cfg.solver, groups=entry.groups, restart=entry.restart)
    try:
        res = iral_solve(P, solver)
    except NumericalFailure as exc:
        raise NumericalFailure(f"run {entry.key}: {exc}", sweep=exc.sweep, outer=exc.outer) from exc
    rec = np.clip(res.C_hat, 0.0, 1.0)
    metrics = dict(psnr_db=psnr(ref, rec), ssim=ssim(ref, rec), rel_err=rel_error(ref, res.C_hat),
                   wall_time_s=res.wall_time)
    row = dict(image=entry.image, mode=entry.mode, groups=entry.groups,
               restart_on=int(entry.restart), outer_iters=res.outer_iters,
               restarts=res.restarts, **metrics)
    pgm = encode_pgm(GrayImage(rec))
    record = dict(
        key=entry.key, image=entry.image, mode=entry.mode, groups=entry.groups,
        restart_on=entry.restart, data_seed=seed, shape=list(P.shape), sigma=P.sigma,
        mask=encode_mask(P), metrics=metrics, outer_iters=res.outer_iters,
        restarts=res.restarts, sweeps=res.sweeps, active_columns=res.active_columns,
        final_residual=res.final_residual, output=output_name(entry),
        output_sha256=hashlib.sha256(pgm).hexdigest(),
    )
    return RunOutcome(entry, row, record, pgm)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_outputs(out_dir, cfg: ExperimentConfig, outcomes, failures):
    os.makedirs(out_dir, exist_ok=True)
    outcomes = sorted(outcomes, key=lambda o: (o.entry.image, o.entry.mode, o.entry.groups, not o.entry.restart))
    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for o in outcomes:
            w.writerow({k: _fmt(o.row[k]) for k in CSV_COLUMNS})
    for o in outcomes:
        with open(os.path.join(out_dir, o.record["output"]), "wb") as fh:
            fh.write(o.pgm)
    manifest = dict(
        software=dict(package="flgsr", version=__version__, numpy=np.__version__,
                      kernel=_kernels.backend()),
        seed=cfg.seed,
        config=cfg.to_dict(),
        config_dir=cfg.base_dir,
        runs=[o.record for o in outcomes],
        failures=failures,
    )
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, allow_nan=True)
        fh.write("\n")


def run(config_path, out=None, env=None) -> int:
    """Execute a config; returns the process exit code."""
    try:
        cfg = load_config(config_path)
        threads = thread_count(env)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: cannot read {config_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = out if out is not None else (
        cfg.output if os.path.isabs(cfg.output) else os.path.join(cfg.base_dir, cfg.output))
    entries = expand_runs(cfg)
    outcomes, failures = [], []

    def one(entry):
        try:
            return execute(entry, cfg)
        except NumericalFailure as exc:
            return exc

    if threads > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, entries))
    else:
        results = [one(e) for e in entries]
    for entry, r in zip(entries, results):
        if isinstance(r, NumericalFailure):
            print(f"numerical failure: {r}", file=sys.stderr)
            failures.append(dict(key=entry.key, message=str(r), outer=r.outer, sweep=r.sweep))
        else:
            outcomes.append(r)
            print(f"{entry.key}: psnr {r.row['psnr_db']:.2f} dB, ssim {r.row['ssim']:.3f}, "
                  f"rel_err {r.row['rel_err']:.2e}, {r.row['outer_iters']} outer, "
                  f"{r.row['wall_time_s']:.1f}s")
    write_outputs(out_dir, cfg, outcomes, failures)
    return EXIT_NUMERICAL if failures else EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="flgsr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (overrides the config)")
    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, args.out)
    try:
        diags = validate(args.config)
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for d in diags:
        print(d)
    if not diags:
        print("ok")
    return EXIT_CONFIG if diags else EXIT_OK
