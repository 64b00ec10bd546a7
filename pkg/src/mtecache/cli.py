"""Command line driver: ``mtecache {preprocess,train,place,simulate,report,all}``.

Each stage reads the artifacts of the previous one from the output
directory, so stages can be re-run individually.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from mtecache import __version__
from mtecache.config import load_config
from mtecache.errors import ConfigError, DataError, InfeasiblePlacementError, NumericalError
from mtecache.ingest import Trace, parse_trace, serialize_trace, synth_trace
from mtecache.io import atomic_write_bytes, atomic_write_text, provenance_header
from mtecache.mtec import MtecModel, build_model, placement_ranking, predict_batch, topk_accuracy, train
from mtecache.pipeline import (
    build_request_matrix,
    dump_samples,
    load_samples,
    segment_samples,
    window_counts,
    window_event_counts,
)
from mtecache.placement import build_plan, plan_to_csv, verify_plan
from mtecache.simulator import generate_topology, locate_requests, metrics, replay, report_csv, report_rows

log = logging.getLogger("mtecache")

STAGES = ("preprocess", "train", "place", "simulate", "report")
PRODUCER = {
    "trace.csv": "preprocess",
    "samples.bin": "preprocess",
    "preprocess.json": "preprocess",
    "model.ckpt": "train",
    "predictions.csv": "place",
    "metrics.csv": "simulate",
    "sweep.csv": "simulate",
}
SWEEP_COLUMNS = "policy,cache_fraction,c_f,c_u,requests,hits,hit_ratio,cache_bytes,managed_bytes,byte_volume"
PREDICTION_COLUMNS = "updating_time,content_id,score,p_hat,placement_rank,label"
BYTE_VOLUME_NOTE = {"byte_volume_denominator": "cache_touched_requests"}


class Run:
    """Resolved configuration plus output-directory helpers for one invocation."""

    def __init__(self, cfg, quiet=False):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.quiet = quiet
        self.config_hash = cfg.config_hash()

    def header(self, extra=None):
        return provenance_header(self.config_hash, self.cfg.seed, extra)

    def path(self, name):
        return self.out / name

    def require(self, name):
        p = self.out / name
        if not p.exists():
            raise DataError(f"missing {name} in {self.out}; run `mtecache {PRODUCER[name]}` first")
        return p


# ---------------------------------------------------------------- helpers


def capacities(fraction, n_contents, uav_ratio):
    """FAP and UAV capacities (in contents) for a cache size given as a library fraction."""
    c_f = max(1, int(round(fraction * n_contents)))
    c_u = max(1, int(round(uav_ratio * c_f)))
    return c_f, c_u


def restrict_contents(trace, keep):
    """Keep the ``keep`` most requested contents (ties to the lower id), re-indexed densely."""
    counts = np.bincount(trace.content_ids, minlength=trace.n_contents + 1)[1:]
    top = np.sort(np.lexsort((np.arange(trace.n_contents), -counts))[:keep]) + 1
    remap = np.zeros(trace.n_contents + 1, dtype=np.int64)
    remap[top] = np.arange(1, keep + 1)
    mask = remap[trace.content_ids] > 0
    sub = trace.subset(mask)
    return Trace(sub.timestamps, sub.user_ids, remap[sub.content_ids], keep, trace.content_map[top - 1])


def load_dataset(cfg):
    d = cfg.dataset
    if d.format == "synthetic":
        trace = synth_trace(cfg.synth_config())
        n_times = d.duration
    else:
        path = Path(d.path)
        if not path.exists():
            raise DataError(f"dataset file {path} not found")
        with open(path, "rb") as fh:
            trace = parse_trace(fh, d.format)
        n_times = trace.duration
    if d.max_contents and d.max_contents < trace.n_contents:
        trace = restrict_contents(trace, d.max_contents)
    if d.format != "synthetic" and cfg.pipeline.k > trace.n_contents:
        raise ConfigError(f"pipeline.k={cfg.pipeline.k} exceeds the {trace.n_contents} contents in the trace")
    return trace, n_times


def read_rows(path):
    """Rows of a CSV written by this tool as dicts, provenance lines skipped."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def split_sets(samples, fractions):
    return samples.chronological_split(tuple(fractions))


# ---------------------------------------------------------------- stages


def stage_preprocess(run):
    cfg = run.cfg
    p = cfg.pipeline
    trace, n_times = load_dataset(cfg)
    if p.counts == "clamped":
        windowed = window_counts(build_request_matrix(trace, trace.n_contents, n_times), p.window)
    else:
        windowed = window_event_counts(trace, trace.n_contents, p.window, n_times // p.window)
    samples = segment_samples(windowed, p.lookback, p.k, p.stride)
    tr, va, te = split_sets(samples, p.split)
    if len(te) == 0:
        raise DataError(
            f"no test samples: {windowed.n_windows} intervals with lookback {p.lookback} "
            f"give {len(samples)} samples"
        )
    atomic_write_text(run.path("trace.csv"), run.header() + serialize_trace(trace))
    atomic_write_bytes(run.path("samples.bin"), dump_samples(samples))
    summary = {
        "config_sha256": run.config_hash,
        "seed": cfg.seed,
        "version": __version__,
        "n_contents": trace.n_contents,
        "n_events": len(trace),
        "n_times": n_times,
        "window": p.window,
        "lookback": p.lookback,
        "k": p.k,
        "n_samples": len(samples),
        "split": [len(tr), len(va), len(te)],
    }
    atomic_write_text(run.path("preprocess.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("preprocess: %d events, %d contents, %d samples (train %d, val %d, test %d)",
             len(trace), trace.n_contents, len(samples), len(tr), len(va), len(te))


def _load_samples(run):
    return load_samples(run.require("samples.bin").read_bytes())


def stage_train(run):
    cfg = run.cfg
    samples = _load_samples(run)
    tr, va, _ = split_sets(samples, cfg.pipeline.split)
    mcfg = cfg.mtec_config()
    if mcfg.k != samples.k:
        raise DataError(f"samples.bin was built with K={samples.k}, config has K={mcfg.k}; re-run preprocess")
    model = build_model(mcfg, samples.n_contents, samples.lookback)
    log.info("train: %d parameters, %d training / %d validation samples",
             model.n_parameters, len(tr), len(va))
    t0 = time.perf_counter()

    def progress(epoch, losses, val_acc):
        log.info("  epoch %3d/%d  loss %.5f  val_acc %.4f", epoch, mcfg.epochs, losses["total"], val_acc)

    model, history = train(model, tr, va, mcfg, progress=progress)
    model.save(run.path("model.ckpt"), {"config_sha256": run.config_hash, "seed": cfg.seed})
    atomic_write_text(run.path("history.csv"), history.to_csv(run.header()))
    log.info("train: done in %.1fs, best epoch %d", time.perf_counter() - t0, history.best_epoch)


def _predictions_csv(run, times, scores, p_hat, labels, k):
    out = io.StringIO()
    out.write(run.header())
    out.write(PREDICTION_COLUMNS + "\n")
    for t, s, ph, y in zip(times, scores, p_hat, labels):
        rank = np.empty(len(s), dtype=np.int64)
        rank[placement_ranking(s, ph, k) - 1] = np.arange(1, len(s) + 1)
        for c in range(len(s)):
            out.write(f"{t},{c + 1},{s[c]:.17g},{ph[c]:.17g},{rank[c]},{int(y[c])}\n")
    return out.getvalue()


def _topology_csv(run, topo):
    out = io.StringIO()
    out.write(run.header())
    out.write("node_id,kind,x,y,cluster\n")
    for fid, (x, y), c in zip(topo.fap_ids, topo.fap_xy, topo.fap_cluster):
        out.write(f"{fid},fap,{x:.6f},{y:.6f},{c}\n")
    for uid, (x, y) in zip(topo.uav_ids, topo.uav_xy):
        out.write(f"{uid},uav,{x:.6f},{y:.6f},\n")
    return out.getvalue()


def make_plan(cfg, topo, ranked, alpha, c_f, c_u):
    pl = cfg.placement
    plan = build_plan(ranked, alpha, c_f, c_u, pl.n_s, topo.cluster_ids, topo.uav_ids, pl.w, pl.z)
    report = verify_plan(plan)
    if not report.ok:
        first = report.violations[0]
        raise InfeasiblePlacementError(
            f"plan failed verification with {len(report.violations)} violation(s), "
            f"first: {first.kind} at {first.node}"
        )
    return plan


def stage_place(run):
    cfg = run.cfg
    samples = _load_samples(run)
    _, _, te = split_sets(samples, cfg.pipeline.split)
    if len(te) == 0:
        raise DataError("samples.bin holds no test samples; re-run preprocess")
    model, _ = MtecModel.load(run.require("model.ckpt"))
    if (model.n_contents, model.lookback) != (samples.n_contents, samples.lookback):
        raise DataError("model.ckpt does not match samples.bin; re-run train")
    scores, p_hat = predict_batch(model, te.x)
    k = cfg.pipeline.k
    log.info("place: test Top-K accuracy %.4f over %d samples", topk_accuracy(scores, te.y), len(te))
    times = (te.start + samples.lookback).tolist()
    atomic_write_text(run.path("predictions.csv"), _predictions_csv(run, times, scores, p_hat, te.y, k))

    topo = generate_topology(cfg.topology_config())
    atomic_write_text(run.path("topology.csv"), _topology_csv(run, topo))
    c_f, c_u = capacities(cfg.placement.cache_fraction, samples.n_contents, cfg.placement.uav_capacity_ratio)
    for t, s, ph in zip(times, scores, p_hat):
        plan = make_plan(cfg, topo, placement_ranking(s, ph, k).tolist(), cfg.placement.alpha, c_f, c_u)
        atomic_write_text(run.path(f"plans/t{t:06d}.csv"), plan_to_csv(plan, run.header({"updating_time": t})))
    log.info("place: %d verified plans (C_f=%d, C_u=%d, %d FAPs in %d inter-clusters)",
             len(times), c_f, c_u, len(topo.fap_xy), len(topo.clusters))


def load_rankings(path):
    """``{updating_time: [content ids by placement rank]}`` from predictions.csv."""
    by_time = {}
    for row in read_rows(path):
        by_time.setdefault(int(row["updating_time"]), []).append(
            (int(row["placement_rank"]), int(row["content_id"]))
        )
    return {t: [c for _, c in sorted(items)] for t, items in sorted(by_time.items())}


def simulate_fraction(cfg, topo, located, rankings, n_contents, fraction, backend=None):
    """``{policy: {interval: MetricsReport}}`` for every configured policy at one cache size."""
    s = cfg.simulation
    c_f, c_u = capacities(fraction, n_contents, cfg.placement.uav_capacity_ratio)
    intervals = sorted(rankings)
    out = {}
    for policy in s.policies:
        if policy in ("mtec", "mtec_uncoded"):
            alpha = cfg.placement.alpha if policy == "mtec" else 1.0
            schedule = {t: make_plan(cfg, topo, rankings[t], alpha, c_f, c_u) for t in intervals}
            out[policy] = replay(located, topo, policy, intervals, s.content_size, n_contents, schedule)
        else:
            out[policy] = replay(located, topo, policy, intervals, s.content_size,
                                 c_f=c_f, c_u=c_u, backend=backend)
    return out, c_f, c_u


def stage_simulate(run):
    cfg = run.cfg
    info = json.loads(run.require("preprocess.json").read_text())
    with open(run.require("trace.csv"), "rb") as fh:
        trace = parse_trace(fh, "synthetic_csv")
    rankings = load_rankings(run.require("predictions.csv"))
    n_c = info["n_contents"]
    topo = generate_topology(cfg.topology_config())
    located = locate_requests(trace, topo, info["window"], seed=cfg.seed)

    fractions = sorted(set(cfg.simulation.sweep) | {cfg.placement.cache_fraction})
    metric_rows, sweep_rows = [], []
    for fraction in fractions:
        per_policy, c_f, c_u = simulate_fraction(cfg, topo, located, rankings, n_c, fraction)
        for policy, per in per_policy.items():
            total = metrics(per.values(), policy)
            sweep_rows.append(
                f"{policy},{fraction:g},{c_f},{c_u},{total.requests},{total.hits},"
                f"{total.cache_hit_ratio:.10f},{total.cache_bytes},{total.managed_bytes},"
                f"{total.transferred_byte_volume:.10f}"
            )
            if fraction == cfg.placement.cache_fraction:
                metric_rows.extend(report_rows(policy, per))
        log.info("simulate: cache %g (C_f=%d): %s", fraction, c_f, "  ".join(
            f"{p}={metrics(per.values()).cache_hit_ratio:.4f}" for p, per in per_policy.items()
        ))
    header = run.header({"cache_fraction": cfg.placement.cache_fraction, **BYTE_VOLUME_NOTE})
    atomic_write_text(run.path("metrics.csv"), report_csv(metric_rows, header))
    atomic_write_text(
        run.path("sweep.csv"),
        run.header(BYTE_VOLUME_NOTE) + SWEEP_COLUMNS + "\n" + "".join(r + "\n" for r in sweep_rows),
    )


def _wide(rows, metric, policies, fractions):
    table = {(r["policy"], float(r["cache_fraction"])): r[metric] for r in rows}
    lines = [f"{metric}," + ",".join(policies)]
    for f in fractions:
        lines.append(f"{f:g}," + ",".join(table.get((p, f), "") for p in policies))
    return lines


def stage_report(run):
    sweep = read_rows(run.require("sweep.csv"))
    per_interval = read_rows(run.require("metrics.csv"))
    policies = list(dict.fromkeys(r["policy"] for r in sweep))
    fractions = sorted({float(r["cache_fraction"]) for r in sweep})
    hit = _wide(sweep, "hit_ratio", policies, fractions)
    vol = _wide(sweep, "byte_volume", policies, fractions)
    # hit ratio vs cache size, then byte volume vs cache size
    text = run.header(BYTE_VOLUME_NOTE) + "\n".join(hit) + "\n\n" + "\n".join(vol) + "\n"
    atomic_write_text(run.path("report.csv"), text)

    times = sorted({r["updating_time"] for r in per_interval if r["updating_time"] != "all"}, key=int)
    times.append("all")
    cell = {(r["policy"], r["updating_time"]): r["hit_ratio"] for r in per_interval}
    lines = ["updating_time," + ",".join(policies)]
    for t in times:
        lines.append(f"{t}," + ",".join(cell.get((p, t), "") for p in policies))
    atomic_write_text(run.path("report_intervals.csv"), run.header() + "\n".join(lines) + "\n")
    if not run.quiet:
        width = max(len(p) for p in policies) + 2
        print("cache-hit ratio by cache size (fraction of the library)")
        print("".ljust(8) + "".join(p.rjust(width) for p in policies))
        for f in fractions:
            row = {r["policy"]: float(r["hit_ratio"]) for r in sweep if float(r["cache_fraction"]) == f}
            print(f"{f:<8g}" + "".join(f"{row.get(p, float('nan')):.4f}".rjust(width) for p in policies))


STAGE_FUNCS = {
    "preprocess": stage_preprocess,
    "train": stage_train,
    "place": stage_place,
    "simulate": stage_simulate,
    "report": stage_report,
}


def run_stage(name, cfg, quiet=False):
    run = Run(cfg, quiet)
    for stage in STAGES if name == "all" else (name,):
        STAGE_FUNCS[stage](run)
    return run


# ---------------------------------------------------------------- entry point


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="mtecache", description="Popularity-driven edge caching experiments.")
    parser.add_argument("--version", action="version", version=f"mtecache {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in STAGES + ("all",):
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage")
        p.add_argument("--config", type=Path, help="TOML experiment file (defaults apply when omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V",
                       help="override one setting, e.g. --set model.epochs=5")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--quiet", action="store_true")
    return parser


EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_CONFIG
    logging.captureWarnings(True)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = load_config(args.config, args.overrides, seed=args.seed, out=args.out)
        run_stage(args.command, cfg, quiet=args.quiet)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
