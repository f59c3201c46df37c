"""Benchmark harness: the four desk-scale experiments, summary statistics and
CSV/plot-data emission.

Experiments run in simulated time with event-count scaling: each sweep point
simulates `scale` packets at the true rates, so reported rates are preserved
as exact ratios.  Sweep points and repetitions can run on a bounded process
pool; results merge in deterministic (point, repetition) order.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import fabric as fb
from . import traffic as tg
from .engine import Engine, MonitorCounters
from .lb import Backend, LbConfig, build_low_bits_lb, throughput_bps
from .packet import HEADERS_LEN

RUNS_HEADER = ["experiment", "run", "payload_bytes", "offered_pps",
               "achieved_pps", "dropped_capacity", "dropped_queue",
               "slow_path", "median_rtt_us", "stddev_rtt_us"]

# Default sweeps.  RQ2 crosses the 22/23-byte payload step; RQ3 skips payload
# 23 because the capacity step makes bandwidth locally non-monotone right at
# the boundary while the sweep tracks the wire-efficiency trend.
RQ2_PAYLOADS = (16, 20, 22, 23, 26, 32)
RQ2_FRACTIONS = (Fraction(1, 2), Fraction(9, 10), Fraction(1),
                 Fraction(3, 2), Fraction(2))
RQ3_PAYLOADS = (0, 8, 16, 22, 64, 128, 256, 512, 1024, 1458)
RQ4_PATHS = (fb.PATH_DIRECT, fb.PATH_XENOFLOW, fb.PATH_HOST)
RQ4_PROBES = 2700
RQ4_PROBE_RATE = 1_000_000
RQ5_SPLITS = ("single", "50/50", "75/25", "100/0")
RQ5_LOADS = (Fraction(0), Fraction(1, 10), Fraction(1, 4), Fraction(1, 2),
             Fraction(3, 4), Fraction(9, 10), Fraction(95, 100),
             Fraction(99, 100))

BACKENDS = (Backend("02:aa:00:00:00:02", "fips2"),
            Backend("02:aa:00:00:00:03", "fips3"))
OUT_PORT = 1  # "p1" in the standard testbed


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    kind: str
    repetitions: int = 3
    seed: int = 0
    scale: int = 1_000_000
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.repetitions < 3:
            raise ConfigError("repetitions must be >= 3")
        if self.scale < 1:
            raise ConfigError("scale must be >= 1")


@dataclass
class SummaryStats:
    median: float
    stddev: float
    variation_coefficient: float
    mean: float
    n: int


def summarize(samples) -> SummaryStats:
    """Lower median, population stddev, cv = stddev/mean (0 for zero mean)."""
    xs = sorted(float(x) for x in samples)
    if not xs:
        raise ValueError("no samples")
    median = xs[(len(xs) - 1) // 2]
    mean = sum(xs) / len(xs)
    stddev = (sum((x - mean) ** 2 for x in xs) / len(xs)) ** 0.5
    cv = stddev / mean if mean != 0 else 0.0
    return SummaryStats(median, stddev, cv, mean, len(xs))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(out_dir: str, name: str, header, rows) -> None:
    """Write name.csv and a gnuplot-compatible name.dat with the same rows."""
    os.makedirs(out_dir, exist_ok=True)
    cells = [[_fmt(v) for v in row] for row in rows]
    with open(os.path.join(out_dir, name + ".csv"), "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in cells:
            fh.write(",".join(row) + "\n")
    with open(os.path.join(out_dir, name + ".dat"), "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in cells:
            fh.write(" ".join(c if c else "nan" for c in row) + "\n")


def _rep_seed(seed: int, index: int) -> int:
    return int(tg.splitmix64(seed ^ 0x9D8A7B6C5D4E3F2A, 1, offset=index)[0])


def _lb_engine(n_backends: int = 2) -> Engine:
    engine = Engine()
    build_low_bits_lb(engine, LbConfig(list(BACKENDS[:n_backends]), OUT_PORT))
    return engine


def _check_conserved(stats: fb.RunStats) -> None:
    if stats.residual_error() != 0:
        raise AssertionError(f"conservation violated: {stats}")


def _run_tasks(tasks, worker, jobs: int):
    if jobs <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks))


# ---------------------------------------------------------------------------
# RQ2: throughput/loss across the small-packet capacity step


def _rq2_task(args):
    payload, frac, rep, seed, scale, model = args
    frame = HEADERS_LEN + payload
    offered = frac * model.service_fraction(frame, fb.PATH_XENOFLOW)
    engine = _lb_engine()
    profile = tg.TrafficProfile(payload_bytes=payload, rate_pps=offered,
                                count=scale, ip_src_dist=tg.ParitySplit(50),
                                seed=_rep_seed(seed, rep))
    stats = fb.run(engine, tg.generate(profile), model)
    _check_conserved(stats)
    return {"payload": payload, "frac": frac, "rep": rep,
            "offered_pps": stats.offered_pps, "achieved_pps": stats.achieved_pps,
            "dropped_capacity": stats.dropped_capacity,
            "dropped_queue": stats.dropped_queue,
            "slow_path": stats.slow_path_delivered,
            "residual": stats.residual_in_queue}


def run_rq2(spec: ExperimentSpec, model: fb.CapacityModel, out_dir: str,
            jobs: int = 1):
    payloads = spec.params.get("payloads", RQ2_PAYLOADS)
    fractions = [Fraction(f) for f in spec.params.get("fractions", RQ2_FRACTIONS)]
    tasks = [(p, f, r, spec.seed, spec.scale, model)
             for p in payloads for f in fractions
             for r in range(spec.repetitions)]
    results = _run_tasks(tasks, _rq2_task, jobs)

    runs_rows, point_rows = [], []
    for i, res in enumerate(results):
        runs_rows.append(["rq2", i, res["payload"], res["offered_pps"],
                          res["achieved_pps"], res["dropped_capacity"],
                          res["dropped_queue"], res["slow_path"], None, None])
    per_rep = spec.repetitions
    for j in range(0, len(results), per_rep):
        reps = results[j:j + per_rep]
        point_rows.append([
            reps[0]["payload"], reps[0]["offered_pps"],
            summarize(r["achieved_pps"] for r in reps).median,
            int(summarize(r["dropped_capacity"] + r["dropped_queue"]
                          for r in reps).median)])
    write_table(out_dir, "rq2", ["payload_bytes", "offered_pps",
                                 "achieved_pps", "dropped"], point_rows)
    write_table(out_dir, "rq2_runs", RUNS_HEADER, runs_rows)
    return point_rows, results


# ---------------------------------------------------------------------------
# RQ3: counter-derived bandwidth vs line rate


def _rq3_task(args):
    payload, rep, seed, scale, model = args
    frame = HEADERS_LEN + payload
    offered = model.service_fraction(frame, fb.PATH_XENOFLOW)
    engine = _lb_engine()
    profile = tg.TrafficProfile(payload_bytes=payload, rate_pps=offered,
                                count=scale, ip_src_dist=tg.ParitySplit(50),
                                seed=_rep_seed(seed, rep))
    before = MonitorCounters()
    stats = fb.run(engine, tg.generate(profile), model)
    _check_conserved(stats)
    after = MonitorCounters()
    for entry_id in range(2):
        snap = engine.counters(0, entry_id)
        after.packets += snap.packets
        after.bytes += snap.bytes
    bw = throughput_bps(before, after, stats.window_ns / 1e9)
    return {"payload": payload, "rep": rep, "achieved_bps": bw,
            "offered_pps": stats.offered_pps,
            "achieved_pps": stats.achieved_pps,
            "dropped_capacity": stats.dropped_capacity,
            "dropped_queue": stats.dropped_queue,
            "slow_path": stats.slow_path_delivered}


def run_rq3(spec: ExperimentSpec, model: fb.CapacityModel, out_dir: str,
            jobs: int = 1):
    payloads = spec.params.get("payloads", RQ3_PAYLOADS)
    tasks = [(p, r, spec.seed, spec.scale, model)
             for p in payloads for r in range(spec.repetitions)]
    results = _run_tasks(tasks, _rq3_task, jobs)

    runs_rows = [["rq3", i, res["payload"], res["offered_pps"],
                  res["achieved_pps"], res["dropped_capacity"],
                  res["dropped_queue"], res["slow_path"], None, None]
                 for i, res in enumerate(results)]
    point_rows = []
    for j in range(0, len(results), spec.repetitions):
        reps = results[j:j + spec.repetitions]
        point_rows.append([reps[0]["payload"],
                           summarize(r["achieved_bps"] for r in reps).median,
                           model.line_rate_bps])
    write_table(out_dir, "rq3", ["payload_bytes", "achieved_bps",
                                 "line_rate_bps"], point_rows)
    write_table(out_dir, "rq3_runs", RUNS_HEADER, runs_rows)
    return point_rows, results


# ---------------------------------------------------------------------------
# RQ4: added latency per path


def _rq4_task(args):
    path, rep, seed, probes, probe_rate, payload, model = args
    engine = None if path == fb.PATH_DIRECT else _lb_engine()
    stream = tg.probe_stream(probes, rate_pps=probe_rate,
                             payload_bytes=payload, seed=_rep_seed(seed, rep))
    stats = fb.run(engine, None, model, path=path, probes=stream)
    if stats.probes_answered != probes:
        raise AssertionError(f"probe loss without overflow: {stats}")
    return {"path": path, "rep": rep,
            "median_rtt_us": stats.median_rtt_us(),
            "stddev_rtt_us": stats.stddev_rtt_us(),
            "payload": payload}


def run_rq4(spec: ExperimentSpec, model: fb.CapacityModel, out_dir: str,
            jobs: int = 1):
    probes = spec.params.get("probes", RQ4_PROBES)
    probe_rate = spec.params.get("probe_rate", RQ4_PROBE_RATE)
    payload = spec.params.get("probe_payload", 22)
    paths = spec.params.get("paths", RQ4_PATHS)
    tasks = [(path, r, spec.seed, probes, probe_rate, payload, model)
             for path in paths for r in range(spec.repetitions)]
    results = _run_tasks(tasks, _rq4_task, jobs)

    medians = {}
    for j in range(0, len(results), spec.repetitions):
        reps = results[j:j + spec.repetitions]
        medians[reps[0]["path"]] = (
            summarize(r["median_rtt_us"] for r in reps).median,
            summarize(r["stddev_rtt_us"] for r in reps).median)
    direct_median = medians.get(fb.PATH_DIRECT, (model.base_rtt_us, 0.0))[0]
    point_rows = [[path, medians[path][0], medians[path][1],
                   medians[path][0] - direct_median]
                  for path in paths if path in medians]
    reduction = None
    if fb.PATH_XENOFLOW in medians and fb.PATH_HOST in medians:
        added_x = medians[fb.PATH_XENOFLOW][0] - direct_median
        added_h = medians[fb.PATH_HOST][0] - direct_median
        if added_h > 0:
            reduction = (added_h - added_x) / added_h * 100.0

    runs_rows = [["rq4", i, res["payload"], 0.0, 0.0, 0, 0, 0,
                  res["median_rtt_us"], res["stddev_rtt_us"]]
                 for i, res in enumerate(results)]
    write_table(out_dir, "rq4", ["path", "median_rtt_us", "stddev_rtt_us",
                                 "added_latency_us"], point_rows)
    write_table(out_dir, "rq4_runs", RUNS_HEADER, runs_rows)
    return point_rows, reduction


# ---------------------------------------------------------------------------
# RQ5: latency under load for several traffic splits


def _split_config(split: str):
    if split == "single":
        return 1, 100
    try:
        even, odd = split.split("/")
        even, odd = int(even), int(odd)
    except ValueError:
        raise ConfigError(f"bad split {split!r}; use 'single' or 'x/y'") from None
    if even + odd != 100:
        raise ConfigError(f"split {split!r} does not sum to 100")
    return 2, even


def _rq5_task(args):
    split, load, rep, seed, scale, probes, payload, model = args
    n_backends, even_percent = _split_config(split)
    engine = _lb_engine(n_backends)
    frame = HEADERS_LEN + payload
    rep_seed = _rep_seed(seed, rep)
    stream = None
    if load > 0:
        rate = load * model.service_fraction(frame, fb.PATH_XENOFLOW)
        profile = tg.TrafficProfile(
            payload_bytes=payload, rate_pps=rate, count=scale,
            ip_src_dist=tg.ParitySplit(even_percent), seed=rep_seed)
        stream = tg.generate(profile)
        probe = tg.probe_stream(probes, window_ns=stream.window_end_ns,
                                payload_bytes=payload, seed=rep_seed + 1)
    else:
        probe = tg.probe_stream(probes, rate_pps=RQ4_PROBE_RATE,
                                payload_bytes=payload, seed=rep_seed + 1)
    stats = fb.run(engine, stream, model, path=fb.PATH_XENOFLOW, probes=probe)
    _check_conserved(stats)
    if stats.probes_answered != probes:
        raise AssertionError(f"probe loss without overflow: {stats}")
    return {"split": split, "load": load, "rep": rep,
            "background_pps": stats.offered_pps,
            "median_rtt_us": stats.median_rtt_us(),
            "stddev_rtt_us": stats.stddev_rtt_us(),
            "achieved_pps": stats.achieved_pps,
            "dropped_capacity": stats.dropped_capacity,
            "dropped_queue": stats.dropped_queue,
            "slow_path": stats.slow_path_delivered,
            "payload": payload}


def run_rq5(spec: ExperimentSpec, model: fb.CapacityModel, out_dir: str,
            jobs: int = 1):
    splits = spec.params.get("splits", RQ5_SPLITS)
    loads = [Fraction(x) for x in spec.params.get("load_fractions", RQ5_LOADS)]
    probes = spec.params.get("probes", RQ4_PROBES)
    payload = spec.params.get("payload", 22)
    tasks = [(s, ld, r, spec.seed, spec.scale, probes, payload, model)
             for s in splits for ld in loads for r in range(spec.repetitions)]
    results = _run_tasks(tasks, _rq5_task, jobs)

    runs_rows = [["rq5", i, res["payload"], res["background_pps"],
                  res["achieved_pps"], res["dropped_capacity"],
                  res["dropped_queue"], res["slow_path"],
                  res["median_rtt_us"], res["stddev_rtt_us"]]
                 for i, res in enumerate(results)]
    point_rows = []
    for j in range(0, len(results), spec.repetitions):
        reps = results[j:j + spec.repetitions]
        point_rows.append([reps[0]["split"], reps[0]["background_pps"],
                           summarize(r["median_rtt_us"] for r in reps).median])
    write_table(out_dir, "rq5", ["split", "background_pps", "median_rtt_us"],
                point_rows)
    write_table(out_dir, "rq5_runs", RUNS_HEADER, runs_rows)
    return point_rows, results


RUNNERS = {"rq2": run_rq2, "rq3": run_rq3, "rq4": run_rq4, "rq5": run_rq5}
