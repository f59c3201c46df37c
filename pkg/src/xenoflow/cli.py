"""Command-line harness.

    xenoflow rq2|rq3|rq4|rq5 --config FILE --out DIR [--scale N] [--seed S]
                             [--reps R] [--calibration CSV] [--jobs J]
    xenoflow run --pipeline FILE [--out DIR] [--scale N] [--seed S] [--pcap K]

XENOFLOW_OUT sets the default output directory.  Exit code 0 on success,
nonzero with a diagnostic on configuration errors.
"""

import argparse
import json
import os
import sys

from . import experiments as xp
from . import fabric as fb
from . import pipeline_json
from . import traffic as tg
from .engine import EngineError


def _default_out() -> str:
    return os.environ.get("XENOFLOW_OUT", "xenoflow-out")


def _add_common(parser):
    parser.add_argument("--config", help="JSON file with sweep parameters")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--scale", type=int, default=1_000_000,
                        help="simulated packets per sweep point")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--reps", type=int, default=3,
                        help="repetitions per point (>= 3)")
    parser.add_argument("--calibration",
                        help="frame_bytes,pps_cap CSV replacing the default table")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker processes for sweep points")


def _load_config(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise xp.ConfigError("config must be a JSON object")
    return doc


def _model(args, config: dict) -> fb.CapacityModel:
    overrides = config.get("capacity", {})
    if args.calibration:
        return fb.CapacityModel.from_calibration_csv(args.calibration,
                                                     **overrides)
    if overrides:
        return fb.CapacityModel(**overrides)
    return fb.CapacityModel()


def _run_experiment(kind: str, args) -> int:
    config = _load_config(args.config)
    params = {k: v for k, v in config.items() if k != "capacity"}
    spec = xp.ExperimentSpec(
        kind=kind,
        repetitions=int(params.pop("repetitions", args.reps)),
        seed=int(params.pop("seed", args.seed)),
        scale=int(params.pop("scale", args.scale)),
        params=params)
    out_dir = args.out or _default_out()
    model = _model(args, config)
    result = xp.RUNNERS[kind](spec, model, out_dir, jobs=args.jobs)
    if kind == "rq4":
        rows, reduction = result
        for row in rows:
            print(f"{row[0]}: median {row[1]:.3f} us (added {row[3]:.3f} us)")
        if reduction is not None:
            print(f"latency reduction: {reduction:.2f}%")
    else:
        rows = result[0]
        print(f"{kind}: wrote {len(rows)} sweep points to {out_dir}")
    return 0


def _profile_from_doc(doc: dict) -> tg.TrafficProfile:
    kwargs = dict(doc)
    dist = kwargs.pop("ip_src_dist", None)
    if dist is not None:
        if "uniform" in dist:
            kwargs["ip_src_dist"] = tg.UniformIPs(**dist["uniform"])
        elif "parity_split" in dist:
            kwargs["ip_src_dist"] = tg.ParitySplit(**dist["parity_split"])
        else:
            raise xp.ConfigError(f"unknown ip_src_dist {dist!r}")
    return tg.TrafficProfile(**kwargs)


def _run_pipeline(args) -> int:
    with open(args.pipeline) as fh:
        doc = json.load(fh)
    fabric = fb.standard_testbed(wired=doc.get("wired", True))
    engine, _ = pipeline_json.build_from_doc(
        doc, port_resolver=lambda a: a if isinstance(a, int)
        else fabric.port(a).id)
    model = fb.CapacityModel(**doc.get("capacity", {}))
    tdoc = dict(doc.get("traffic", {"payload_bytes": 22,
                                    "rate_pps": 1_000_000}))
    tdoc.setdefault("count", args.scale)
    tdoc.setdefault("seed", args.seed)
    profile = _profile_from_doc(tdoc)
    stream = tg.generate(profile)
    if args.pcap:
        tg.dump_pcap(stream, args.pcap_file or "pipeline.pcap", args.pcap)
        print(f"wrote {min(args.pcap, len(stream))} packets to "
              f"{args.pcap_file or 'pipeline.pcap'}")
    stats = fb.run(engine, stream, model, fabric,
                   path=doc.get("path", fb.PATH_XENOFLOW),
                   ingress=doc.get("ingress", "pf1hpf"))
    print(f"offered={stats.offered} achieved={stats.achieved} "
          f"dropped_capacity={stats.dropped_capacity} "
          f"dropped_queue={stats.dropped_queue} "
          f"slow_path={stats.slow_path_delivered} "
          f"residual={stats.residual_in_queue} "
          f"dropped_by_rule={stats.dropped_by_rule}")
    if args.out:
        xp.write_table(args.out, "run_runs", xp.RUNS_HEADER,
                       [["run", 0, profile.payload_len(), stats.offered_pps,
                         stats.achieved_pps, stats.dropped_capacity,
                         stats.dropped_queue, stats.slow_path_delivered,
                         stats.median_rtt_us(), stats.stddev_rtt_us()]])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xenoflow",
        description="eSwitch flow-pipe emulator and benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in ("rq2", "rq3", "rq4", "rq5"):
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        _add_common(p)
    runp = sub.add_parser("run", help="run a custom pipeline document")
    runp.add_argument("--pipeline", required=True, help="pipeline JSON file")
    runp.add_argument("--out", default=None)
    runp.add_argument("--scale", type=int, default=100_000)
    runp.add_argument("--seed", type=int, default=0)
    runp.add_argument("--pcap", type=int, default=0,
                      help="dump the first K generated packets")
    runp.add_argument("--pcap-file", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run_pipeline(args)
        return _run_experiment(args.command, args)
    except (EngineError, xp.ConfigError, fb.WiringError, ValueError,
            OSError, json.JSONDecodeError) as exc:
        print(f"xenoflow: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
