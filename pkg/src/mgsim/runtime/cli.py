"""Command line front end: ``mgsim run|estimate|linerate|gapcheck``."""
import argparse
import os
import sys

from ..errors import ConfigInvalid, MgsimError, UnknownOperation
from ..measure.costs import estimate_cycles, predict_throughput
from ..ratectl import describe_gap
from ..wireclock import LINE_RATES, line_rate_pps
from . import engine, scenario
from .pcap import export_pcap

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _rate(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v not in LINE_RATES:
        raise argparse.ArgumentTypeError(f"rate must be one of {', '.join(f'{r:g}' for r in LINE_RATES)}")
    return int(v)


def build_parser():
    p = argparse.ArgumentParser(prog="mgsim", description="Simulated packet generator and latency tester.")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    r.add_argument("--seed", type=lambda s: int(s, 0), help="overrides MGSIM_SEED and the scenario's seed")
    r.add_argument("--out", help="directory for report.json, CSV files and captures")
    r.add_argument("--format", choices=("csv", "plain"), default="plain", help="counter output format")
    r.add_argument("--with-fcs", action="store_true", help="keep the FCS in pcap captures")
    r.add_argument("--workers", type=int, default=1, help="threads for slave tasks")
    r.add_argument("--json", action="store_true", help="print the run report as JSON instead of counter lines")

    e = sub.add_parser("estimate", help="cycles per packet from the cost model")
    e.add_argument("ops", help="comma-separated operations or preset name")
    e.add_argument("--freq", type=float, default=2.4, help="core clock in GHz")

    lr = sub.add_parser("linerate", help="maximum packet rate for a frame size")
    lr.add_argument("--frame", type=int, required=True, help="frame length in bytes including FCS")
    lr.add_argument("--rate", type=_rate, default=10**10, help="link rate in bit/s")

    g = sub.add_parser("gapcheck", help="can a gap be realized with filler frames?")
    g.add_argument("--gap-ns", type=float, required=True)
    g.add_argument("--rate", type=_rate, default=10**10)
    return p


def cmd_run(args, out, err):
    sc = scenario.load(args.scenario)
    seed = scenario.effective_seed(sc.seed, args.seed)
    report = engine.launch(sc, seed=seed, workers=args.workers)
    for ctr in report.counters.values():
        ctr.fmt = args.format
        if not args.json:
            out.write(ctr.format())
    if args.json:
        out.write(report.to_json())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "report.json"), report.to_json())
        ext = "csv" if args.format == "csv" else "txt"
        for name, ctr in report.counters.items():
            _write(os.path.join(args.out, f"{name}.{ext}"), ctr.format())
        for name, hist in report.histograms.items():
            _write(os.path.join(args.out, f"{name}-hist.csv"), hist.to_csv())
        for name, summary in report.data["tasks"].items():
            if summary["kind"] == "latency" and summary["samples"]:
                _write(os.path.join(args.out, f"{name}-hist.csv"), engine.latency_histogram(summary).to_csv())
        for name, records in report.captures.items():
            export_pcap(records, os.path.join(args.out, f"{name}.pcap"), with_fcs=args.with_fcs)
    return EXIT_OK


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def cmd_estimate(args, out, err):
    ops = [o for o in args.ops.split(",") if o.strip()]
    cycles = estimate_cycles(ops)
    tp = predict_throughput(cycles, args.freq * 1e9)
    out.write(f"{cycles} cycles/pkt, {tp.mpps:.2f} Mpps (range {tp.low:.2f}-{tp.high:.2f}) at {args.freq:g} GHz\n")
    return EXIT_OK


def cmd_linerate(args, out, err):
    out.write(f"{line_rate_pps(args.frame, args.rate):.0f} pps\n")
    return EXIT_OK


def cmd_gapcheck(args, out, err):
    _, text = describe_gap(args.gap_ns, args.rate)
    out.write(text + "\n")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "estimate": cmd_estimate, "linerate": cmd_linerate, "gapcheck": cmd_gapcheck}


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    try:
        return COMMANDS[args.cmd](args, out, err)
    except (ConfigInvalid, UnknownOperation) as e:
        err.write(f"mgsim: config error: {e}\n")
        return EXIT_CONFIG
    except (MgsimError, OSError, ValueError) as e:
        err.write(f"mgsim: error: {e}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
