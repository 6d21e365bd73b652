"""Command line entry point: ``agreemesh <subcommand> ...``.

Exit codes: 0 on success, 1 when a theorem check fails, 2 on bad input.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness
from .agents import PriorTable
from .calibration import audit_conversation_calibration, audit_decision_calibration
from .core import TranscriptError, dumps_transcript, read_transcript
from .protocol import ConfigError, ProtocolConfig, run_experiment
from .utility import UtilitySpec

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _print_checks(checks, as_json: bool) -> int:
    if as_json:
        print(json.dumps([c.to_dict() for c in checks], indent=2))
    else:
        for c in checks:
            print(c.line())
    return EXIT_FAILED if any(c.failed for c in checks) else EXIT_OK


def cmd_simulate(args) -> int:
    config = ProtocolConfig.load(args.config)
    transcript = run_experiment(config)
    _write(args.out, dumps_transcript(transcript))
    if args.metrics:
        summary = harness.summarize(transcript)
        with open(args.metrics + ".json", "w", encoding="utf-8") as fh:
            json.dump(summary.to_dict(), fh, indent=2)
            fh.write("\n")
        with open(args.metrics + ".csv", "w", encoding="utf-8") as fh:
            fh.write(summary.round_csv())
    return EXIT_OK


def cmd_audit(args) -> int:
    transcript = read_transcript(args.transcript)
    if args.mode == "decision":
        if transcript.setting.utility is None:
            raise ConfigError("decision audit needs an action transcript with a utility")
        report = audit_decision_calibration(transcript, args.side,
                                            UtilitySpec.from_dict(transcript.setting.utility))
    else:
        g = args.g if args.g is not None else max(transcript.T, 1) ** (-1.0 / 3.0)
        report = audit_conversation_calibration(transcript, args.side, g, mode=args.mode)
    _write(args.out, report.to_json() + "\n" if args.json else report.to_csv())
    return EXIT_OK


def cmd_bayes(args) -> int:
    prior = PriorTable.load(args.prior)
    utility = None
    theorem = "bayes"
    if args.setting == "action":
        utility = UtilitySpec.coordinate_pick(prior.d)
        theorem = "bayes-action"
    lengths = harness.bayes_one_shot(prior, args.eps, args.instances, args.seed, utility,
                                     args.max_rounds)
    formula, bound = harness.corollary_bound(theorem, args.eps, args.delta, prior.d)
    frac = float(np.mean(lengths > bound))
    check = harness.TheoremCheck(
        theorem, f"P[length > {formula}] <= delta",
        {"eps": args.eps, "delta": args.delta, "d": prior.d, "instances": args.instances,
         "bound_rounds": bound},
        frac, args.delta, harness.PASS if frac <= args.delta else harness.FAIL,
        f"max length {int(lengths.max())}")
    return _print_checks([check], args.json)


def cmd_report(args) -> int:
    transcript = read_transcript(args.transcript)
    checks = harness.report_checks(transcript, args.check, args.eps, args.delta,
                                   args.max_rounds)
    return _print_checks(checks, args.json)


def cmd_gen_prior(args) -> int:
    rng = np.random.default_rng(args.seed)
    prior = PriorTable.generate(args.worlds, rng, d=args.d, symbols=args.symbols,
                                outcome=args.outcome)
    _write(args.out, prior.dumps() + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="agreemesh", description="Simulate and audit agreement protocols.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a protocol config and write the transcript")
    s.add_argument("config")
    s.add_argument("--out", default="-", help="transcript path (default stdout)")
    s.add_argument("--metrics", help="prefix for <prefix>.json and <prefix>.csv summaries")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("audit", help="calibration report for one side of a transcript")
    a.add_argument("transcript")
    a.add_argument("--side", required=True, choices=["model", "human"])
    a.add_argument("--mode", default="scalar", choices=["scalar", "marginal", "decision"])
    a.add_argument("--g", type=float, help="bucket width (default T^-1/3)")
    a.add_argument("--json", action="store_true")
    a.add_argument("--out", default="-")
    a.set_defaults(func=cmd_audit)

    b = sub.add_parser("bayes", help="one-shot conversations between Bayesian learners")
    b.add_argument("prior")
    b.add_argument("--eps", type=float, required=True)
    b.add_argument("--delta", type=float, required=True)
    b.add_argument("--instances", type=int, default=500)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--setting", default="full", choices=["full", "action"])
    b.add_argument("--max-rounds", type=int, default=10_000)
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_bayes)

    r = sub.add_parser("report", help="theorem checks over a transcript")
    r.add_argument("transcript")
    r.add_argument("--check", required=True,
                   choices=list(harness.THEOREMS) + list(harness.ALIASES))
    r.add_argument("--eps", type=float, required=True)
    r.add_argument("--delta", type=float, required=True)
    r.add_argument("--max-rounds", type=int, help="length charged to non-agreement days")
    r.add_argument("--json", action="store_true")
    r.set_defaults(func=cmd_report)

    g = sub.add_parser("gen-prior", help="write a random finite prior as JSON")
    g.add_argument("--worlds", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--d", type=int, default=1)
    g.add_argument("--symbols", type=int, default=4)
    g.add_argument("--outcome", default="binary", choices=["binary", "onehot"])
    g.add_argument("--out", default="-")
    g.set_defaults(func=cmd_gen_prior)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("eps", "delta"):
        val = getattr(args, name, None)
        if val is not None and not (0 < val < 1 if name == "delta" else val > 0):
            print(f"agreemesh: error: --{name} out of range", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, TranscriptError, ValueError, KeyError, OSError) as exc:
        print(f"agreemesh: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
