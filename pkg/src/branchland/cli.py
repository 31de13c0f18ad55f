"""Command line front end.

Exit codes: 0 on success, 1 when a program faults, a scenario reports
BROKEN, or an input fails to assemble, 2 for usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import vm
from .asm import AsmError, parse_program
from .attacks import SCENARIOS, applicable_scenarios, run_scenario
from .cycles import MODELS
from .evaluate import (
    POLICY_KINDS,
    CorpusError,
    attack_matrix,
    build_policy,
    evaluate_corpus,
    list_programs,
    to_csv,
)
from .instrument import InstrumentError, instrument, size_report
from .ir import serialize_program
from .policy import Granularity, PolicyError, ec_report

_GRANULARITIES = ("module", "function", "basic_block")


def _read_program(path: str):
    try:
        text = Path(path).read_text()
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return None
    try:
        return parse_program(text)
    except AsmError as e:
        print(f"error: {path}: {e}", file=sys.stderr)
        return None


def _granularity(args) -> Granularity | None:
    if args.granularity is None:
        return None
    return Granularity(args.granularity)


def _cmd_assemble(args) -> int:
    p = _read_program(args.program)
    if p is None:
        return 1
    out = serialize_program(p)
    if args.out:
        Path(args.out).write_text(out)
    else:
        sys.stdout.write(out)
    return 0


def _cmd_instrument(args) -> int:
    p = _read_program(args.program)
    if p is None:
        return 1
    try:
        sm, pol = build_policy(p, args.policy, _granularity(args))
        inst = instrument(p, sm, pol, args.fp, args.seed1, args.seed2)
    except (PolicyError, InstrumentError, AsmError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    text = serialize_program(inst.program)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    report = size_report(p, inst).to_json()
    report["policy"] = args.policy
    print(json.dumps(report, indent=2), file=sys.stderr)
    return 0


def _cmd_run(args) -> int:
    p = _read_program(args.program)
    if p is None:
        return 1
    try:
        m = vm.load(p, cfi=args.cfi)
    except (vm.VmError, AsmError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    trace = (lambda line: print(line, file=sys.stderr)) if args.trace else None
    try:
        rep = vm.run(m, max_steps=args.max_steps, trace=trace)
    except vm.StepBudgetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.json:
        print(json.dumps(rep.to_json(), indent=2))
    else:
        for v in rep.prints:
            print(v)
    if rep.fault is not None:
        print(
            f"fault: {rep.fault.kind} at 0x{rep.fault.pc_at_fault:x}", file=sys.stderr
        )
        return 1
    return 0


def _cmd_attack(args) -> int:
    p = _read_program(args.program)
    if p is None:
        return 1
    kinds = POLICY_KINDS if args.policy == "both" else (args.policy,)
    results = []
    for kind in kinds:
        applicable = applicable_scenarios(p, kind)
        if args.scenario == "all":
            chosen = applicable
        else:
            if args.scenario not in applicable:
                print(
                    f"error: scenario {args.scenario} does not apply to this "
                    f"program under the {kind} policy",
                    file=sys.stderr,
                )
                return 2
            chosen = [args.scenario]
        try:
            sm, pol = build_policy(p, kind, _granularity(args))
            inst = instrument(p, sm, pol, args.fp, args.seed1, args.seed2)
        except (PolicyError, InstrumentError) as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
        for scen in chosen:
            results.append(
                run_scenario(
                    scen, inst, kind,
                    program_name=Path(args.program).name,
                    max_steps=args.max_steps,
                )
            )
    if args.json:
        print(json.dumps([r.to_json() for r in results], indent=2))
    else:
        for r in results:
            print(f"{r.policy_kind:4s} {r.scenario:22s} {r.verdict:8s} {r.detail}")
    return 1 if any(r.verdict == "BROKEN" for r in results) else 0


def _cmd_eval(args) -> int:
    names = args.programs.split(",") if args.programs else None
    model_names = args.models.split(",") if args.models else None
    try:
        report = evaluate_corpus(
            names,
            args.corpus,
            fp_target=args.fp,
            seed1=args.seed1,
            seed2=args.seed2,
            model_names=model_names,
            max_steps=args.max_steps,
        )
    except CorpusError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    if args.csv:
        Path(args.csv).write_text(to_csv(report))
    if args.json:
        print(json.dumps(report, indent=2))
        return 0
    s = report["summary"]
    print(f"programs: {s['programs']}  fp_target: {report['fp_target']}")
    print("runtime overhead % (mean / median / max):")
    for mn in report["models"]:
        for kind in POLICY_KINDS:
            st = s["overhead_pct"][mn][kind]
            print(
                f"  {mn:6s} {kind:4s} {st['mean']:7.2f} / {st['median']:7.2f} / {st['max']:7.2f}"
            )
    print("text overhead % (mean / median / max):")
    for kind in POLICY_KINDS:
        st = s["text_overhead_pct"][kind]
        print(
            f"  {kind:4s} {st['mean']:7.2f} / {st['median']:7.2f} / {st['max']:7.2f}"
        )
    ec = s["ec_reduction_pct"]
    print(
        f"call-site class reduction % vs type policy: "
        f"{ec['mean']:.2f} / {ec['median']:.2f} / {ec['max']:.2f}"
    )
    return 0


def _cmd_ec(args) -> int:
    p = _read_program(args.program)
    if p is None:
        return 1
    try:
        _, func_pol = build_policy(p, "func", _granularity(args))
        _, cfg_pol = build_policy(p, "cfg", _granularity(args))
    except PolicyError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    out = {
        "func": ec_report(func_pol).to_json(),
        "cfg": ec_report(cfg_pol, baseline=func_pol).to_json(),
    }
    print(json.dumps(out, indent=2))
    return 0


def _add_seeds(sp) -> None:
    sp.add_argument("--fp", type=float, default=1e-3, help="target false-positive rate")
    sp.add_argument("--seed1", type=int, default=0)
    sp.add_argument("--seed2", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="brl")
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("assemble", help="parse, validate, and reprint a program")
    sp.add_argument("program")
    sp.add_argument("-o", "--out")
    sp.set_defaults(fn=_cmd_assemble)

    sp = sub.add_parser("instrument", help="insert checks and filter metadata")
    sp.add_argument("program")
    sp.add_argument("--policy", choices=POLICY_KINDS, required=True)
    sp.add_argument("--granularity", choices=_GRANULARITIES)
    _add_seeds(sp)
    sp.add_argument("-o", "--out")
    sp.set_defaults(fn=_cmd_instrument)

    sp = sub.add_parser("run", help="execute a program")
    sp.add_argument("program")
    sp.add_argument("--trace", action="store_true", help="print one line per instruction to stderr")
    sp.add_argument("--max-steps", type=int, default=10**8)
    sp.add_argument("--json", action="store_true", help="print the full run report")
    cf = sp.add_mutually_exclusive_group()
    cf.add_argument("--cfi", dest="cfi", action="store_true", default=None)
    cf.add_argument("--no-cfi", dest="cfi", action="store_false")
    sp.set_defaults(fn=_cmd_run)

    sp = sub.add_parser("attack", help="run an attack scenario against a program")
    sp.add_argument("program")
    sp.add_argument("--scenario", choices=SCENARIOS + ("all",), default="all")
    sp.add_argument("--policy", choices=POLICY_KINDS + ("both",), default="both")
    sp.add_argument("--granularity", choices=_GRANULARITIES)
    _add_seeds(sp)
    sp.add_argument("--max-steps", type=int, default=10**6)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=_cmd_attack)

    sp = sub.add_parser("eval", help="evaluate the benchmark corpus")
    sp.add_argument("--corpus", help="directory of .brl.s programs")
    sp.add_argument("--programs", help="comma-separated subset")
    sp.add_argument("--models", help="comma-separated cycle models (default all)")
    _add_seeds(sp)
    sp.add_argument("--max-steps", type=int, default=10**8)
    sp.add_argument("--out", help="write the aggregate JSON report here")
    sp.add_argument("--csv", help="write the per-program CSV here")
    sp.add_argument("--json", action="store_true", help="print the JSON report")
    sp.set_defaults(fn=_cmd_eval)

    sp = sub.add_parser("ec", help="call-site class sizes under both policies")
    sp.add_argument("program")
    sp.add_argument("--granularity", choices=_GRANULARITIES)
    sp.set_defaults(fn=_cmd_ec)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
