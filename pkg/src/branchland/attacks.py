"""Attack scenarios against instrumented programs.

Corpus programs that want to be attackable follow three symbol
conventions: a writable pointer slot named handler_slot, a writable
dispatcher table named dispatch_table, and a function attacker_goal whose
body executes the sentinel ecall (code 99).  A scenario wins (verdict
BROKEN) exactly when that sentinel commits; anything other than the
scenario's expected block or rejection is also reported BROKEN so a
miswired scenario cannot pass silently.

The dispatcher-chain scenario only makes sense against a policy that
protects indirect jumps, so its matrix entry pins it to cfg.
"""

from __future__ import annotations

from dataclasses import dataclass

from branchland import vm
from branchland.instrument import META_SYMBOL, InstrumentedProgram
from branchland.ir import Program
from branchland.vm import FaultRecord

SENTINEL_ECALL = 99

SCENARIOS = (
    "fn_ptr_overwrite",
    "jop_dispatcher_chain",
    "bld_bypass",
    "brstate_replay",
    "metadata_tamper",
)

BLOCK_KINDS = {
    "fn_ptr_overwrite": ("cfp_missing_landing", "cfp_unauthorized"),
    "jop_dispatcher_chain": ("cfp_missing_landing", "cfp_unauthorized"),
    "bld_bypass": ("cfp_invalid",),
    "brstate_replay": ("cfp_invalid",),
}


@dataclass
class AttackResult:
    scenario: str
    program: str
    policy_kind: str
    verdict: str  # "blocked" | "rejected" | "BROKEN"
    fault: FaultRecord | None
    detail: str

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "program": self.program,
            "policy_kind": self.policy_kind,
            "verdict": self.verdict,
            "fault": self.fault.to_json() if self.fault else None,
            "detail": self.detail,
        }


def applicable_scenarios(p: Program, policy_kind: str) -> list[str]:
    """Which scenarios this program supports under the given policy kind.

    Applicability tracks what the policy will actually protect: the
    type-based kind leaves jump-only programs without a single landing
    pad, so bypass and replay have nothing to aim at there.
    """
    out = []
    has_goal = p.function("attacker_goal") is not None
    sites = [
        ins.indirect
        for f in p.functions
        for b in f.blocks
        for ins in b.instructions
        if ins.indirect is not None
    ]
    has_call = any(s.kind == "indirect_call" for s in sites)
    has_listed = any(s.possible_targets for s in sites)
    has_taken = any(f.address_taken for f in p.functions)
    if has_goal and p.data_blob("handler_slot") is not None and has_call:
        out.append("fn_ptr_overwrite")
    if has_goal and p.data_blob("dispatch_table") is not None and policy_kind == "cfg":
        out.append("jop_dispatcher_chain")
    has_landings = has_taken if policy_kind == "func" else (has_taken or has_listed)
    if has_landings:
        out.append("bld_bypass")
    passes_expected = (has_call and has_taken) if policy_kind == "func" else has_listed
    if passes_expected:
        out.append("brstate_replay")
    out.append("metadata_tamper")
    return out


def _broken(scenario, name, kind, fault, why) -> AttackResult:
    return AttackResult(scenario, name, kind, "BROKEN", fault, why)


def run_scenario(
    scenario: str,
    inst: InstrumentedProgram,
    policy_kind: str,
    program_name: str = "",
    max_steps: int = 10**6,
) -> AttackResult:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    name = program_name or inst.program.entry

    if scenario == "metadata_tamper":
        m = vm.load(inst)
        base = m.symbols.get(META_SYMBOL)
        if base is None:
            return _broken(scenario, name, policy_kind, None, "no metadata blob mapped")
        landed = [
            m.corrupt(base + off, 0xFF, width=1)
            for off in (0, 6, max(0, inst.program.data_blob(META_SYMBOL).byte_size - 1))
        ]
        if any(landed):
            return _broken(
                scenario, name, policy_kind, None, "a write to the metadata image landed"
            )
        return AttackResult(
            scenario, name, policy_kind, "rejected", None,
            "writes to the read-only metadata image were refused",
        )

    if scenario in ("fn_ptr_overwrite", "jop_dispatcher_chain"):
        slot_sym = "handler_slot" if scenario == "fn_ptr_overwrite" else "dispatch_table"
        m = vm.load(inst)
        goal = m.symbols.get("attacker_goal")
        slot = m.symbols.get(slot_sym)
        if goal is None or slot is None:
            return _broken(scenario, name, policy_kind, None, f"missing {slot_sym}/attacker_goal")
        blob = inst.program.data_blob(slot_sym)
        entries = 1 if scenario == "fn_ptr_overwrite" else max(1, blob.byte_size // 8)
        for i in range(entries):
            if not m.corrupt(slot + 8 * i, goal):
                return _broken(scenario, name, policy_kind, None, f"{slot_sym} not writable")
        rep = vm.run(m, max_steps=max_steps)
        if SENTINEL_ECALL in rep.ecall_codes:
            return _broken(scenario, name, policy_kind, rep.fault, "sentinel ecall reached")
        if rep.fault is None:
            return _broken(scenario, name, policy_kind, None, "corrupted run finished cleanly")
        if rep.fault.kind not in BLOCK_KINDS[scenario]:
            return _broken(
                scenario, name, policy_kind, rep.fault,
                f"unexpected fault kind {rep.fault.kind}",
            )
        if rep.fault.pc_at_fault != goal:
            return _broken(
                scenario, name, policy_kind, rep.fault,
                "fault did not happen at the first corrupted transfer",
            )
        return AttackResult(
            scenario, name, policy_kind, "blocked", rep.fault,
            f"{rep.fault.kind} at the first corrupted transfer",
        )

    if scenario == "bld_bypass":
        m = vm.load(inst)
        if not inst.landing_index:
            return _broken(scenario, name, policy_kind, None, "no protected landings")
        target = min(inst.landing_index, key=inst.landing_index.get)
        m.pc = m.symbols[target]
        m.last_transfer = vm.INDIRECT
        rep = vm.run(m, max_steps=max_steps)
        if SENTINEL_ECALL in rep.ecall_codes:
            return _broken(scenario, name, policy_kind, rep.fault, "sentinel ecall reached")
        if rep.fault is None or rep.fault.kind != "cfp_invalid":
            return _broken(scenario, name, policy_kind, rep.fault, "expected cfp_invalid")
        return AttackResult(
            scenario, name, policy_kind, "blocked", rep.fault,
            f"unarmed landing at {target} faulted cfp_invalid",
        )

    # brstate_replay: let one authorization pass legitimately, then try to
    # spend it a second time at another landing site.
    m = vm.load(inst)
    steps = 0
    while m.brl_pass == 0 and not m.halted and steps < max_steps:
        m.step()
        steps += 1
    if m.brl_pass == 0:
        return _broken(scenario, name, policy_kind, m.fault, "no legitimate pass occurred")
    if m.halted:
        return _broken(scenario, name, policy_kind, m.fault, "program ended at first pass")
    target = min(inst.landing_index, key=inst.landing_index.get)
    m.pc = m.symbols[target]
    m.last_transfer = vm.INDIRECT
    while not m.halted and steps < 2 * max_steps:
        m.step()
        steps += 1
    if SENTINEL_ECALL in m.ecall_codes:
        return _broken(scenario, name, policy_kind, m.fault, "sentinel ecall reached")
    if m.fault is None or m.fault.kind != "cfp_invalid":
        return _broken(scenario, name, policy_kind, m.fault, "expected cfp_invalid")
    return AttackResult(
        scenario, name, policy_kind, "blocked", m.fault,
        "replayed authorization faulted cfp_invalid",
    )
