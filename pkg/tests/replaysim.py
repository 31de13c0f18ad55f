"""Reference model for the authorization register, plus a driver that pits
it against the real machine on randomly generated instruction sequences.

The model is ~60 lines of plain state logic written straight from the
documented rules: bld arms exactly the next transfer, an armed indirect
transfer must hit a landing marker, the marker consumes the authorization
before looking anything up, a consumed or never-staged authorization
faults, traps either preserve or clear the register.  The driver builds a
real program around each random action list, runs it on the interpreter,
and checks the machine against the model step by step: opcode, landing
outcome, fault kind, and the valid flag after every instruction.

Membership answers come from the packed filters themselves, so the two
sides can only disagree about state handling, never about hash math
(which has its own oracle tests).
"""

from __future__ import annotations

import random

from branchland import bloom, vm
from branchland.ir import (
    BasicBlock,
    DataBlob,
    DataItem,
    Function,
    IndirectSiteInfo,
    Instruction,
    Program,
    TypeSignature,
)

SID_OK = 10
SID_BAD = 11
SID_BIG = (1 << 31) - 1
SIDS = (SID_OK, SID_OK, SID_BAD, SID_BIG)  # biased so runs survive a while

T_OK = 1  # allows SID_OK only
T_EMPTY = 2  # empty source set: rejects everything
T_UNKNOWN = 3  # no filter in the image at all

_IMAGE = bloom.build_image({T_OK: {SID_OK}, T_EMPTY: set()}, target_fp=1e-3,
                           seed1=7, seed2=9)
K = _IMAGE.k

MEMBER: dict[tuple[int, int], bool] = {}
for _t in (T_OK, T_EMPTY):
    _f = _IMAGE.filter_for(_t)
    for _s in (SID_OK, SID_BAD, SID_BIG):
        MEMBER[(_t, _s)] = bloom.query(_f, _s)
assert MEMBER[(T_OK, SID_OK)] is True


def _void() -> TypeSignature:
    return TypeSignature("void", ())


def _ret() -> Instruction:
    return Instruction("jalr", rd=0, rs1=1, imm=0)


def _landing(name: str, t: int) -> Function:
    return Function(name, _void(), [BasicBlock("entry", [Instruction("brl", imm=t), _ret()])])


_PROLOGUE = [
    _landing("land_ok", T_OK),
    _landing("land_empty", T_EMPTY),
    _landing("land_unknown", T_UNKNOWN),
    Function("land_plain", _void(), [
        BasicBlock("entry", [Instruction("addi", rd=6, rs1=6, imm=0), _ret()])
    ]),
]
_META_BLOB = DataBlob("__brl_meta",
                      [DataItem("byte", b) for b in bloom.serialize_image(_IMAGE)])

# dest name -> (function, brl target id or None)
DESTS = {
    "ok": ("land_ok", T_OK),
    "empty": ("land_empty", T_EMPTY),
    "unknown": ("land_unknown", T_UNKNOWN),
    "plain": ("land_plain", None),
}


class Ref:
    """The authorization register state machine, nothing else."""

    def __init__(self):
        self.valid = 0
        self.sid = 0
        self.prev_bld = False
        self.last = vm.NONE
        self.passes = self.skips = self.fails = self.probes = 0

    def commit(self, *, is_bld=False, is_ind_jalr=False, last=vm.NONE):
        if is_bld:
            self.prev_bld = True
        else:
            if self.prev_bld and not is_ind_jalr:
                self.valid = 0  # the arming window is one instruction wide
            self.prev_bld = False
        self.last = last


class _Builder:
    """Grows the program text and the expected step stream in lockstep.

    Stream entries are (op, brl_outcome, fault_kind, valid_after); a trap
    pseudo-entry is ("trap", policy, None, valid_after).  After a
    predicted fault only program text grows, since nothing else runs.
    """

    def __init__(self):
        self.ref = Ref()
        self.stream: list[tuple] = []
        self.blocks: list[BasicBlock] = []
        self._cur: list[Instruction] = []
        self.done = False
        self.faulted = False

    # -- program text ---------------------------------------------------

    def _ins(self, ins: Instruction, ends_block: bool = False) -> None:
        self._cur.append(ins)
        if ends_block:
            self._close()

    def _close(self) -> None:
        if self._cur:
            self.blocks.append(BasicBlock(f"b{len(self.blocks)}", self._cur))
            self._cur = []

    # -- expected execution ---------------------------------------------

    def _emit(self, op, outcome=None, fault=None):
        self.stream.append((op, outcome, fault, self.ref.valid))
        if fault is not None:
            self.done = True
            self.faulted = True

    def exec_plain(self, op: str) -> None:
        if not self.done:
            self.ref.commit()
            self._emit(op)

    def exec_direct_jump(self, op: str) -> None:
        if not self.done:
            self.ref.commit(last=vm.DIRECT)
            self._emit(op)

    def exec_brl(self, t: int) -> None:
        if self.done:
            return
        r = self.ref
        if r.last != vm.INDIRECT:
            r.skips += 1
            r.commit()
            self._emit("brl", "SKIP")
            return
        if not r.valid:
            r.fails += 1
            self._emit("brl", "FAIL", "cfp_invalid")
            return
        staged = r.sid
        r.valid = 0  # consumed before any lookup, pass or fail
        if t == T_UNKNOWN:
            r.fails += 1
            self._emit("brl", "FAIL", "cfp_unauthorized")
            return
        r.probes += K
        if MEMBER[(t, staged)]:
            r.passes += 1
            r.commit()
            self._emit("brl", "PASS")
        else:
            r.fails += 1
            self._emit("brl", "FAIL", "cfp_unauthorized")

    # -- combined text + execution --------------------------------------

    def plain(self, ins: Instruction) -> None:
        self._ins(ins)
        self.exec_plain(ins.opcode)

    def bld(self, s: int) -> None:
        self._ins(Instruction("bld", imm=s))
        if not self.done:
            r = self.ref
            r.valid, r.sid = 1, s
            r.commit(is_bld=True)
            self._emit("bld")

    def inline_brl(self, t: int) -> None:
        self._ins(Instruction("brl", imm=t))
        self.exec_brl(t)

    def jal(self, target: str) -> None:
        self._ins(Instruction("jal", rd=1, target=target), ends_block=True)
        self.exec_direct_jump("jal")

    def ind_jalr(self, fn: str) -> None:
        info = IndirectSiteInfo("indirect_call", _void(), (fn,))
        self._ins(Instruction("jalr", rd=1, rs1=7, imm=0, indirect=info), ends_block=True)
        if self.done:
            return
        r = self.ref
        if r.valid and fn == "land_plain":
            r.last = vm.INDIRECT
            self._emit("jalr", None, "cfp_missing_landing")
            return
        r.commit(is_ind_jalr=True, last=vm.INDIRECT)
        self._emit("jalr")

    def trap(self, policy: str) -> None:
        if self.done:
            return
        if policy == "clear_on_trap":
            self.ref.valid = 0
            self.ref.sid = 0
        self.stream.append(("trap", policy, None, self.ref.valid))

    def finish(self) -> Function:
        self._ins(Instruction("addi", rd=10, rs1=0, imm=0))
        self.exec_plain("addi")
        self._ins(Instruction("ecall", imm=0), ends_block=True)
        if not self.done:
            self._emit("ecall")
        self._close()
        return Function("main", _void(), self.blocks)


def apply_action(b: _Builder, act: tuple) -> None:
    kind = act[0]
    if kind == "nop":
        b.plain(Instruction("addi", rd=6, rs1=6, imm=1))
    elif kind == "dangle":
        # arm, then burn the window on an unrelated instruction
        b.bld(act[1])
        b.plain(Instruction("addi", rd=6, rs1=6, imm=1))
    elif kind == "call":
        _, arms, dest = act
        fn, t = DESTS[dest]
        b.plain(Instruction("la", rd=7, target=fn))
        for s in arms:
            b.bld(s)
        b.ind_jalr(fn)
        if b.done:
            return
        if t is None:
            b.exec_plain("addi")
            b.exec_direct_jump("jalr")  # landing body, then its return
        else:
            b.exec_brl(t)
            if not b.done:
                b.exec_direct_jump("jalr")
    elif kind == "skipjal":
        b.jal("land_ok")
        b.exec_brl(T_OK)  # reached by a direct jump: always a skip
        if not b.done:
            b.exec_direct_jump("jalr")
    elif kind == "inline":
        b.inline_brl(act[1])
    elif kind == "trap":
        b.trap(act[1])
    else:
        raise AssertionError(f"unknown action {act!r}")


def random_actions(rng: random.Random) -> list[tuple]:
    acts: list[tuple] = []
    for _ in range(rng.randint(3, 7)):
        roll = rng.random()
        if roll < 0.45:
            n_arm = rng.choices((0, 1, 2), weights=(25, 60, 15))[0]
            arms = [rng.choice(SIDS) for _ in range(n_arm)]
            dest = rng.choices(("ok", "plain", "empty", "unknown"),
                               weights=(50, 20, 15, 15))[0]
            acts.append(("call", arms, dest))
        elif roll < 0.57:
            acts.append(("dangle", rng.choice(SIDS)))
        elif roll < 0.67:
            acts.append(("nop",))
        elif roll < 0.77:
            acts.append(("skipjal",))
        elif roll < 0.87:
            acts.append(("inline", rng.choice((T_OK, T_EMPTY, T_UNKNOWN))))
        else:
            acts.append(("trap", rng.choice(("save_restore", "clear_on_trap"))))
    return acts


def run_trial(actions: list[tuple]) -> bool:
    """Build, run, compare.  Returns True when the sequence ended in a
    control-flow fault (for coverage accounting); raises on any mismatch."""
    b = _Builder()
    for act in actions:
        apply_action(b, act)
    main = b.finish()
    p = Program(functions=list(_PROLOGUE) + [main], rodata=[_META_BLOB])
    m = vm.load(p)
    assert m.cfi_enabled

    ctx = f"actions={actions!r}"
    for i, (op, outcome, fault, valid_after) in enumerate(b.stream):
        if op == "trap":
            m.trap_roundtrip(outcome)
        else:
            _, got_op, got_outcome = m.step()
            assert got_op == op, f"step {i}: got {got_op}, want {op} [{ctx}]"
            assert got_outcome == outcome, (
                f"step {i} ({op}): outcome {got_outcome}, want {outcome} [{ctx}]"
            )
            got_fault = m.fault.kind if m.fault else None
            assert got_fault == fault, (
                f"step {i} ({op}): fault {got_fault}, want {fault} [{ctx}]"
            )
        assert m.brstate.valid == valid_after, (
            f"step {i} ({op}): valid={m.brstate.valid}, want {valid_after} [{ctx}]"
        )

    r = b.ref
    assert m.halted, ctx
    got = (m.brl_pass, m.brl_skip, m.brl_fail, m.probe_reads)
    want = (r.passes, r.skips, r.fails, r.probes)
    assert got == want, f"counters {got} != {want} [{ctx}]"
    if not b.faulted:
        assert m.fault is None and m.exit_code == 0, ctx
    return b.faulted


def run_trials(n: int, seed: int = 20260822) -> dict:
    """n random sequences; returns coverage counts for reporting."""
    rng = random.Random(seed)
    faulted = 0
    for _ in range(n):
        faulted += bool(run_trial(random_actions(rng)))
    return {"trials": n, "faulted": faulted, "clean": n - faulted}
