import functools

import pytest

from branchland import vm
from branchland.asm import parse_program
from branchland.evaluate import build_policy, evaluate_corpus
from branchland.instrument import instrument

# Printed checksums of the bundled corpus, each derived by hand from the
# program source (see the comments in the .brl.s files).
CORPUS_CHECKSUMS = {
    "callback_dispatch": 190,
    "jop_dispatcher": 6800,
    "switch_10": 1800,
    "switch_50": 12250,
    "switch_120": 57120,
    "sig_family": 294,
    "rbtree_cmp": 270,
    "recurse_fib": 144,
    "loop_kernel": 122500,
    "state_machine": 400,
    "table_calls": 1125,
    "matrix_sum": 7755,
}

# Minimal callback program used across the unit tests: one protected
# call through a writable slot, both attack symbols present.
CALLBACK_TINY = """\
.entry main

.func on_even(int(int))
entry:
    slli a0, a0, 1
    jalr zero, ra, 0

.func on_odd(int(int))
entry:
    addi a0, a0, 1
    jalr zero, ra, 0

.func attacker_goal(void())
entry:
    ecall 99
    addi a0, zero, 13
    ecall 0

.func main(void())
entry:
    la t0, handler_slot
    ld t1, 0(t0)
    addi a0, zero, 5
    jalr ra, t1, 0  @indirect kind=call sig=int(int) targets=[on_even,on_odd]
done:
    ecall 1
    addi a0, zero, 0
    ecall 0

.data
handler_slot:
    .addr on_even
"""

# Two callers of distinct declared targets: c_bad's source region is not
# authorized for tgt, which gives enforcement tests a deterministic
# unauthorized source id to aim at tgt's landing pad.
TWO_CALLER = """\
.entry main

.func tgt(int(int))
entry:
    addi a0, a0, 1
    jalr zero, ra, 0

.func other(int(int))
entry:
    addi a0, a0, 2
    jalr zero, ra, 0

.func c_ok(int(int))
entry:
    addi sp, sp, -8
    sd ra, 0(sp)
    la t0, tgt
    jalr ra, t0, 0  @indirect kind=call sig=int(int) targets=[tgt]
ret:
    ld ra, 0(sp)
    addi sp, sp, 8
    jalr zero, ra, 0

.func c_bad(int(int))
entry:
    addi sp, sp, -8
    sd ra, 0(sp)
    la t0, other
    jalr ra, t0, 0  @indirect kind=call sig=int(int) targets=[other]
ret:
    ld ra, 0(sp)
    addi sp, sp, 8
    jalr zero, ra, 0

.func main(void())
entry:
    addi a0, zero, 1
    jal ra, c_ok
p1:
    jal ra, c_bad
p2:
    ecall 1
    addi a0, zero, 0
    ecall 0
"""


def make_fanin(n_callers: int) -> str:
    """One target reached from n distinct caller functions, so the target's
    authorized-source set has exactly n entries at function granularity."""
    parts = [
        ".entry main\n",
        ".func tgt(int(int))\nentry:\n    addi a0, a0, 1\n    jalr zero, ra, 0\n",
    ]
    for i in range(n_callers):
        parts.append(
            f".func c{i}(int(int))\n"
            "entry:\n"
            "    addi sp, sp, -8\n"
            "    sd ra, 0(sp)\n"
            "    la t0, tgt\n"
            "    jalr ra, t0, 0  @indirect kind=call sig=int(int) targets=[tgt]\n"
            "ret:\n"
            "    ld ra, 0(sp)\n"
            "    addi sp, sp, 8\n"
            "    jalr zero, ra, 0\n"
        )
    parts.append(".func main(void())\nentry:\n    addi s1, zero, 0\n")
    for i in range(n_callers):
        parts.append(f"b{i}:\n    add a0, zero, s1\n    jal ra, c{i}\n")
    parts.append(
        f"fin:\n    add s1, zero, a0\n    add a0, zero, s1\n"
        "    ecall 1\n    addi a0, zero, 0\n    ecall 0\n"
    )
    return "".join(parts)


def run_text(text: str, policy_kind: str | None = None, **kw):
    """Parse, optionally instrument, run; returns (machine, report)."""
    p = parse_program(text)
    obj = p
    if policy_kind is not None:
        sm, pol = build_policy(p, policy_kind)
        obj = instrument(p, sm, pol, kw.pop("fp_target", 1e-3),
                         kw.pop("seed1", 0), kw.pop("seed2", 0))
    m = vm.load(obj, cfi=kw.pop("cfi", None))
    rep = vm.run(m, **kw)
    return m, rep


@functools.lru_cache(maxsize=1)
def corpus_report() -> dict:
    return evaluate_corpus()


@pytest.fixture(scope="session")
def aggregate():
    return corpus_report()


# One verdict line per acceptance criterion, printed after the normal
# test summary so the gate is visible without -s.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
