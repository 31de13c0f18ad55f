"""Interpreter for the toy ISA with landing-check enforcement.

Execution model, in one paragraph: bld writes (valid=1, sid) into the
authorization register and arms exactly the next instruction.  If that
next instruction is anything but an annotated indirect jalr, valid drops
back to 0, so stale authorizations cannot linger.  An armed indirect
transfer must land on a brl or it faults cfp_missing_landing.  A brl
checks only when the immediately preceding transfer was indirect: with
valid=0 it faults cfp_invalid, with an unknown target identifier or a
failed k-probe membership test it faults cfp_unauthorized, and on success
it consumes the authorization (valid=0, single use).  A brl reached any
other way (direct call, fallthrough) is a Skip, not a check.  Enforcement
is active only for instrumented programs; a plain program runs with the
checks off, which is what makes baseline measurements possible.

Faults never raise: they land in MachineState.fault as a FaultRecord and
halt the machine.  Python exceptions out of this module mean misuse (bad
load input, stepping a halted machine, step-budget exhaustion).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from branchland import bloom, kernels
from branchland.instrument import META_SYMBOL, InstrumentedProgram, is_instrumented
from branchland.ir import ALU_RRI, ALU_RRR, BRANCHES, Program

MASK64 = (1 << 64) - 1
SIGN_BIT = 1 << 63

TEXT_BASE = 0x1000
STACK_TOP = 0x200000
STACK_SIZE = 0x10000

FAULT_KINDS = (
    "cfp_invalid",
    "cfp_unauthorized",
    "cfp_missing_landing",
    "perm_violation",
    "illegal_instruction",
    "misaligned_access",
)

NONE, DIRECT, INDIRECT = "none", "direct", "indirect"

HIST_CLASSES = (
    "alu",
    "load_store",
    "taken_branch",
    "untaken_branch",
    "jump",
    "ecall",
    "bld",
    "brl",
)


class VmError(Exception):
    pass


class StepBudgetError(VmError):
    """The run hit max_steps; the program did not terminate."""


@dataclass(frozen=True)
class FaultRecord:
    kind: str
    pc_at_fault: int
    sid_src: int | None = None
    sid_t: int | None = None

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "pc_at_fault": self.pc_at_fault,
            "sid_src": self.sid_src,
            "sid_t": self.sid_t,
        }


@dataclass
class BrState:
    valid: int = 0
    sid: int = 0


@dataclass
class ExecutionReport:
    retired: int
    histogram: dict[str, int]
    brl_pass: int
    brl_skip: int
    brl_fail: int
    probe_reads: int
    fault: FaultRecord | None
    exit_code: int | None
    prints: list[int] = field(default_factory=list)
    ecall_codes: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "schema": "report-v1",
            "kind": "run",
            "retired": self.retired,
            "histogram": dict(self.histogram),
            "brl_outcomes": {
                "pass": self.brl_pass,
                "skip": self.brl_skip,
                "fail": self.brl_fail,
            },
            "probe_reads": self.probe_reads,
            "fault": self.fault.to_json() if self.fault else None,
            "exit_code": self.exit_code,
            "prints": list(self.prints),
            "ecall_codes": list(self.ecall_codes),
        }


class _Region:
    __slots__ = ("name", "start", "buf", "readable", "writable", "executable")

    def __init__(self, name, start, buf, readable, writable, executable):
        self.name = name
        self.start = start
        self.buf = buf
        self.readable = readable
        self.writable = writable
        self.executable = executable

    @property
    def end(self) -> int:
        return self.start + len(self.buf)


class _Op:
    __slots__ = (
        "op", "rd", "rs1", "rs2", "imm", "addr", "target_addr",
        "indirect", "is_return", "cls",
    )

    def __init__(self, ins, addr):
        self.op = ins.opcode
        self.rd = ins.rd
        self.rs1 = ins.rs1
        self.rs2 = ins.rs2
        self.imm = ins.imm
        self.addr = addr
        self.target_addr = None
        self.indirect = ins.indirect is not None
        self.is_return = ins.is_plain_return()
        if ins.opcode in ALU_RRR or ins.opcode in ALU_RRI or ins.opcode == "la":
            self.cls = "alu"
        elif ins.opcode in ("ld", "sd"):
            self.cls = "load_store"
        elif ins.opcode in BRANCHES:
            self.cls = "taken_branch"  # split at execution time
        elif ins.opcode in ("jal", "jalr"):
            self.cls = "jump"
        elif ins.opcode == "ecall":
            self.cls = "ecall"
        else:
            self.cls = ins.opcode  # bld / brl


def _to_signed(v: int) -> int:
    return v - (1 << 64) if v & SIGN_BIT else v


class MachineState:
    """Single-owner mutable machine.  Build with load(), drive with step()
    or run()."""

    def __init__(self, program: Program, metadata: bloom.MetadataImage | None, cfi: bool):
        self.program = program
        self.metadata = metadata
        self.cfi_enabled = cfi
        self.regs = [0] * 32
        self.brstate = BrState()
        self.last_transfer = NONE
        self.prev_was_bld = False
        self.halted = False
        self.fault: FaultRecord | None = None
        self.exit_code: int | None = None
        self.retired = 0
        self.histogram = {c: 0 for c in HIST_CLASSES}
        self.brl_pass = 0
        self.brl_skip = 0
        self.brl_fail = 0
        self.probe_reads = 0
        self.prints: list[int] = []
        self.ecall_codes: list[int] = []
        self.symbols: dict[str, int] = {}
        self.regions: list[_Region] = []
        self.instrs: list[_Op] = []
        self.pc = 0
        self._filters: dict[int, tuple[bytes, int]] = {}
        self._meta_k = metadata.k if metadata else 0
        self._meta_seeds = (metadata.seed1, metadata.seed2) if metadata else (0, 0)
        if metadata is not None:
            metadata.validate()
            for d in metadata.descriptors:
                bits = metadata.bit_region[d.offset_bytes : d.offset_bytes + d.m_bits // 8]
                self._filters[d.sid_t] = (bits, d.m_bits)

    # -- memory ---------------------------------------------------------

    def _region_at(self, addr: int, width: int) -> _Region | None:
        for r in self.regions:
            if r.start <= addr and addr + width <= r.end:
                return r
        return None

    def read_mem(self, addr: int, width: int = 8) -> int | None:
        """Permission-checked read; None when unreadable or unmapped."""
        r = self._region_at(addr, width)
        if r is None or not r.readable:
            return None
        off = addr - r.start
        return int.from_bytes(r.buf[off : off + width], "little")

    def corrupt(self, addr: int, value: int, width: int = 8) -> bool:
        """Attacker memory write: lands iff the whole span is writable.
        Returns False (and changes nothing) for text, rodata, metadata, or
        unmapped addresses.  The authorization register has no address, so
        no corrupt() call can reach it."""
        r = self._region_at(addr, width)
        if r is None or not r.writable:
            return False
        off = addr - r.start
        r.buf[off : off + width] = (value & ((1 << (8 * width)) - 1)).to_bytes(
            width, "little"
        )
        return True

    def protected_digest(self) -> str:
        """Digest of every non-writable mapped byte (text and rodata,
        metadata included); equal before and after a run iff nothing
        protected changed."""
        h = hashlib.sha256()
        for r in self.regions:
            if not r.writable:
                h.update(bytes(r.buf))
        return h.hexdigest()

    def trap_roundtrip(self, policy: str) -> None:
        """Simulate a trap to the OS and the return from it, between steps.
        save_restore models a kernel that context-switches the
        authorization register; clear_on_trap models hardware that zeroes
        it on every trap, losing in-flight authorizations (fail closed)."""
        if policy == "save_restore":
            return
        if policy == "clear_on_trap":
            self.brstate.valid = 0
            self.brstate.sid = 0
            return
        raise VmError(f"unknown trap policy {policy!r}")

    # -- execution ------------------------------------------------------

    def _fault(self, kind: str, pc: int, sid_src=None, sid_t=None) -> None:
        self.fault = FaultRecord(kind=kind, pc_at_fault=pc, sid_src=sid_src, sid_t=sid_t)
        self.halted = True

    def _instr_at(self, addr: int) -> _Op | None:
        idx = addr - TEXT_BASE
        if idx < 0 or idx % 4 or idx // 4 >= len(self.instrs):
            return None
        return self.instrs[idx // 4]

    def step(self) -> tuple[int, str, str | None]:
        """Execute one instruction.  Returns (pc, opcode, brl outcome) for
        tracing; the outcome slot is None off brl instructions."""
        if self.halted:
            raise VmError("machine is halted" + (" on a fault" if self.fault else ""))
        pc = self.pc
        cur = self._instr_at(pc)
        if cur is None:
            self._fault("illegal_instruction", pc)
            return pc, "fetch", None

        regs = self.regs
        op = cur.op
        self.retired += 1
        next_pc = pc + 4
        transfer = NONE
        brl_outcome: str | None = None
        is_indirect_jalr = False

        if cur.cls == "alu":
            self.histogram["alu"] += 1
            if op == "add":
                v = (regs[cur.rs1] + regs[cur.rs2]) & MASK64
            elif op == "addi":
                v = (regs[cur.rs1] + cur.imm) & MASK64
            elif op == "sub":
                v = (regs[cur.rs1] - regs[cur.rs2]) & MASK64
            elif op == "and":
                v = regs[cur.rs1] & regs[cur.rs2]
            elif op == "or":
                v = regs[cur.rs1] | regs[cur.rs2]
            elif op == "xor":
                v = regs[cur.rs1] ^ regs[cur.rs2]
            elif op == "slli":
                v = (regs[cur.rs1] << cur.imm) & MASK64
            elif op == "srli":
                v = regs[cur.rs1] >> cur.imm
            else:  # la
                v = cur.target_addr
            if cur.rd:
                regs[cur.rd] = v

        elif op == "ld":
            self.histogram["load_store"] += 1
            addr = (regs[cur.rs1] + cur.imm) & MASK64
            if addr % 8:
                self._fault("misaligned_access", pc)
                return pc, op, None
            v = self.read_mem(addr, 8)
            if v is None:
                self._fault("perm_violation", pc)
                return pc, op, None
            if cur.rd:
                regs[cur.rd] = v

        elif op == "sd":
            self.histogram["load_store"] += 1
            addr = (regs[cur.rs1] + cur.imm) & MASK64
            if addr % 8:
                self._fault("misaligned_access", pc)
                return pc, op, None
            r = self._region_at(addr, 8)
            if r is None or not r.writable:
                self._fault("perm_violation", pc)
                return pc, op, None
            off = addr - r.start
            r.buf[off : off + 8] = regs[cur.rs2].to_bytes(8, "little")

        elif cur.cls == "taken_branch":  # beq / bne / blt
            a, b = regs[cur.rs1], regs[cur.rs2]
            if op == "beq":
                taken = a == b
            elif op == "bne":
                taken = a != b
            else:
                taken = _to_signed(a) < _to_signed(b)
            if taken:
                self.histogram["taken_branch"] += 1
                next_pc = cur.target_addr
            else:
                self.histogram["untaken_branch"] += 1
            transfer = DIRECT

        elif op == "jal":
            self.histogram["jump"] += 1
            if cur.rd:
                regs[cur.rd] = pc + 4
            next_pc = cur.target_addr
            transfer = DIRECT

        elif op == "jalr":
            self.histogram["jump"] += 1
            dest = (regs[cur.rs1] + cur.imm) & MASK64
            if cur.rd:
                regs[cur.rd] = pc + 4
            if dest % 4:
                self._fault("misaligned_access", dest)
                return pc, op, None
            if cur.indirect:
                is_indirect_jalr = True
                transfer = INDIRECT
                landing = self._instr_at(dest)
                if self.cfi_enabled and self.brstate.valid:
                    if landing is None or landing.op != "brl":
                        self.last_transfer = INDIRECT
                        self._fault(
                            "cfp_missing_landing", dest, sid_src=self.brstate.sid
                        )
                        return pc, op, None
                elif landing is None:
                    self.last_transfer = INDIRECT
                    self._fault("illegal_instruction", dest)
                    return pc, op, None
            else:
                transfer = DIRECT
                if self._instr_at(dest) is None:
                    self.last_transfer = DIRECT
                    self._fault("illegal_instruction", dest)
                    return pc, op, None
            next_pc = dest

        elif op == "ecall":
            self.histogram["ecall"] += 1
            if cur.imm == 0:
                self.halted = True
                self.exit_code = regs[10]
            elif cur.imm == 1:
                self.prints.append(regs[10])
            else:
                self.ecall_codes.append(cur.imm)

        elif op == "bld":
            self.histogram["bld"] += 1
            self.brstate.valid = 1
            self.brstate.sid = cur.imm

        elif op == "brl":
            self.histogram["brl"] += 1
            # With enforcement off the landing marker is inert: it retires
            # and counts as a Skip no matter how it was reached.
            if not self.cfi_enabled or self.last_transfer != INDIRECT:
                self.brl_skip += 1
                brl_outcome = "SKIP"
            elif not self.brstate.valid:
                self.brl_fail += 1
                self._fault("cfp_invalid", pc, sid_t=cur.imm)
                return pc, op, "FAIL"
            else:
                sid_src = self.brstate.sid
                entry = self._filters.get(cur.imm)
                self.brstate.valid = 0  # single use, consumed pass or fail
                if entry is None:
                    self.brl_fail += 1
                    self._fault("cfp_unauthorized", pc, sid_src=sid_src, sid_t=cur.imm)
                    return pc, op, "FAIL"
                bits, m = entry
                self.probe_reads += self._meta_k
                ok = kernels.filter_query(
                    bits, m, self._meta_k, self._meta_seeds[0], self._meta_seeds[1], sid_src
                )
                if ok:
                    self.brl_pass += 1
                    brl_outcome = "PASS"
                else:
                    self.brl_fail += 1
                    self._fault("cfp_unauthorized", pc, sid_src=sid_src, sid_t=cur.imm)
                    return pc, op, "FAIL"

        else:
            raise VmError(f"loader produced unknown opcode {op!r}")

        # bld arms exactly the next transfer: any other instruction that
        # commits inside the window drops the authorization.
        if op == "bld":
            self.prev_was_bld = True
        else:
            if self.prev_was_bld and not is_indirect_jalr:
                self.brstate.valid = 0
            self.prev_was_bld = False

        self.last_transfer = transfer
        self.pc = next_pc
        return pc, op, brl_outcome

    def report(self) -> ExecutionReport:
        return ExecutionReport(
            retired=self.retired,
            histogram=dict(self.histogram),
            brl_pass=self.brl_pass,
            brl_skip=self.brl_skip,
            brl_fail=self.brl_fail,
            probe_reads=self.probe_reads,
            fault=self.fault,
            exit_code=self.exit_code,
            prints=list(self.prints),
            ecall_codes=list(self.ecall_codes),
        )


def _materialize(blob, symbols: dict[str, int]) -> bytes:
    out = bytearray()
    for it in blob.items:
        if it.kind == "byte":
            out.append(it.value)
        elif it.kind == "word":
            out += (it.value & MASK64).to_bytes(8, "little")
        else:
            out += symbols[it.value].to_bytes(8, "little")
    return bytes(out)


def load(
    obj: Program | InstrumentedProgram, *, cfi: bool | None = None
) -> MachineState:
    """Lay the program out in memory and return a machine ready to run.

    Layout: text at TEXT_BASE (4 bytes per instruction slot; slots read as
    zeros), rodata then data on the following pages, each blob 8-aligned,
    and a descending stack below STACK_TOP with sp pointing at the top.
    Enforcement defaults to on iff the program is instrumented; pass cfi=
    to override.
    """
    metadata = None
    if isinstance(obj, InstrumentedProgram):
        program = obj.program
        metadata = obj.metadata
    else:
        program = obj
        blob = program.data_blob(META_SYMBOL)
        if blob is not None:
            if any(it.kind != "byte" for it in blob.items):
                raise VmError(f"{META_SYMBOL} must contain only .byte items")
            metadata = bloom.parse_image(bytes(it.value for it in blob.items))
    if cfi is None:
        cfi = metadata is not None or is_instrumented(program)

    program.validate()
    m = MachineState(program, metadata, cfi)

    addr = TEXT_BASE
    flat: list = []
    for f in program.functions:
        m.symbols[f.name] = addr
        for b in f.blocks:
            m.symbols[f"{f.name}.{b.label}"] = addr
            for ins in b.instructions:
                flat.append((f, ins, addr))
                addr += 4
    text_end = addr

    def page_up(a: int) -> int:
        return (a + 0xFFF) & ~0xFFF

    ro_base = page_up(text_end)
    addr = ro_base
    for blob in program.rodata:
        addr = (addr + 7) & ~7
        m.symbols[blob.symbol] = addr
        addr += blob.byte_size
    ro_end = addr
    data_base = page_up(ro_end)
    addr = data_base
    for blob in program.data:
        addr = (addr + 7) & ~7
        m.symbols[blob.symbol] = addr
        addr += blob.byte_size
    data_end = addr
    if data_end > STACK_TOP - STACK_SIZE:
        raise VmError("program image overlaps the stack region")

    for f, ins, iaddr in flat:
        op = _Op(ins, iaddr)
        if ins.opcode in BRANCHES:
            op.target_addr = m.symbols[f"{f.name}.{ins.target}"]
        elif ins.opcode == "jal":
            local = f"{f.name}.{ins.target}"
            op.target_addr = m.symbols.get(local, m.symbols.get(ins.target))
        elif ins.opcode == "la":
            op.target_addr = m.symbols[ins.target]
        m.instrs.append(op)

    ro_buf = bytearray(ro_end - ro_base)
    for blob in program.rodata:
        off = m.symbols[blob.symbol] - ro_base
        chunk = _materialize(blob, m.symbols)
        ro_buf[off : off + len(chunk)] = chunk
    data_buf = bytearray(data_end - data_base)
    for blob in program.data:
        off = m.symbols[blob.symbol] - data_base
        chunk = _materialize(blob, m.symbols)
        data_buf[off : off + len(chunk)] = chunk

    m.regions = [
        _Region("text", TEXT_BASE, bytearray(text_end - TEXT_BASE), True, False, True),
        _Region("rodata", ro_base, ro_buf, True, False, False),
        _Region("data", data_base, data_buf, True, True, False),
        _Region("stack", STACK_TOP - STACK_SIZE, bytearray(STACK_SIZE), True, True, False),
    ]
    m.regs[2] = STACK_TOP
    m.pc = m.symbols[program.entry]
    return m


def run(
    m: MachineState, max_steps: int = 10**8, trace=None
) -> ExecutionReport:
    """Drive the machine to halt or fault.  trace, if given, is called with
    one formatted line per committed instruction."""
    steps = 0
    while not m.halted:
        if steps >= max_steps:
            raise StepBudgetError(f"no halt after {max_steps} steps")
        pc, op, outcome = m.step()
        steps += 1
        if trace is not None:
            line = f"0x{pc:x} {op}"
            if outcome is not None:
                line += f" brl:{outcome}"
            if m.fault is not None:
                line += f" fault:{m.fault.kind}"
            trace(line)
    return m.report()
