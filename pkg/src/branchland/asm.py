"""Parser for the .brl.s assembly dialect.

One instruction per line.  `.func name(sig)` opens a function, `label:`
opens a basic block (or a data blob inside `.rodata`/`.data`), `#` starts
a comment.  Annotated indirect transfers look like

    jalr ra, t0, 0  @indirect kind=call sig=int(int) targets=[on_even,on_odd]

See docs/dialect.md for the full grammar and semantics.
"""

from __future__ import annotations

import re

from branchland.ir import (
    ALU_RRI,
    ALU_RRR,
    BRANCHES,
    REG_BY_NAME,
    AsmError,
    BasicBlock,
    DataBlob,
    DataItem,
    Function,
    IndirectSiteInfo,
    Instruction,
    Program,
    TypeSignature,
)

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_LABEL_RE = re.compile(rf"^({_IDENT}):$")
_FUNC_RE = re.compile(rf"^\.func\s+({_IDENT})\s*\((.+)\)$")
_MEM_RE = re.compile(rf"^(-?[0-9][0-9a-fA-Fx]*|0x[0-9a-fA-F]+|-?\d+)\(({_IDENT})\)$")
_ANNOT_RE = re.compile(
    r"@indirect\s+kind=(call|jump)(?:\s+sig=(\S+))?\s+targets=\[([^\]]*)\]\s*$"
)


def _reg(tok: str, line: int) -> int:
    r = REG_BY_NAME.get(tok)
    if r is None:
        raise AsmError(f"unknown register {tok!r}", line)
    return r


def _num(tok: str, line: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmError(f"bad number {tok!r}", line) from None


def _split_operands(rest: str) -> list[str]:
    return [t.strip() for t in rest.split(",")] if rest.strip() else []


def _parse_instruction(text: str, line: int) -> Instruction:
    annot = None
    m = _ANNOT_RE.search(text)
    if m is not None:
        kind = "indirect_call" if m.group(1) == "call" else "indirect_jump"
        sig = None
        if m.group(2) is not None:
            try:
                sig = TypeSignature.parse(m.group(2))
            except ValueError as e:
                raise AsmError(str(e), line) from None
        targets = tuple(t.strip() for t in m.group(3).split(",") if t.strip())
        annot = IndirectSiteInfo(
            kind=kind, declared_signature=sig, possible_targets=targets
        )
        text = text[: m.start()].rstrip()
    parts = text.split(None, 1)
    op = parts[0]
    ops = _split_operands(parts[1]) if len(parts) > 1 else []

    def want(n: int) -> None:
        if len(ops) != n:
            raise AsmError(f"{op} expects {n} operands, got {len(ops)}", line)

    if annot is not None and op != "jalr":
        raise AsmError("@indirect annotation is only valid on jalr", line)

    if op in ALU_RRR:
        want(3)
        return Instruction(op, rd=_reg(ops[0], line), rs1=_reg(ops[1], line),
                           rs2=_reg(ops[2], line), line=line)
    if op in ALU_RRI:
        want(3)
        return Instruction(op, rd=_reg(ops[0], line), rs1=_reg(ops[1], line),
                           imm=_num(ops[2], line), line=line)
    if op == "ld":
        want(2)
        m2 = _MEM_RE.match(ops[1])
        if m2 is None:
            raise AsmError(f"ld operand {ops[1]!r} is not imm(reg)", line)
        return Instruction(op, rd=_reg(ops[0], line), rs1=_reg(m2.group(2), line),
                           imm=_num(m2.group(1), line), line=line)
    if op == "sd":
        want(2)
        m2 = _MEM_RE.match(ops[1])
        if m2 is None:
            raise AsmError(f"sd operand {ops[1]!r} is not imm(reg)", line)
        return Instruction(op, rs2=_reg(ops[0], line), rs1=_reg(m2.group(2), line),
                           imm=_num(m2.group(1), line), line=line)
    if op in BRANCHES:
        want(3)
        return Instruction(op, rs1=_reg(ops[0], line), rs2=_reg(ops[1], line),
                           target=ops[2], line=line)
    if op == "jal":
        want(2)
        return Instruction(op, rd=_reg(ops[0], line), target=ops[1], line=line)
    if op == "jalr":
        want(3)
        return Instruction(op, rd=_reg(ops[0], line), rs1=_reg(ops[1], line),
                           imm=_num(ops[2], line), indirect=annot, line=line)
    if op == "ecall":
        if len(ops) > 1:
            raise AsmError(f"ecall expects at most one operand", line)
        return Instruction(op, imm=_num(ops[0], line) if ops else 0, line=line)
    if op in ("bld", "brl"):
        want(1)
        return Instruction(op, imm=_num(ops[0], line), line=line)
    if op == "la":
        want(2)
        return Instruction(op, rd=_reg(ops[0], line), target=ops[1], line=line)
    raise AsmError(f"unknown instruction {op!r}", line)


def parse_program(text: str) -> Program:
    """Parse and validate; raises AsmError with a line number on bad input."""
    p = Program(entry="main")
    section = "text"  # "text" | "rodata" | "data"
    fn: Function | None = None
    block: BasicBlock | None = None
    blob: DataBlob | None = None
    entry_set = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue

        if stripped.startswith(".entry"):
            parts = stripped.split()
            if len(parts) != 2:
                raise AsmError(".entry expects one name", lineno)
            if entry_set:
                raise AsmError("duplicate .entry", lineno)
            p.entry = parts[1]
            entry_set = True
            continue

        if stripped.startswith(".func"):
            m = _FUNC_RE.match(stripped)
            if m is None:
                raise AsmError("malformed .func header", lineno)
            try:
                sig = TypeSignature.parse(m.group(2))
            except ValueError as e:
                raise AsmError(str(e), lineno) from None
            fn = Function(name=m.group(1), signature=sig)
            p.functions.append(fn)
            block = None
            blob = None
            section = "text"
            continue

        if stripped in (".rodata", ".data"):
            section = stripped[1:]
            blob = None
            block = None
            continue

        m = _LABEL_RE.match(stripped)
        if m is not None:
            label = m.group(1)
            if section == "text":
                if fn is None:
                    raise AsmError(f"label {label!r} outside any function", lineno)
                if fn.block(label) is not None:
                    raise AsmError(f"duplicate label {label!r}", lineno)
                block = BasicBlock(label=label)
                fn.blocks.append(block)
            else:
                blob = DataBlob(symbol=label, writable=(section == "data"))
                (p.data if section == "data" else p.rodata).append(blob)
            continue

        if stripped.startswith("."):
            if section == "text":
                raise AsmError(f"data directive {stripped.split()[0]!r} in text", lineno)
            if blob is None:
                raise AsmError("data directive before any symbol label", lineno)
            parts = stripped.split(None, 1)
            directive = parts[0]
            rest = parts[1] if len(parts) > 1 else ""
            if directive == ".addr":
                sym = rest.strip()
                if not sym or " " in sym:
                    raise AsmError(".addr expects one symbol", lineno)
                blob.items.append(DataItem("addr", sym))
            elif directive in (".word", ".byte"):
                vals = _split_operands(rest)
                if not vals:
                    raise AsmError(f"{directive} expects at least one value", lineno)
                for v in vals:
                    n = _num(v, lineno)
                    if directive == ".byte":
                        if not -128 <= n <= 255:
                            raise AsmError(f".byte value {n} out of range", lineno)
                        blob.items.append(DataItem("byte", n & 0xFF))
                    else:
                        blob.items.append(DataItem("word", n))
            else:
                raise AsmError(f"unknown directive {directive!r}", lineno)
            continue

        if section != "text":
            raise AsmError(f"unexpected line in {section} section", lineno)
        if fn is None or block is None:
            raise AsmError("instruction outside a labeled block", lineno)
        block.instructions.append(_parse_instruction(stripped, lineno))

    p.validate()
    return p
