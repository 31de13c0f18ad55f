"""Program IR for the toy RISC-style ISA.

A Program is functions (basic blocks of instructions) plus read-only and
writable data blobs.  Indirect transfers carry an IndirectSiteInfo
annotation naming their kind, the declared callee signature, and the
author's possible-target list; everything downstream (policy, metadata,
instrumentation) is computed from this IR, never from source text.

Target references use a canonical spelling: a bare name is a function, a
dotted "fn.label" names a block inside fn.  Data items stay symbolic
(".addr sym") until the VM loader assigns addresses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

RETURN_KINDS = ("void", "int")
PARAM_KINDS = ("int", "ptr")

SID_MIN = 1
SID_MAX = (1 << 31) - 1

ABI_NAMES = (
    ["zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1"]
    + [f"a{i}" for i in range(8)]
    + [f"s{i}" for i in range(2, 12)]
    + [f"t{i}" for i in range(3, 7)]
)
REG_BY_NAME = {name: i for i, name in enumerate(ABI_NAMES)}
REG_BY_NAME.update({f"x{i}": i for i in range(32)})
REG_BY_NAME["fp"] = 8

ALU_RRR = ("add", "sub", "and", "or", "xor")
ALU_RRI = ("addi", "slli", "srli")
BRANCHES = ("beq", "bne", "blt")

RA = 1


class AsmError(Exception):
    """Parse or validation failure; line is set when source text is at hand."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class TypeSignature:
    return_kind: str
    param_kinds: tuple[str, ...] = ()

    def __post_init__(self):
        if self.return_kind not in RETURN_KINDS:
            raise ValueError(f"bad return kind {self.return_kind!r}")
        for p in self.param_kinds:
            if p not in PARAM_KINDS:
                raise ValueError(f"bad parameter kind {p!r}")

    def __str__(self) -> str:
        return f"{self.return_kind}({','.join(self.param_kinds)})"

    @classmethod
    def parse(cls, text: str) -> "TypeSignature":
        text = text.strip()
        if not text.endswith(")") or "(" not in text:
            raise ValueError(f"malformed signature {text!r}")
        ret, inner = text[:-1].split("(", 1)
        params = tuple(p.strip() for p in inner.split(",")) if inner.strip() else ()
        return cls(return_kind=ret.strip(), param_kinds=params)


@dataclass(frozen=True)
class IndirectSiteInfo:
    kind: str  # "indirect_call" | "indirect_jump"
    declared_signature: TypeSignature | None = None
    possible_targets: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("indirect_call", "indirect_jump"):
            raise ValueError(f"bad indirect kind {self.kind!r}")


@dataclass
class Instruction:
    opcode: str
    rd: int | None = None
    rs1: int | None = None
    rs2: int | None = None
    imm: int | None = None
    target: str | None = None
    indirect: IndirectSiteInfo | None = None
    line: int | None = field(default=None, compare=False)

    def is_transfer(self) -> bool:
        if self.opcode in BRANCHES or self.opcode in ("jal", "jalr"):
            return True
        return self.opcode == "ecall" and self.imm == 0

    def is_unconditional_transfer(self) -> bool:
        return self.opcode in ("jal", "jalr") or (self.opcode == "ecall" and self.imm == 0)

    def is_plain_return(self) -> bool:
        return (
            self.opcode == "jalr"
            and self.indirect is None
            and self.rd == 0
            and self.rs1 == RA
            and self.imm == 0
        )


@dataclass
class BasicBlock:
    label: str
    instructions: list[Instruction] = field(default_factory=list)


@dataclass
class Function:
    name: str
    signature: TypeSignature
    blocks: list[BasicBlock] = field(default_factory=list)
    address_taken: bool = False

    def block(self, label: str) -> BasicBlock | None:
        for b in self.blocks:
            if b.label == label:
                return b
        return None


@dataclass(frozen=True)
class DataItem:
    kind: str  # "word" (8 bytes LE) | "byte" | "addr" (8-byte symbol address)
    value: int | str

    def __post_init__(self):
        if self.kind not in ("word", "byte", "addr"):
            raise ValueError(f"bad data item kind {self.kind!r}")
        if self.kind == "addr" and not isinstance(self.value, str):
            raise ValueError(".addr needs a symbol name")
        if self.kind in ("word", "byte") and not isinstance(self.value, int):
            raise ValueError(f".{self.kind} needs an integer")

    @property
    def byte_size(self) -> int:
        return 1 if self.kind == "byte" else 8


@dataclass
class DataBlob:
    symbol: str
    items: list[DataItem] = field(default_factory=list)
    writable: bool = False

    @property
    def byte_size(self) -> int:
        return sum(it.byte_size for it in self.items)


@dataclass(frozen=True)
class IndirectSite:
    """One annotated jalr: where it sits and what the author declared."""

    function: str
    block: str
    index: int
    kind: str
    declared_signature: TypeSignature | None
    possible_targets: tuple[str, ...]


@dataclass
class CallGraphSummary:
    sites: list[IndirectSite]
    address_taken: dict[str, bool]


def split_target(name: str) -> tuple[str, str | None]:
    """'fn' -> (fn, None); 'fn.label' -> (fn, label)."""
    if "." in name:
        fn, label = name.split(".", 1)
        return fn, label
    return name, None


@dataclass
class Program:
    functions: list[Function] = field(default_factory=list)
    rodata: list[DataBlob] = field(default_factory=list)
    data: list[DataBlob] = field(default_factory=list)
    entry: str = "main"

    def function(self, name: str) -> Function | None:
        for f in self.functions:
            if f.name == name:
                return f
        return None

    def data_blob(self, symbol: str) -> DataBlob | None:
        for blob in list(self.rodata) + list(self.data):
            if blob.symbol == symbol:
                return blob
        return None

    def resolves(self, name: str) -> bool:
        """True iff name denotes a function, fn.block, or data symbol."""
        fn, label = split_target(name)
        if label is None:
            return self.function(fn) is not None or self.data_blob(fn) is not None
        f = self.function(fn)
        return f is not None and f.block(label) is not None

    def validate(self) -> None:
        seen_fn: set[str] = set()
        for f in self.functions:
            if f.name in seen_fn:
                raise AsmError(f"duplicate function {f.name!r}")
            seen_fn.add(f.name)
        seen_sym: set[str] = set()
        for blob in list(self.rodata) + list(self.data):
            if blob.symbol in seen_sym or blob.symbol in seen_fn:
                raise AsmError(f"duplicate symbol {blob.symbol!r}")
            seen_sym.add(blob.symbol)
        if self.function(self.entry) is None:
            raise AsmError(f"entry function {self.entry!r} not defined")

        for f in self.functions:
            if not f.blocks:
                raise AsmError(f"function {f.name!r} has no blocks")
            labels: set[str] = set()
            for b in f.blocks:
                if b.label in labels:
                    raise AsmError(f"duplicate label {b.label!r} in {f.name!r}")
                labels.add(b.label)
                if not b.instructions:
                    raise AsmError(f"empty block {f.name}.{b.label}")
                for idx, ins in enumerate(b.instructions):
                    last = idx == len(b.instructions) - 1
                    if ins.is_transfer() and not last:
                        raise AsmError(
                            f"control transfer before end of block {f.name}.{b.label}",
                            ins.line,
                        )
                    self._check_instruction(ins)
            final = f.blocks[-1].instructions[-1]
            if not final.is_unconditional_transfer():
                raise AsmError(
                    f"function {f.name!r} can fall off its final block", final.line
                )
            for b in f.blocks:
                for ins in b.instructions:
                    if ins.opcode in BRANCHES and ins.target not in labels:
                        raise AsmError(
                            f"branch target {ins.target!r} not a label of {f.name!r}",
                            ins.line,
                        )
                    if ins.opcode == "jal":
                        if ins.target not in labels and self.function(ins.target) is None:
                            raise AsmError(
                                f"jal target {ins.target!r} unresolved", ins.line
                            )

        for blob in list(self.rodata) + list(self.data):
            for it in blob.items:
                if it.kind == "addr" and not self.resolves(it.value):
                    raise AsmError(f".addr symbol {it.value!r} unresolved")

        self._mark_address_taken()

    def _check_instruction(self, ins: Instruction) -> None:
        if ins.opcode in ("bld", "brl"):
            if ins.imm is None or not SID_MIN <= ins.imm <= SID_MAX:
                raise AsmError(
                    f"{ins.opcode} identifier {ins.imm} outside [{SID_MIN}, {SID_MAX}]",
                    ins.line,
                )
        elif ins.opcode in ("slli", "srli"):
            if not 0 <= (ins.imm or 0) <= 63:
                raise AsmError(f"shift amount {ins.imm} outside [0, 63]", ins.line)
        elif ins.opcode == "ecall":
            if ins.imm is None or ins.imm < 0:
                raise AsmError(f"ecall code {ins.imm} invalid", ins.line)
        elif ins.opcode == "jalr":
            if ins.indirect is None:
                if not ins.is_plain_return():
                    raise AsmError(
                        "jalr without @indirect must be the return form jalr zero, ra, 0",
                        ins.line,
                    )
            else:
                for t in ins.indirect.possible_targets:
                    if not self.resolves(t) or self.data_blob(t) is not None:
                        raise AsmError(
                            f"indirect target {t!r} is not a function or block", ins.line
                        )
        elif ins.opcode == "la":
            if not self.resolves(ins.target):
                raise AsmError(f"la symbol {ins.target!r} unresolved", ins.line)

    def _mark_address_taken(self) -> None:
        taken: set[str] = set()
        for f in self.functions:
            for b in f.blocks:
                for ins in b.instructions:
                    if ins.opcode == "la":
                        fn, label = split_target(ins.target)
                        if label is None and self.function(fn) is not None:
                            taken.add(fn)
        for blob in list(self.rodata) + list(self.data):
            for it in blob.items:
                if it.kind == "addr":
                    fn, label = split_target(it.value)
                    if label is None and self.function(fn) is not None:
                        taken.add(fn)
        for f in self.functions:
            f.address_taken = f.name in taken


def build_callgraph(p: Program) -> CallGraphSummary:
    """Collect annotated indirect sites and per-function address-taken flags."""
    sites: list[IndirectSite] = []
    for f in p.functions:
        for b in f.blocks:
            for idx, ins in enumerate(b.instructions):
                if ins.opcode == "jalr" and ins.indirect is not None:
                    sites.append(
                        IndirectSite(
                            function=f.name,
                            block=b.label,
                            index=idx,
                            kind=ins.indirect.kind,
                            declared_signature=ins.indirect.declared_signature,
                            possible_targets=ins.indirect.possible_targets,
                        )
                    )
    return CallGraphSummary(
        sites=sites, address_taken={f.name: f.address_taken for f in p.functions}
    )


def _fmt_ins(ins: Instruction) -> str:
    r = ABI_NAMES
    op = ins.opcode
    if op in ALU_RRR:
        body = f"{op} {r[ins.rd]}, {r[ins.rs1]}, {r[ins.rs2]}"
    elif op in ALU_RRI:
        body = f"{op} {r[ins.rd]}, {r[ins.rs1]}, {ins.imm}"
    elif op == "ld":
        body = f"ld {r[ins.rd]}, {ins.imm}({r[ins.rs1]})"
    elif op == "sd":
        body = f"sd {r[ins.rs2]}, {ins.imm}({r[ins.rs1]})"
    elif op in BRANCHES:
        body = f"{op} {r[ins.rs1]}, {r[ins.rs2]}, {ins.target}"
    elif op == "jal":
        body = f"jal {r[ins.rd]}, {ins.target}"
    elif op == "jalr":
        body = f"jalr {r[ins.rd]}, {r[ins.rs1]}, {ins.imm}"
    elif op == "ecall":
        body = f"ecall {ins.imm}"
    elif op in ("bld", "brl"):
        body = f"{op} {ins.imm}"
    elif op == "la":
        body = f"la {r[ins.rd]}, {ins.target}"
    else:
        raise ValueError(f"unknown opcode {op!r}")
    if ins.indirect is not None:
        a = ins.indirect
        kind = "call" if a.kind == "indirect_call" else "jump"
        parts = [f"@indirect kind={kind}"]
        if a.declared_signature is not None:
            parts.append(f"sig={a.declared_signature}")
        parts.append(f"targets=[{','.join(a.possible_targets)}]")
        body = f"{body}  {' '.join(parts)}"
    return body


def serialize_program(p: Program) -> str:
    """Canonical text form; parsing it back yields a structurally equal Program."""
    lines: list[str] = [f".entry {p.entry}", ""]
    for f in p.functions:
        lines.append(f".func {f.name}({f.signature})")
        for b in f.blocks:
            lines.append(f"{b.label}:")
            for ins in b.instructions:
                lines.append(f"    {_fmt_ins(ins)}")
        lines.append("")
    for section, blobs in ((".rodata", p.rodata), (".data", p.data)):
        if not blobs:
            continue
        lines.append(section)
        for blob in blobs:
            lines.append(f"{blob.symbol}:")
            run: list[int] = []
            for it in blob.items:
                if it.kind == "byte":
                    run.append(it.value)
                    if len(run) == 16:
                        lines.append("    .byte " + ", ".join(f"0x{v:02x}" for v in run))
                        run = []
                    continue
                if run:
                    lines.append("    .byte " + ", ".join(f"0x{v:02x}" for v in run))
                    run = []
                if it.kind == "word":
                    lines.append(f"    .word {it.value}")
                else:
                    lines.append(f"    .addr {it.value}")
            if run:
                lines.append("    .byte " + ", ".join(f"0x{v:02x}" for v in run))
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"
