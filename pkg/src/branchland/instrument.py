"""Inserts the landing-check instruction pair and attaches metadata.

For every site the policy protects, a bld carrying the site's source SID
goes immediately before the jalr (the pair must stay adjacent: bld arms
exactly the next transfer).  Every protected landing target gets a brl
carrying its target SID as the new first instruction, and the packed
filter image lands in rodata under the reserved symbol __brl_meta.

The input program is never touched; the result is a fresh copy whose diff
against the input is insertions only.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

from branchland import bloom
from branchland.ir import DataBlob, DataItem, IndirectSite, Instruction, Program, split_target
from branchland.policy import AuthorizationPolicy, SidMap

META_SYMBOL = "__brl_meta"


class InstrumentError(Exception):
    pass


@dataclass
class InstrumentedProgram:
    program: Program
    metadata: bloom.MetadataImage
    site_index: dict[IndirectSite, int]
    landing_index: dict[str, int]


@dataclass
class SizeReport:
    base_text_instrs: int
    inst_text_instrs: int
    text_overhead_pct: float
    rodata_meta_bytes: int
    total_overhead_pct: float

    def to_json(self) -> dict:
        return {
            "schema": "report-v1",
            "kind": "size",
            "base_text_instrs": self.base_text_instrs,
            "inst_text_instrs": self.inst_text_instrs,
            "text_overhead_pct": self.text_overhead_pct,
            "rodata_meta_bytes": self.rodata_meta_bytes,
            "total_overhead_pct": self.total_overhead_pct,
        }


def is_instrumented(p: Program) -> bool:
    if p.data_blob(META_SYMBOL) is not None:
        return True
    return any(
        ins.opcode in ("bld", "brl")
        for f in p.functions
        for b in f.blocks
        for ins in b.instructions
    )


def _count_instrs(p: Program) -> int:
    return sum(len(b.instructions) for f in p.functions for b in f.blocks)


def _rodata_bytes(p: Program) -> int:
    return sum(blob.byte_size for blob in p.rodata)


def instrument(
    p: Program,
    sm: SidMap,
    policy: AuthorizationPolicy,
    fp_target: float = 1e-3,
    seed1: int = 0,
    seed2: int = 0,
) -> InstrumentedProgram:
    if is_instrumented(p):
        raise InstrumentError("program already carries bld/brl or __brl_meta")

    out = copy.deepcopy(p)

    by_block: dict[tuple[str, str], list[IndirectSite]] = {}
    for site in policy.site_sids:
        by_block.setdefault((site.function, site.block), []).append(site)
    for (fn_name, label), sites in by_block.items():
        block = out.function(fn_name).block(label)
        for site in sorted(sites, key=lambda s: s.index, reverse=True):
            ins = block.instructions[site.index]
            if ins.opcode != "jalr" or ins.indirect is None:
                raise InstrumentError(
                    f"policy site {fn_name}.{label}#{site.index} is not an indirect jalr"
                )
            block.instructions.insert(
                site.index, Instruction("bld", imm=policy.site_sids[site])
            )

    # Two protected targets must not share a landing address, or the one
    # brl that executes there would check the wrong filter.
    landing_blocks: dict[tuple[str, str], str] = {}
    for name in policy.target_sids:
        fn_name, label = split_target(name)
        f = out.function(fn_name)
        if f is None:
            raise InstrumentError(f"protected target {name!r} has no function")
        if label is None:
            key = (fn_name, f.blocks[0].label)
        else:
            if f.block(label) is None:
                raise InstrumentError(f"protected target {name!r} has no block")
            key = (fn_name, label)
        if key in landing_blocks:
            raise InstrumentError(
                f"targets {landing_blocks[key]!r} and {name!r} share a landing address"
            )
        landing_blocks[key] = name
        block = out.function(key[0]).block(key[1])
        block.instructions.insert(0, Instruction("brl", imm=policy.target_sids[name]))

    metadata = bloom.build_image(
        {sid_t: set(srcs) for sid_t, srcs in policy.allowed_sources.items()},
        target_fp=fp_target,
        seed1=seed1,
        seed2=seed2,
    )
    blob_bytes = bloom.serialize_image(metadata)
    out.rodata.append(
        DataBlob(
            symbol=META_SYMBOL,
            items=[DataItem("byte", v) for v in blob_bytes],
            writable=False,
        )
    )
    out.validate()
    return InstrumentedProgram(
        program=out,
        metadata=metadata,
        site_index=dict(policy.site_sids),
        landing_index=dict(policy.target_sids),
    )


def size_report(base: Program, inst: InstrumentedProgram) -> SizeReport:
    base_n = _count_instrs(base)
    inst_n = _count_instrs(inst.program)
    meta_blob = inst.program.data_blob(META_SYMBOL)
    meta_bytes = meta_blob.byte_size if meta_blob is not None else 0
    base_total = 4 * base_n + _rodata_bytes(base)
    inst_total = 4 * inst_n + _rodata_bytes(inst.program)
    return SizeReport(
        base_text_instrs=base_n,
        inst_text_instrs=inst_n,
        text_overhead_pct=100.0 * (inst_n - base_n) / base_n if base_n else 0.0,
        rodata_meta_bytes=meta_bytes,
        total_overhead_pct=100.0 * (inst_total - base_total) / base_total
        if base_total
        else 0.0,
    )
