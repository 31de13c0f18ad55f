"""Source identifier assignment and authorization policy construction.

A granularity carves the program into source regions; every region gets a
31-bit source SID, and every protected landing site (function entry or
jump-target block) gets a target SID in its own namespace.  A policy then
says, per landing site, which source SIDs may reach it:

    func_type  call sites only; a call site may reach every address-taken
               function whose signature equals the site's declared one.
    cfg        calls and jumps; a site may reach exactly the targets its
               author listed, nothing else.

Policies are plain data consumed by the instrumenter and the harness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from branchland.ir import (
    CallGraphSummary,
    IndirectSite,
    Program,
    build_callgraph,
)

GRANULARITIES = ("module", "function", "basic_block", "custom")

MODULE_REGION = "<module>"


class PolicyError(Exception):
    pass


@dataclass(frozen=True)
class Granularity:
    kind: str
    groups: Mapping[str, str] | None = None  # "fn.label" -> group, custom only

    def __post_init__(self):
        if self.kind not in GRANULARITIES:
            raise ValueError(f"bad granularity kind {self.kind!r}")
        if (self.kind == "custom") != (self.groups is not None):
            raise ValueError("groups mapping is required exactly for custom granularity")

    @classmethod
    def module(cls) -> "Granularity":
        return cls("module")

    @classmethod
    def function(cls) -> "Granularity":
        return cls("function")

    @classmethod
    def basic_block(cls) -> "Granularity":
        return cls("basic_block")

    @classmethod
    def custom(cls, groups: Mapping[str, str]) -> "Granularity":
        return cls("custom", dict(groups))


@dataclass
class SidMap:
    granularity: Granularity
    region_to_sid: dict[str, int]
    target_to_sid: dict[str, int]

    def region_of_block(self, fn: str, label: str) -> str:
        g = self.granularity
        if g.kind == "module":
            return MODULE_REGION
        if g.kind == "function":
            return fn
        if g.kind == "basic_block":
            return f"{fn}.{label}"
        group = g.groups.get(f"{fn}.{label}")
        if group is None:
            raise PolicyError(f"block {fn}.{label} not covered by custom grouping")
        return group

    def sid_of_block(self, fn: str, label: str) -> int:
        return self.region_to_sid[self.region_of_block(fn, label)]

    def to_json(self) -> dict:
        return {
            "schema": "policy-v1",
            "granularity": self.granularity.kind,
            "groups": dict(self.granularity.groups) if self.granularity.groups else None,
            "regions": dict(sorted(self.region_to_sid.items(), key=lambda kv: kv[1])),
            "targets": dict(sorted(self.target_to_sid.items(), key=lambda kv: kv[1])),
        }


def assign_sids(p: Program, granularity: Granularity) -> SidMap:
    """Deterministic numbering: regions in first-appearance order (functions in
    declaration order, blocks in layout order), starting at 1; landing-site
    target SIDs likewise in their own namespace."""
    regions: dict[str, int] = {}
    g = granularity
    if g.kind == "module":
        regions[MODULE_REGION] = 1
    else:
        tmp = SidMap(granularity=g, region_to_sid={}, target_to_sid={})
        for f in p.functions:
            for b in f.blocks:
                name = tmp.region_of_block(f.name, b.label)
                if name not in regions:
                    regions[name] = len(regions) + 1

    targets: dict[str, int] = {}
    for f in p.functions:
        if f.address_taken:
            targets[f.name] = len(targets) + 1
    for site in build_callgraph(p).sites:
        for t in site.possible_targets:
            if t not in targets:
                targets[t] = len(targets) + 1
    return SidMap(granularity=g, region_to_sid=regions, target_to_sid=targets)


@dataclass
class AuthorizationPolicy:
    kind: str  # "func_type" | "cfg"
    sidmap: SidMap
    allowed_sources: dict[int, set[int]] = field(default_factory=dict)
    target_sids: dict[str, int] = field(default_factory=dict)
    site_targets: dict[IndirectSite, tuple[str, ...]] = field(default_factory=dict)
    site_sids: dict[IndirectSite, int] = field(default_factory=dict)

    @property
    def granularity(self) -> Granularity:
        return self.sidmap.granularity

    def protected_sites(self) -> list[IndirectSite]:
        return list(self.site_sids)

    def to_json(self) -> dict:
        return {
            "schema": "policy-v1",
            "kind": self.kind,
            "granularity": self.sidmap.granularity.kind,
            "regions": dict(sorted(self.sidmap.region_to_sid.items(), key=lambda kv: kv[1])),
            "targets": dict(sorted(self.target_sids.items(), key=lambda kv: kv[1])),
            "allowed_sources": {
                str(t): sorted(srcs) for t, srcs in sorted(self.allowed_sources.items())
            },
            "sites": [
                {
                    "function": s.function,
                    "block": s.block,
                    "index": s.index,
                    "kind": s.kind,
                    "signature": str(s.declared_signature) if s.declared_signature else None,
                    "possible_targets": list(s.possible_targets),
                    "sid": self.site_sids.get(s),
                    "targets": list(self.site_targets.get(s, ())),
                }
                for s in self.site_targets
            ],
        }


def _site_sid(sm: SidMap, site: IndirectSite) -> int:
    return sm.sid_of_block(site.function, site.block)


def build_func_policy(p: Program, sm: SidMap) -> AuthorizationPolicy:
    """Type-based policy: a call site reaches every address-taken function
    with a structurally equal signature.  Indirect jumps stay unprotected."""
    summary = build_callgraph(p)
    pol = AuthorizationPolicy(kind="func_type", sidmap=sm)
    taken = [f for f in p.functions if f.address_taken]
    for f in taken:
        pol.target_sids[f.name] = sm.target_to_sid[f.name]
        pol.allowed_sources[sm.target_to_sid[f.name]] = set()
    for site in summary.sites:
        if site.kind != "indirect_call":
            continue
        if site.declared_signature is None:
            raise PolicyError(
                f"indirect_call at {site.function}.{site.block}#{site.index} "
                "has no declared signature"
            )
        sid = _site_sid(sm, site)
        matches = tuple(f.name for f in taken if f.signature == site.declared_signature)
        pol.site_targets[site] = matches
        pol.site_sids[site] = sid
        for name in matches:
            pol.allowed_sources[sm.target_to_sid[name]].add(sid)
    return pol


def build_cfg_policy(p: Program, sm: SidMap) -> AuthorizationPolicy:
    """Author-declared policy: each site reaches exactly its listed targets.
    Covers indirect jumps as well as calls.  Address-taken functions nobody
    lists keep an empty source set, which encodes to a filter that rejects
    everything."""
    summary = build_callgraph(p)
    pol = AuthorizationPolicy(kind="cfg", sidmap=sm)
    for f in p.functions:
        if f.address_taken:
            pol.target_sids[f.name] = sm.target_to_sid[f.name]
            pol.allowed_sources[sm.target_to_sid[f.name]] = set()
    for site in summary.sites:
        sid = _site_sid(sm, site)
        seen: list[str] = []
        for t in site.possible_targets:
            if t not in seen:
                seen.append(t)
        pol.site_targets[site] = tuple(seen)
        pol.site_sids[site] = sid
        for t in seen:
            sid_t = sm.target_to_sid[t]
            pol.target_sids[t] = sid_t
            pol.allowed_sources.setdefault(sid_t, set()).add(sid)
    return pol


@dataclass
class EcReport:
    """Equivalence-class stats over indirect call sites (jumps excluded so
    the two policy kinds stay comparable)."""

    sites: int
    avg_ec: float
    max_ec: int
    reduction_pct: float | None = None

    def to_json(self) -> dict:
        return {
            "sites": self.sites,
            "avg_ec": self.avg_ec,
            "max_ec": self.max_ec,
            "reduction_pct": self.reduction_pct,
        }


def ec_report(policy: AuthorizationPolicy, baseline: AuthorizationPolicy | None = None) -> EcReport:
    ecs = [
        len(set(targets))
        for site, targets in policy.site_targets.items()
        if site.kind == "indirect_call"
    ]
    avg = sum(ecs) / len(ecs) if ecs else 0.0
    report = EcReport(sites=len(ecs), avg_ec=avg, max_ec=max(ecs, default=0))
    if baseline is not None:
        base = ec_report(baseline)
        if base.sites and base.avg_ec > 0:
            report.reduction_pct = 100.0 * (1.0 - avg / base.avg_ec)
    return report
