"""Weighted-cycle cost model over retired-instruction histograms.

Costs are per histogram class, not per instruction shape, so any two runs
with equal histograms get equal cycles by construction.  The three named
models differ only in the landing-check cost: brl3 treats the filter walk
as pipelined (optimistic), brl5 charges a short stall (the default
reading), brl10 prices it like a trap-adjacent serializing op
(conservative).
"""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

from branchland.vm import HIST_CLASSES

_BASE_WEIGHTS = {
    "alu": 1,
    "bld": 1,
    "untaken_branch": 1,
    "taken_branch": 2,
    "jump": 2,
    "load_store": 3,
    "ecall": 10,
}


@dataclass(frozen=True)
class CycleModel:
    name: str
    weights: Mapping[str, int]

    def __post_init__(self):
        missing = set(HIST_CLASSES) - set(self.weights)
        if missing:
            raise ValueError(f"model {self.name!r} missing weights for {sorted(missing)}")
        for cls, w in self.weights.items():
            if w < 1:
                raise ValueError(f"model {self.name!r}: weight {cls}={w} below 1")
        object.__setattr__(self, "weights", MappingProxyType(dict(self.weights)))

    @classmethod
    def with_brl_cost(cls, name: str, brl_cost: int) -> "CycleModel":
        return cls(name=name, weights={**_BASE_WEIGHTS, "brl": brl_cost})


MODELS: dict[str, CycleModel] = {
    "brl3": CycleModel.with_brl_cost("brl3", 3),
    "brl5": CycleModel.with_brl_cost("brl5", 5),
    "brl10": CycleModel.with_brl_cost("brl10", 10),
}


def weighted_cycles(model: CycleModel, histogram: Mapping[str, int]) -> int:
    unknown = set(histogram) - set(model.weights)
    if unknown:
        raise ValueError(f"histogram has classes {sorted(unknown)} unknown to {model.name}")
    return sum(model.weights[c] * n for c, n in histogram.items())


def overhead_pct(
    model: CycleModel, base: Mapping[str, int], inst: Mapping[str, int]
) -> float:
    """Relative cycle cost of the instrumented run over the baseline run."""
    wb = weighted_cycles(model, base)
    if wb == 0:
        raise ValueError("baseline histogram has zero weighted cycles")
    return 100.0 * (weighted_cycles(model, inst) - wb) / wb


def cfi_density_pct(histogram: Mapping[str, int]) -> float:
    """Share of retired instructions that are check instructions."""
    total = sum(histogram.values())
    if total == 0:
        return 0.0
    return 100.0 * (histogram.get("bld", 0) + histogram.get("brl", 0)) / total
