"""branchland: a desk-scale sandbox for landing-pad forward-edge CFI.

The pieces, in pipeline order:

    ir / asm     toy RISC-style program IR and its assembly dialect
    policy       source/target identifier assignment and authorization sets
    bloom        Bloom-filter authorization metadata (packed image format)
    instrument   inserts bld/brl and attaches the metadata image
    vm           interpreter that enforces the landing checks
    cycles, attacks, evaluate, cli
                 weighted-cycle model, attack scenarios, corpus evaluation
"""

__version__ = "0.1.0"

from branchland.kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
