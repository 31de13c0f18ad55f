"""Bundled benchmark programs in the toy dialect.

Each .brl.s file is a standalone program with a deterministic printed
checksum. The harness runs every program uninstrumented and under both
policy kinds and expects identical output across all three.
"""
