"""Bloom-filter authorization sets and the packed metadata image.

Each protected landing site owns one filter holding the source identifiers
allowed to reach it.  A membership probe derives k bit positions from two
hashes of (sid, seed) and strides through the filter; false negatives are
impossible, false positives are bounded by the analytic rate
(1 - e^(-k*n/m))^k.

The on-disk/in-rodata form is a single little-endian image:

    header      magic "BRLF" | version u16 | k u8 | reserved u8
                | seed1 u64 | seed2 u64 | entry_count u32
    descriptors entry_count * (sid_t u32 | offset_bytes u32 | m_bits u32),
                sorted ascending by sid_t
    bit region  concatenated filters, each a whole number of 64-bit words

Bit b of a filter lives at bit (b mod 64) of little-endian word (b div 64),
which is plain byte b>>3, mask 1<<(b&7).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

from branchland import kernels

MAGIC = b"BRLF"
VERSION = 1
SID_MIN = 1
SID_MAX = (1 << 31) - 1

_HEADER = struct.Struct("<4sHBBQQI")
_DESC = struct.Struct("<III")


class MalformedImageError(ValueError):
    """Raised for a metadata image that fails structural validation.

    offset is the byte position of the offending field where one exists.
    """

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


def _check_sid(sid: int, what: str = "sid") -> None:
    if not SID_MIN <= sid <= SID_MAX:
        raise ValueError(f"{what} {sid} outside [{SID_MIN}, {SID_MAX}]")


@dataclass(frozen=True)
class FilterParams:
    m_bits: int
    k: int
    seed1: int = 0
    seed2: int = 0

    def __post_init__(self):
        if self.m_bits < 64 or self.m_bits % 64:
            raise ValueError(f"m_bits must be a positive multiple of 64, got {self.m_bits}")
        if not 1 <= self.k <= 8:
            raise ValueError(f"k must be in [1, 8], got {self.k}")


@dataclass
class BloomFilter:
    params: FilterParams
    bits: bytes
    n_inserted: int = 0

    def __post_init__(self):
        if len(self.bits) * 8 != self.params.m_bits:
            raise ValueError("bits length does not match m_bits")

    def popcount(self) -> int:
        return int.from_bytes(self.bits, "little").bit_count()


def analytic_fp(m: int, k: int, n: int) -> float:
    """Expected false-positive rate of a k-probe filter of m bits holding n keys."""
    if m <= 0 or k <= 0 or n < 0:
        raise ValueError("need m > 0, k > 0, n >= 0")
    return (1.0 - math.exp(-k * n / m)) ** k


def size_filter(n: int, target_fp: float) -> tuple[int, int]:
    """Choose (m, k) for n keys so the analytic rate meets target_fp.

    m starts at the classic optimum n*ln(1/fp)/ln(2)^2 rounded up to a
    64-bit word boundary, k = round(m/n * ln 2) clamped to [1, 8]; with k
    clamped the analytic rate can still miss the target, so m grows by
    words until it holds.
    """
    if not 0.0 < target_fp < 1.0:
        raise ValueError(f"target_fp must be in (0, 1), got {target_fp}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if n == 0:
        return 64, 1
    ln2 = math.log(2.0)
    m = max(64, 64 * math.ceil(math.ceil(n * -math.log(target_fp) / (ln2 * ln2)) / 64))
    while True:
        k = min(8, max(1, round(m / n * ln2)))
        if analytic_fp(m, k, n) <= target_fp:
            return m, k
        m += 64


def hash_positions(sid: int, params: FilterParams) -> list[int]:
    """The k probe positions for sid under params, in probe order."""
    _check_sid(sid)
    return kernels.hash_positions(sid, params.seed1, params.seed2, params.m_bits, params.k)


def encode(allowed: set[int], params: FilterParams) -> BloomFilter:
    """Build a filter with every sid in allowed inserted."""
    buf = bytearray(params.m_bits // 8)
    for sid in allowed:
        _check_sid(sid)
        for b in kernels.hash_positions(sid, params.seed1, params.seed2, params.m_bits, params.k):
            buf[b >> 3] |= 1 << (b & 7)
    return BloomFilter(params=params, bits=bytes(buf), n_inserted=len(allowed))


def query(f: BloomFilter, sid: int) -> bool:
    """True iff all k probed bits are set.  Always reads exactly k bits."""
    _check_sid(sid)
    p = f.params
    return kernels.filter_query(f.bits, p.m_bits, p.k, p.seed1, p.seed2, sid)


@dataclass(frozen=True)
class FilterDescriptor:
    sid_t: int
    offset_bytes: int
    m_bits: int


@dataclass
class MetadataImage:
    k: int
    seed1: int
    seed2: int
    descriptors: tuple[FilterDescriptor, ...]
    bit_region: bytes

    def __post_init__(self):
        self._checked = False

    @property
    def entry_count(self) -> int:
        return len(self.descriptors)

    def validate(self) -> None:
        if self._checked:
            return
        if not 1 <= self.k <= 8:
            raise MalformedImageError(f"probe count k={self.k} outside [1, 8]")
        prev_sid = 0
        spans = []
        for d in self.descriptors:
            if not SID_MIN <= d.sid_t <= SID_MAX:
                raise MalformedImageError(f"descriptor sid_t {d.sid_t} out of range")
            if d.sid_t <= prev_sid:
                raise MalformedImageError(
                    f"descriptors not strictly ascending at sid_t {d.sid_t}"
                )
            prev_sid = d.sid_t
            if d.m_bits < 64 or d.m_bits % 64:
                raise MalformedImageError(
                    f"descriptor sid_t {d.sid_t}: m_bits {d.m_bits} not a positive multiple of 64"
                )
            end = d.offset_bytes + d.m_bits // 8
            if d.offset_bytes % 8 or end > len(self.bit_region):
                raise MalformedImageError(
                    f"descriptor sid_t {d.sid_t}: range [{d.offset_bytes}, {end}) "
                    f"outside {len(self.bit_region)}-byte bit region"
                )
            spans.append((d.offset_bytes, end, d.sid_t))
        spans.sort()
        for (a0, a1, s_a), (b0, _b1, s_b) in zip(spans, spans[1:]):
            if b0 < a1:
                raise MalformedImageError(
                    f"filter ranges of sid_t {s_a} and sid_t {s_b} overlap"
                )
        self._checked = True

    def filter_for(self, sid_t: int) -> BloomFilter | None:
        d = lookup_descriptor(self, sid_t)
        if d is None:
            return None
        bits = self.bit_region[d.offset_bytes : d.offset_bytes + d.m_bits // 8]
        return BloomFilter(
            params=FilterParams(d.m_bits, self.k, self.seed1, self.seed2), bits=bits
        )


def build_image(
    allowed: dict[int, set[int]],
    target_fp: float = 1e-3,
    seed1: int = 0,
    seed2: int = 0,
) -> MetadataImage:
    """Pack one filter per landing site into a single image.

    The probe count is global (hardware runs one loop), so k is the max of
    the per-site choices and each m is then re-sized upward until its
    analytic rate meets target_fp under that k.  Sites with no allowed
    sources get an all-zero single-word filter: every probe fails, closed.
    """
    if not 0.0 < target_fp < 1.0:
        raise ValueError(f"target_fp must be in (0, 1), got {target_fp}")
    for sid_t, sources in allowed.items():
        _check_sid(sid_t, "sid_t")
        for s in sources:
            _check_sid(s)
    k = 1
    for sources in allowed.values():
        k = max(k, size_filter(len(sources), target_fp)[1])
    descs = []
    chunks = []
    offset = 0
    for sid_t in sorted(allowed):
        sources = allowed[sid_t]
        if not sources:
            m = 64
            bits = bytes(8)
        else:
            m = 64
            while analytic_fp(m, k, len(sources)) > target_fp:
                m += 64
            bits = encode(sources, FilterParams(m, k, seed1, seed2)).bits
        descs.append(FilterDescriptor(sid_t=sid_t, offset_bytes=offset, m_bits=m))
        chunks.append(bits)
        offset += m // 8
    return MetadataImage(
        k=k, seed1=seed1, seed2=seed2, descriptors=tuple(descs), bit_region=b"".join(chunks)
    )


def lookup_descriptor(image: MetadataImage, sid_t: int) -> FilterDescriptor | None:
    """Binary search by sid_t; None when the site is not in the image."""
    image.validate()
    lo, hi = 0, len(image.descriptors)
    while lo < hi:
        mid = (lo + hi) // 2
        d = image.descriptors[mid]
        if d.sid_t == sid_t:
            return d
        if d.sid_t < sid_t:
            lo = mid + 1
        else:
            hi = mid
    return None


def serialize_image(image: MetadataImage) -> bytes:
    image.validate()
    out = [
        _HEADER.pack(
            MAGIC, VERSION, image.k, 0, image.seed1, image.seed2, image.entry_count
        )
    ]
    for d in image.descriptors:
        out.append(_DESC.pack(d.sid_t, d.offset_bytes, d.m_bits))
    out.append(image.bit_region)
    return b"".join(out)


def parse_image(blob: bytes) -> MetadataImage:
    if len(blob) < _HEADER.size:
        raise MalformedImageError(
            f"truncated header: {len(blob)} bytes, need {_HEADER.size}", offset=len(blob)
        )
    magic, version, k, reserved, seed1, seed2, entry_count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise MalformedImageError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise MalformedImageError(f"unsupported version {version}", offset=4)
    if reserved != 0:
        raise MalformedImageError(f"reserved byte is {reserved}", offset=7)
    region_start = _HEADER.size + entry_count * _DESC.size
    if region_start > len(blob):
        raise MalformedImageError(
            f"descriptor table for {entry_count} entries overruns the blob",
            offset=len(blob),
        )
    descs = []
    for i in range(entry_count):
        sid_t, offset_bytes, m_bits = _DESC.unpack_from(blob, _HEADER.size + i * _DESC.size)
        descs.append(FilterDescriptor(sid_t=sid_t, offset_bytes=offset_bytes, m_bits=m_bits))
    image = MetadataImage(
        k=k,
        seed1=seed1,
        seed2=seed2,
        descriptors=tuple(descs),
        bit_region=blob[region_start:],
    )
    image.validate()
    return image
