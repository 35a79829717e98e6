"""Description-length generalization bounds.

All lengths and log terms default to bits (base 2) so that description
lengths and ``log(2/delta)`` share units. Pass ``base=math.e`` to evaluate
every logarithm in nats instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _log(x, base):
    return math.log2(x) if base == 2 else math.log(x) / math.log(base)


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


@dataclass(frozen=True)
class BoundInput:
    train_loss: float
    m: int
    delta: float
    n: int
    k: int
    b: int
    nnz: int

    def __post_init__(self):
        if not 0.0 <= self.train_loss <= 1.0:
            raise ValueError("train_loss must be a 0-1 loss in [0, 1]")
        if self.m < 1 or self.n < 1 or self.b < 1:
            raise ValueError("m, n and b must be positive")
        if not 1 <= self.k <= self.n:
            raise ValueError(f"k must lie in [1, n], got k={self.k} n={self.n}")
        if not 0 <= self.nnz <= self.n:
            raise ValueError(f"nnz must lie in [0, n], got {self.nnz}")
        _check_delta(self.delta)


def dense_desc_len(n, b):
    """Bits of the fixed-length code storing ``n`` parameters at ``b`` bits each."""
    return n * b


def bound_theorem1(train_loss, desc_len_bits, m, delta, base=2):
    """``L_S + sqrt((|d(h)| + log(2/delta)) / 2m)`` for a prefix-free code."""
    _check_delta(delta)
    if m < 1:
        raise ValueError("m must be positive")
    return train_loss + math.sqrt((desc_len_bits + _log(2.0 / delta, base)) / (2.0 * m))


def sharing_desc_len(n, k, nnz, base=2):
    """Upper bound ``ceil(nnz * log(k n) + 2 log n)`` on the sharing-map code."""
    if n < 1 or k < 1:
        raise ValueError("n and k must be positive")
    if k > n or not 0 <= nnz <= n:
        raise ValueError(f"need k <= n and 0 <= nnz <= n (n={n}, k={k}, nnz={nnz})")
    return math.ceil(nnz * _log(k * n, base) + 2 * _log(n, base))


def bound_gap(inp: BoundInput, base=2):
    desc = sharing_desc_len(inp.n, inp.k, inp.nnz, base)
    return math.sqrt((inp.k * inp.b + desc + _log(2.0 * inp.n / inp.delta, base))
                     / (2.0 * inp.m))


def bound_theorem2(inp: BoundInput, base=2):
    """``L_S + sqrt((k b + |d(g)| + log(2n/delta)) / 2m)``."""
    return inp.train_loss + bound_gap(inp, base)


# ---------------------------------------------------------------------------
# concrete prefix-free code for sharing maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SharingMap:
    """Assignment of ``n`` weight slots to parameter indices ``1..k``.

    Slots assigned to ``zero_value_index`` hold the value zero. The encoder
    expects the canonical convention that the zero parameter, when present,
    is the last one (index ``k``).
    """
    assignment: tuple
    zero_value_index: int | None = None

    def __post_init__(self):
        a = tuple(int(v) for v in self.assignment)
        object.__setattr__(self, "assignment", a)
        if not a:
            raise ValueError("empty assignment")
        k = len(set(a))
        if min(a) < 1 or max(a) > k:
            raise ValueError("assignment must use exactly the indices 1..k")
        if self.zero_value_index is not None and not 1 <= self.zero_value_index <= k:
            raise ValueError("zero_value_index out of range")

    @property
    def n(self):
        return len(self.assignment)

    @property
    def k(self):
        return len(set(self.assignment))

    @property
    def nnz(self):
        z = self.zero_value_index
        return sum(1 for v in self.assignment if v != z)


def field_width(count):
    """Bits needed to write any of ``count`` distinct values."""
    return 0 if count <= 1 else (count - 1).bit_length()


def _bits(value, width):
    return format(value, f"0{width}b") if width else ""


def encode_sharing(smap: SharingMap) -> str:
    """Prefix-free bit string for ``smap``.

    Layout: number of nonzero slots (``ceil log2(n+1)`` bits), ``k - 1``
    (``ceil log2 n`` bits), then for every nonzero slot in increasing order
    its index (``ceil log2 n`` bits) and its parameter index minus one
    (``ceil log2 k`` bits). The headers fix the total length, so no codeword
    is a prefix of another.
    """
    n, k, z = smap.n, smap.k, smap.zero_value_index
    if z is not None and z != k:
        raise ValueError("zero parameter must be the last index (k)")
    wn, wk = field_width(n), field_width(k)
    support = [i for i, v in enumerate(smap.assignment) if v != z]
    out = [_bits(len(support), field_width(n + 1)), _bits(k - 1, wn)]
    for i in support:
        out.append(_bits(i, wn))
        out.append(_bits(smap.assignment[i] - 1, wk))
    return "".join(out)


def decode_sharing(bits: str, n: int):
    """Inverse of :func:`encode_sharing`. Returns ``(SharingMap, bits consumed)``."""
    pos = 0

    def take(width):
        nonlocal pos
        if pos + width > len(bits):
            raise ValueError("truncated codeword")
        chunk = bits[pos:pos + width]
        pos += width
        return int(chunk, 2) if width else 0

    nnz = take(field_width(n + 1))
    k = take(field_width(n)) + 1
    wn, wk = field_width(n), field_width(k)
    zero = k if nnz < n else None
    assignment = [zero] * n
    for _ in range(nnz):
        i = take(wn)
        assignment[i] = take(wk) + 1
    return SharingMap(tuple(assignment), zero), pos


def code_length(n, k, nnz):
    """Exact length in bits of :func:`encode_sharing` output."""
    return field_width(n + 1) + field_width(n) + nnz * (field_width(n) + field_width(k))


# ---------------------------------------------------------------------------
# network report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundReport:
    n: int
    k: int
    b: int
    nnz: int
    desc_len: int
    gap: float
    bound: float
    base: float = 2

    def rows(self):
        unit = "bits" if self.base == 2 else ("nats" if self.base == math.e else f"base-{self.base}")
        return [("n", self.n), ("k", self.k), ("b", self.b), ("||w||_0", self.nnz),
                (f"|d(g)| ({unit})", self.desc_len), ("gap", f"{self.gap:.6g}"),
                ("bound", f"{self.bound:.6g}"), ("log base", unit)]

    def table(self):
        rows = self.rows()
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def sparsity_k(n, nnz):
    """Distinct values for an unshared sparse vector: nonzeros plus a shared zero.

    A vector without zeros needs no zero value, which keeps ``k <= n``.
    """
    return nnz + 1 if nnz < n else n


def network_bound_report(network, m, delta, b, train_loss=0.0, base=2):
    """Sparsity-based bound for the weights of ``network`` (no value sharing)."""
    n = 0
    nnz = 0
    for p in network.weights():
        n += p.value.size
        nnz += int(np.count_nonzero(p.value))
    inp = BoundInput(train_loss=train_loss, m=m, delta=delta, n=n,
                     k=sparsity_k(n, nnz), b=b, nnz=nnz)
    desc = sharing_desc_len(n, inp.k, nnz, base)
    gap = bound_gap(inp, base)
    return BoundReport(n=n, k=inp.k, b=b, nnz=nnz, desc_len=desc, gap=gap,
                       bound=train_loss + gap, base=base)
