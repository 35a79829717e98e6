"""Generalization bounds from description length.

A dense network costs b bits per weight. If most weights are zero and the
rest take few distinct values, describing which slot holds which value can
be far cheaper, and the bound tightens accordingly.
"""
import math

from convbias import mdl
from convbias.architectures import ArchSpec, Family, build

m, delta, b = 50_000, 0.05, 32
n = 10 ** 6
print(f"n={n:,} weights, m={m:,} examples, delta={delta}, b={b} bits per value")
print(f"  dense:       gap {mdl.bound_theorem1(0.0, mdl.dense_desc_len(n, b), m, delta):8.3f}")
for nnz in (10 ** 5, 10 ** 4, 10 ** 3):
    k = mdl.sparsity_k(n, nnz)
    gap = mdl.bound_gap(mdl.BoundInput(0.0, m, delta, n, k, b, nnz))
    print(f"  nnz={nnz:>7,d}: gap {gap:8.3f}")
for k in (2, 16, 256):
    gap = mdl.bound_gap(mdl.BoundInput(0.0, m, delta, n, k, 8, 10 ** 4))
    print(f"  nnz=10,000 shared by k={k:<3d} values at 8 bits: gap {gap:8.3f}")

print("\nthe encoder behind the count, on a tiny example")
smap = mdl.SharingMap((1, 3, 2, 3), zero_value_index=3)
bits = mdl.encode_sharing(smap)
print(f"  slots {smap.assignment} -> {bits} ({len(bits)} bits)")
print(f"  decoded back: {mdl.decode_sharing(bits, 4)[0].assignment}")

net = build(ArchSpec(Family.S_FC, alpha=2, image_size=8, num_classes=3))
print("\nbound report for a freshly built dense network")
print(mdl.network_bound_report(net, m=m, delta=delta, b=b, base=math.e).table())
