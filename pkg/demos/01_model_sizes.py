"""Model sizes of the seven architecture families.

Counts are closed-form, so this runs instantly. The second table picks the
base channel count that gives each family's fully-connected embedding about
256M weights, and the third shows how each family grows with image size.
"""
from convbias.architectures import ArchSpec, Family, param_count, solve_alpha


def spec(family, alpha, s=32):
    family = Family(family)
    return ArchSpec(family, alpha=alpha, image_size=s, num_classes=10,
                    hidden=alpha if family is Family.THREE_FC else None)


print("weights at alpha=15 (deep) / alpha=150 (shallow), 32x32 RGB, 10 classes")
for f in Family:
    if f is Family.THREE_FC:
        continue
    a = 15 if f.deep else 150
    print(f"  {f.value:8s} alpha={a:<4d} {param_count(spec(f, a)):>14,d}")

print("\nsize matched to a 256M-weight fully-connected embedding")
for name in ("d-conv", "s-conv", "3-fc"):
    a = solve_alpha(name, 256 * 10 ** 6, 32, 10)
    floor = solve_alpha(name, 256 * 10 ** 6, 32, 10, rounding="floor")
    print(f"  {name:7s} nearest {a:>6d}   floor {floor:>6d}")

print("\ngrowth when the image side doubles (alpha=4)")
for f in (Family.D_CONV, Family.D_LOCAL, Family.D_FC, Family.S_LOCAL, Family.S_FC):
    r = param_count(spec(f, 4, 64)) / param_count(spec(f, 4, 32))
    print(f"  {f.value:8s} x{r:5.2f}")
