"""The deep/shallow convolutional families, their embeddings, and 3-FC.

Each convolutional family comes in three variants: the convolutional
original, a locally-connected version with identical receptive fields but no
weight sharing, and a fully-connected version whose dense layers keep the
per-layer output size (channels x spatial positions) of the layer they
replace.

``param_count`` gives the closed-form weight counts (biases and batch-norm
parameters excluded); ``built_weight_count`` counts what ``build`` actually
allocates.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .functional import output_size
from .layers import (BatchNorm, Conv2D, CONV_LIKE, Dense, Dropout, FC_LIKE,
                     Flatten, Local2D, ReLU)
from .network import Network


class Family(str, enum.Enum):
    D_CONV = "d-conv"
    D_LOCAL = "d-local"
    D_FC = "d-fc"
    S_CONV = "s-conv"
    S_LOCAL = "s-local"
    S_FC = "s-fc"
    THREE_FC = "3-fc"

    @property
    def deep(self):
        return self in (Family.D_CONV, Family.D_LOCAL, Family.D_FC)

    @property
    def shallow(self):
        return self in (Family.S_CONV, Family.S_LOCAL, Family.S_FC)

    @property
    def variant(self):
        """One of "conv", "local", "fc" ("mlp" for 3-FC)."""
        if self is Family.THREE_FC:
            return "mlp"
        return self.value.split("-")[1]

    @property
    def fc_embedding(self):
        if self.deep:
            return Family.D_FC
        if self.shallow:
            return Family.S_FC
        return Family.THREE_FC


# (output-channel multiplier, stride) for the eight 3x3 layers of the deep family
DEEP_PLAN = ((1, 1), (2, 2), (2, 1), (4, 2), (4, 1), (8, 2), (8, 1), (16, 2))
SHALLOW_KERNEL, SHALLOW_STRIDE, SHALLOW_PAD = 9, 2, 4


@dataclass(frozen=True)
class ArchSpec:
    family: Family
    alpha: int = 1
    image_size: int = 32
    in_channels: int = 3
    num_classes: int = 10
    hidden: int | None = None
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        self.validate()

    def validate(self):
        f, s = self.family, self.image_size
        if s < 1 or self.in_channels < 1:
            raise ValueError("image_size and in_channels must be positive")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.alpha < 1:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if f.deep and s % 16:
            raise ValueError(f"{f.value} needs image_size divisible by 16, got {s}")
        if f.shallow and s % 2:
            raise ValueError(f"{f.value} needs an even image_size, got {s}")
        if f is Family.THREE_FC and (self.hidden is None or self.hidden < 1):
            raise ValueError("3-fc needs a positive hidden width")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self):
        return {"family": self.family.value, "alpha": self.alpha,
                "image_size": self.image_size, "in_channels": self.in_channels,
                "num_classes": self.num_classes, "hidden": self.hidden,
                "dropout": self.dropout}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------------------
# closed-form counts
# ---------------------------------------------------------------------------

def layer_param_counts(spec: ArchSpec) -> dict[str, int]:
    """Per-layer weight counts, row by row as in the architecture tables.

    For the deep locally-connected variant the tabulated rows
    ``9 s^2 a^2 / 2^(j-1)`` are reproduced as printed, even though they
    undercount a true locally-connected layer for j >= 3.
    """
    f, a, s, C, c = spec.family, spec.alpha, spec.image_size, spec.in_channels, spec.num_classes
    rows = {}
    if f is Family.THREE_FC:
        h = spec.hidden
        return {"fc1": C * s * s * h, "fc2": h * h, "fc3": h * c}
    if f.deep:
        if f is Family.D_CONV:
            rows["conv1"] = 9 * C * a
            for j in range(2, 9):
                rows[f"conv{j}"] = 9 * 2 ** (j - 1) * a * a
        elif f is Family.D_LOCAL:
            rows["conv1"] = 9 * C * s * s * a
            for j in range(2, 9):
                rows[f"conv{j}"] = 9 * s * s * a * a // 2 ** (j - 1)
        else:
            rows["conv1"] = C * s ** 4 * a
            for j in range(2, 9):
                rows[f"conv{j}"] = s ** 4 * a * a // 2 ** (j - 1)
        rows["fc1"] = 4 * s * s * a * a
        rows["fc2"] = 64 * c * a
        return rows
    if f is Family.S_CONV:
        rows["conv1"] = 81 * C * a
    elif f is Family.S_LOCAL:
        rows["conv1"] = 81 * C * s * s * a // 4
    else:
        rows["conv1"] = C * s ** 4 * a // 4
    rows["fc1"] = 6 * s * s * a * a
    rows["fc2"] = 24 * c * a
    return rows


def param_count(spec: ArchSpec) -> int:
    """Closed-form weight count (biases and batch-norm parameters excluded)."""
    return sum(layer_param_counts(spec).values())


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def _block(layers, core, features, dropout_before=None):
    if dropout_before is not None:
        layers.append(dropout_before)
    layers.append(core)
    layers.append(BatchNorm(features, f"{core.name}.bn"))
    layers.append(ReLU(f"{core.name}.relu"))


def _replace_conv(variant, name, cin, cout, size, kernel, stride, pad, layers, flat):
    """Append the conv/local/dense layer for one conv position.

    Returns ``(out_size, flat)``; ``flat`` tracks whether activations are
    already flattened (dense variants).
    """
    out = output_size(size, kernel, stride, pad)
    if variant == "conv":
        core = Conv2D(cin, cout, kernel, stride, pad, name, group=CONV_LIKE)
        _block(layers, core, cout)
    elif variant == "local":
        core = Local2D(cin, cout, size, kernel, stride, pad, name, group=CONV_LIKE)
        _block(layers, core, cout)
    else:
        if not flat:
            layers.append(Flatten(f"{name}.flatten"))
            flat = True
        core = Dense(cin * size * size, cout * out * out, name, group=CONV_LIKE)
        _block(layers, core, cout * out * out)
    return out, flat


def build_layers(spec: ArchSpec):
    """Unallocated layer list for ``spec`` (cheap; no parameter arrays)."""
    spec.validate()
    f, a, s, C = spec.family, spec.alpha, spec.image_size, spec.in_channels
    drop = spec.dropout
    layers = []

    def maybe_dropout(name):
        return Dropout(drop, f"{name}.dropout") if drop > 0 else None

    if f is Family.THREE_FC:
        h = spec.hidden
        layers.append(Flatten("flatten"))
        _block(layers, Dense(C * s * s, h, "fc1", group=CONV_LIKE), h)
        _block(layers, Dense(h, h, "fc2", group=FC_LIKE), h, maybe_dropout("fc2"))
        if drop > 0:
            layers.append(maybe_dropout("fc3"))
        layers.append(Dense(h, spec.num_classes, "fc3", group=FC_LIKE))
        return layers

    variant = f.variant
    flat = False
    size, cin = s, C
    if f.deep:
        for j, (mult, stride) in enumerate(DEEP_PLAN, start=1):
            cout = mult * a
            size, flat = _replace_conv(variant, f"conv{j}", cin, cout, size, 3, stride, 1,
                                       layers, flat)
            cin = cout
        hidden = 64 * a
    else:
        size, flat = _replace_conv(variant, "conv1", C, a, s, SHALLOW_KERNEL,
                                   SHALLOW_STRIDE, SHALLOW_PAD, layers, flat)
        cin = a
        hidden = 24 * a
    if not flat:
        layers.append(Flatten("flatten"))
    _block(layers, Dense(cin * size * size, hidden, "fc1", group=FC_LIKE), hidden,
           maybe_dropout("fc1"))
    if drop > 0:
        layers.append(maybe_dropout("fc2"))
    layers.append(Dense(hidden, spec.num_classes, "fc2", group=FC_LIKE))
    return layers


def build(spec: ArchSpec, seed=0, dtype=np.float32, canonical_input_sum=False):
    """Allocate and initialize the network described by ``spec``.

    ``canonical_input_sum`` switches the first dense layer (FC variants only)
    to value-sorted reductions so that relabeling input pixels commutes
    bit-exactly with the forward pass.
    """
    layers = build_layers(spec)
    if canonical_input_sum:
        first = first_weight_layer(layers)
        if not isinstance(first, Dense):
            raise ValueError("canonical input sums need a dense first layer")
        first.canonical_sum = True
    shape = (spec.in_channels, spec.image_size, spec.image_size)
    return Network(layers, shape, seed=seed, dtype=dtype)


def first_weight_layer(layers):
    for layer in layers:
        if layer.param_shapes():
            return layer
    raise ValueError("no parameterized layer")


def built_weight_count(spec: ArchSpec) -> int:
    """Weights ``build(spec)`` would allocate, computed from shapes only."""
    total = 0
    for layer in build_layers(spec):
        for shape, group in layer.param_shapes().values():
            if group != "norm_bias":
                total += math.prod(shape)
    return total


def built_layer_counts(spec: ArchSpec) -> dict[str, int]:
    out = {}
    for layer in build_layers(spec):
        shapes = layer.param_shapes()
        if "weight" in shapes:
            out[layer.name] = math.prod(shapes["weight"][0])
    return out


# ---------------------------------------------------------------------------
# sizing
# ---------------------------------------------------------------------------

def solve_alpha(family, target_fc_embedding, s, c, in_channels=3, rounding="nearest"):
    """Base channels (or 3-FC hidden width) sizing the FC embedding to a target.

    ``rounding="floor"`` returns the largest size whose FC-embedding count does
    not exceed the target; ``"nearest"`` returns whichever of that size and
    the next one lands closer to the target (ties go to the smaller).
    """
    family = Family(family)
    if rounding not in ("floor", "nearest"):
        raise ValueError(f"unknown rounding {rounding!r}")
    emb = family.fc_embedding

    def count(x):
        if emb is Family.THREE_FC:
            spec = ArchSpec(emb, image_size=s, in_channels=in_channels,
                            num_classes=c, hidden=x)
        else:
            spec = ArchSpec(emb, alpha=x, image_size=s, in_channels=in_channels,
                            num_classes=c)
        return param_count(spec)

    if target_fc_embedding < count(1):
        raise ValueError(f"target {target_fc_embedding} below the size-1 count {count(1)}")
    lo, hi = 1, 2
    while count(hi) <= target_fc_embedding:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if count(mid) <= target_fc_embedding:
            lo = mid
        else:
            hi = mid
    if rounding == "nearest":
        if count(lo + 1) - target_fc_embedding < target_fc_embedding - count(lo):
            return lo + 1
    return lo


# ---------------------------------------------------------------------------
# weight embeddings (conv -> local -> dense)
# ---------------------------------------------------------------------------

def conv_to_local_kernel(K, out_size):
    """Tile a shared conv kernel ``[Cout,Cin,k,k]`` to ``[Cout,H',W',Cin,k,k]``."""
    Cout, Cin, k, _ = K.shape
    return np.ascontiguousarray(
        np.broadcast_to(K[:, None, None], (Cout, out_size, out_size, Cin, k, k)))


def local_to_dense_weight(K, in_size, stride, pad):
    """Dense ``[Cout*H'*W', Cin*H*W]`` matrix realizing a locally-connected layer.

    Out-of-window entries are zero and taps that land in the zero padding
    are dropped.
    """
    Cout, Ho, Wo, Cin, k, _ = K.shape
    W = np.zeros((Cout, Ho, Wo, Cin, in_size, in_size), dtype=K.dtype)
    for i in range(Ho):
        for j in range(Wo):
            for u in range(k):
                y = i * stride - pad + u
                if not 0 <= y < in_size:
                    continue
                for v in range(k):
                    x = j * stride - pad + v
                    if 0 <= x < in_size:
                        W[:, i, j, :, y, x] = K[:, i, j, :, u, v]
    return W.reshape(Cout * Ho * Wo, Cin * in_size * in_size)


def embed_network(src: Network, dst: Network):
    """Copy ``src`` into a wider-class ``dst`` (conv -> local, local -> dense).

    Layers are matched by name. Batch-norm layers that become per-feature
    in a dense ``dst`` get their per-channel parameters and running statistics
    broadcast over spatial positions, so eval-mode outputs agree.
    """
    for layer in src.layers:
        shapes = layer.param_shapes()
        if not shapes:
            continue
        target = dst.layer(layer.name)
        if isinstance(layer, BatchNorm):
            reps = target.num_features // layer.num_features
            for pname in ("scale", "shift"):
                target.params[pname].value[...] = np.repeat(layer.params[pname].value, reps)
            target.running_mean[...] = np.repeat(layer.running_mean, reps)
            target.running_var[...] = np.repeat(layer.running_var, reps)
            continue
        K = layer.params["weight"].value
        b = layer.params["bias"].value
        if type(layer) is type(target):
            target.params["weight"].value[...] = K
            target.params["bias"].value[...] = b
        elif isinstance(layer, Conv2D) and isinstance(target, Local2D):
            target.params["weight"].value[...] = conv_to_local_kernel(K, target.out_size)
            target.params["bias"].value[...] = b[:, None, None]
        elif isinstance(layer, (Conv2D, Local2D)) and isinstance(target, Dense):
            if isinstance(layer, Conv2D):
                size = int(round(math.sqrt(target.out_features // layer.out_channels)))
                K = conv_to_local_kernel(K, size)
                b = np.broadcast_to(b[:, None, None], (layer.out_channels, size, size))
            in_size = int(round(math.sqrt(target.in_features // layer.in_channels)))
            target.params["weight"].value[...] = local_to_dense_weight(
                K, in_size, layer.stride, layer.pad)
            target.params["bias"].value[...] = b.reshape(-1)
        else:
            raise ValueError(f"cannot embed {layer!r} into {target!r}")
    return dst
