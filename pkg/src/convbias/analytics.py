"""Sparsity counts, first-layer filters, locality scores, pixel permutations."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .architectures import conv_to_local_kernel, local_to_dense_weight
from .layers import Conv2D, Dense, Local2D
from .network import Network


@dataclass(frozen=True)
class LayerSparsity:
    name: str
    total: int
    nonzero: int


@dataclass(frozen=True)
class SparsityReport:
    per_layer: tuple
    reference_counts: tuple | None = None

    @property
    def total(self):
        return sum(r.total for r in self.per_layer)

    @property
    def nonzero(self):
        return sum(r.nonzero for r in self.per_layer)

    def layer(self, name):
        for r in self.per_layer:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "total", "nonzero"])
        for r in self.per_layer:
            w.writerow([r.name, r.total, r.nonzero])
        return buf.getvalue()


def nnz_report(network: Network, reference_counts=None) -> SparsityReport:
    """Exact nonzero counts of every weight tensor, in layer order."""
    rows = []
    for p in network.weights():
        layer_name = p.name.rsplit(".", 1)[0]
        rows.append(LayerSparsity(layer_name, int(p.value.size),
                                  int(np.count_nonzero(p.value))))
    return SparsityReport(tuple(rows), reference_counts)


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterImage:
    layer: str
    unit: int
    grid: np.ndarray  # [H, W, C] signed weights at input-pixel positions

    @property
    def magnitude(self):
        """Per-pixel magnitude summed over channels, ``[H, W]``."""
        return np.abs(self.grid).sum(axis=-1)

    @property
    def nnz(self):
        return int(np.count_nonzero(self.grid))


def _first_layer_grids(network: Network, layer_name):
    layer = network.layer(layer_name)
    C, H, W = network.input_shape
    index = network.layers.index(layer)
    if any(l.param_shapes() for l in network.layers[:index]):
        raise ValueError(f"{layer_name} does not see the input image")
    K = layer.params["weight"].value
    if isinstance(layer, Dense):
        if layer.in_features != C * H * W:
            raise ValueError(f"{layer_name} input is not image shaped")
        return K.reshape(-1, C, H, W)
    if isinstance(layer, (Conv2D, Local2D)):
        if isinstance(layer, Conv2D):
            K = conv_to_local_kernel(K, network.shapes[index + 1][1])
        return local_to_dense_weight(K, H, layer.stride, layer.pad).reshape(-1, C, H, W)
    raise ValueError(f"{layer_name} has no image-shaped input")


def extract_filters(network: Network, layer="conv1", min_nnz=0, limit=None, seed=0):
    """First-layer filters mapped back onto the input pixel grid.

    A unit is eligible when its filter has at least ``min_nnz`` nonzero
    weights. With ``limit`` set, that many eligible units are drawn at random
    (seeded); otherwise every eligible unit is returned in index order.
    """
    grids = _first_layer_grids(network, layer)
    nnz = np.count_nonzero(grids.reshape(len(grids), -1), axis=1)
    eligible = np.flatnonzero(nnz >= min_nnz)
    if limit is not None and limit < len(eligible):
        rng = np.random.default_rng(seed)
        eligible = rng.choice(eligible, size=limit, replace=False)
    return [FilterImage(layer, int(u), np.ascontiguousarray(grids[u].transpose(1, 2, 0)))
            for u in eligible]


def _rms_spread(weights):
    """RMS distance of support pixels from the magnitude-weighted centroid."""
    ys, xs = np.nonzero(weights)
    w = weights[ys, xs]
    cy = np.dot(w, ys) / w.sum()
    cx = np.dot(w, xs) / w.sum()
    return math.sqrt(np.mean((ys - cy) ** 2 + (xs - cx) ** 2))


def locality_score(filt: FilterImage):
    """Spatial spread of a filter relative to a uniformly dense filter.

    0 for a single pixel, 1 for a uniform dense filter of the same grid.
    Supports concentrated far from their centroid (e.g. the four corners)
    score above 1.
    """
    mag = filt.magnitude
    if not np.any(mag):
        raise ValueError("locality of an all-zero filter is undefined")
    return _rms_spread(mag) / _rms_spread(np.ones_like(mag))


def _to_bytes(grid):
    peak = np.abs(grid).max()
    scaled = np.abs(grid) / peak if peak > 0 else np.zeros_like(grid)
    return np.clip(np.round(scaled * 255), 0, 255).astype(np.uint8)


def write_pnm(path, filt: FilterImage):
    """PGM (1 channel) or PPM (3 channels) of per-filter max-normalized |w|."""
    img = _to_bytes(filt.grid)
    H, W, C = img.shape
    if C == 1:
        header, body = f"P5\n{W} {H}\n255\n", img[:, :, 0]
    elif C == 3:
        header, body = f"P6\n{W} {H}\n255\n", img
    else:
        raise ValueError(f"cannot write a {C}-channel image")
    Path(path).write_bytes(header.encode("ascii") + body.tobytes())


def read_pnm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    magic, W, H, maxval = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise ValueError("unsupported PNM file")
    C = 1 if magic == b"P5" else 3
    data = np.frombuffer(parts[4][:H * W * C], dtype=np.uint8)
    return data.reshape(H, W, C)


def export_filters(filters, directory):
    """Write one image per filter plus ``filters.csv`` of the raw weights."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    with open(directory / "filters.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "unit", "row", "col", "channel", "weight"])
        for f in filters:
            ext = "pgm" if f.grid.shape[2] == 1 else "ppm"
            path = directory / f"{f.layer}_unit{f.unit:06d}.{ext}"
            write_pnm(path, f)
            paths.append(path)
            for (r, c, ch) in zip(*np.nonzero(f.grid)):
                w.writerow([f.layer, f.unit, r, c, ch, repr(float(f.grid[r, c, ch]))])
    return paths


# ---------------------------------------------------------------------------
# pixel permutations
# ---------------------------------------------------------------------------

def permute_pixels(dataset, seed=None, perm=None):
    """Relabel pixel positions by one permutation shared by all images/channels.

    Permuted pixel ``q`` takes original pixel ``perm[q]`` (flat row-major
    index). With neither ``seed`` nor ``perm`` the identity is used.
    Returns ``(dataset', perm)``.
    """
    N, C, H, W = dataset.images.shape
    if perm is None:
        perm = (np.arange(H * W) if seed is None
                else np.random.default_rng(seed).permutation(H * W))
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(H * W)):
        raise ValueError("perm is not a permutation of the pixel positions")
    images = dataset.images.reshape(N, C, H * W)[:, :, perm].reshape(N, C, H, W)
    return replace(dataset, images=np.ascontiguousarray(images)), perm


def inverse_permutation(perm):
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv


def permute_first_layer(network: Network, perm):
    """Copy of ``network`` whose first dense layer reads pixels relabeled by ``perm``."""
    C, H, W = network.input_shape
    first = next(l for l in network.layers if l.param_shapes())
    if not isinstance(first, Dense):
        raise ValueError("first weight layer is not dense")
    out = network.copy()
    layer = out.layer(first.name)
    Wt = layer.params["weight"].value
    Wt[...] = Wt.reshape(-1, C, H * W)[:, :, np.asarray(perm)].reshape(Wt.shape)
    return out
