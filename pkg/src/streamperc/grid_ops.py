"""Dense-grid primitives: pooling, bilinear sampling/resize, convolutions.

Grids are numpy arrays of shape (H, W, C), float64 accumulation throughout.
Convolution is cross-correlation (no kernel flip) with zero padding
floor(effective_kernel / 2), so odd kernels at stride 1 preserve spatial
size. Resizing uses align-corners coordinate mapping.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

FGRD_MAGIC = b"FGRD"
FGRD_VERSION = 1


def as_grid(data) -> np.ndarray:
    g = np.asarray(data, dtype=float)
    if g.ndim != 3:
        raise ValueError("grid must have shape (H, W, C), got %r" % (g.shape,))
    if not np.all(np.isfinite(g)):
        raise ValueError("grid entries must be finite")
    return g


@dataclass
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: Tuple[int, int]
    stride: int = 1
    dilation: int = 1
    groups: int = 1
    transpose: bool = False
    weights: Optional[np.ndarray] = None  # (out, in/groups, kh, kw)
    bias: Optional[np.ndarray] = None  # (out,)

    def __post_init__(self):
        if self.in_channels % self.groups != 0:
            raise ValueError("in_channels must be divisible by groups")
        if self.transpose and self.dilation != 1:
            raise ValueError("transpose convolution requires dilation 1")
        kh, kw = self.kernel
        shape = (self.out_channels, self.in_channels // self.groups, kh, kw)
        if self.weights is None:
            self.weights = np.zeros(shape)
        else:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != shape:
                raise ValueError(
                    "weights shape %r does not match spec %r"
                    % (self.weights.shape, shape)
                )
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=float)
            if self.bias.shape != (self.out_channels,):
                raise ValueError("bias must have shape (out_channels,)")


def max_pool(g: np.ndarray, ratio: int) -> np.ndarray:
    """Channel-wise max over ratio x ratio windows; edge windows may be partial."""
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    g = as_grid(g)
    if ratio == 1:
        return g.copy()
    h, w, c = g.shape
    ho = (h + ratio - 1) // ratio
    wo = (w + ratio - 1) // ratio
    out = np.empty((ho, wo, c))
    for i in range(ho):
        for j in range(wo):
            win = g[i * ratio : (i + 1) * ratio, j * ratio : (j + 1) * ratio, :]
            out[i, j, :] = win.max(axis=(0, 1))
    return out


def bilinear_sample(g: np.ndarray, row: float, col: float) -> np.ndarray:
    """Bilinear blend of the 4 neighbors; missing neighbors count as zero."""
    g = np.asarray(g, dtype=float)
    h, w, c = g.shape
    r0 = int(np.floor(row))
    c0 = int(np.floor(col))
    fr = row - r0
    fc = col - c0
    out = np.zeros(c)
    for dr, wr in ((0, 1.0 - fr), (1, fr)):
        for dc, wc in ((0, 1.0 - fc), (1, fc)):
            weight = wr * wc
            if weight == 0.0:
                continue
            rr, cc = r0 + dr, c0 + dc
            if 0 <= rr < h and 0 <= cc < w:
                out += weight * g[rr, cc, :]
    return out


def bilinear_resize(g: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize to (out_h, out_w)."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be >= 1")
    g = as_grid(g)
    h, w, c = g.shape
    if (out_h, out_w) == (h, w):
        return g.copy()

    def src_coords(n_out, n_in):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out)
        return np.arange(n_out) * (n_in - 1) / (n_out - 1)

    rows = src_coords(out_h, h)
    cols = src_coords(out_w, w)
    r0 = np.clip(np.floor(rows).astype(int), 0, h - 1)
    c0 = np.clip(np.floor(cols).astype(int), 0, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None, None]
    fc = (cols - c0)[None, :, None]
    top = g[r0][:, c0] * (1 - fc) + g[r0][:, c1] * fc
    bot = g[r1][:, c0] * (1 - fc) + g[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def conv2d(g: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Grouped, dilated cross-correlation with zero padding floor(keff/2)."""
    g = as_grid(g)
    if spec.transpose:
        raise ValueError("use transpose_conv2d for transpose specs")
    h, w, c = g.shape
    if c != spec.in_channels:
        raise ValueError(
            "grid has %d channels, spec expects %d" % (c, spec.in_channels)
        )
    kh, kw = spec.kernel
    d, s = spec.dilation, spec.stride
    keff_h = (kh - 1) * d + 1
    keff_w = (kw - 1) * d + 1
    ph, pw = keff_h // 2, keff_w // 2
    padded = np.zeros((h + 2 * ph, w + 2 * pw, c))
    padded[ph : ph + h, pw : pw + w, :] = g
    ho = (h + 2 * ph - keff_h) // s + 1
    wo = (w + 2 * pw - keff_w) // s + 1
    out = np.zeros((ho, wo, spec.out_channels))
    in_per_group = spec.in_channels // spec.groups
    out_per_group = spec.out_channels // spec.groups
    for oc in range(spec.out_channels):
        grp = oc // out_per_group
        ic0 = grp * in_per_group
        acc = np.zeros((ho, wo))
        for ki in range(kh):
            for kj in range(kw):
                patch = padded[
                    ki * d : ki * d + (ho - 1) * s + 1 : s,
                    kj * d : kj * d + (wo - 1) * s + 1 : s,
                    ic0 : ic0 + in_per_group,
                ]
                acc += patch @ spec.weights[oc, :, ki, kj]
        if spec.bias is not None:
            acc += spec.bias[oc]
        out[:, :, oc] = acc
    return out


def transpose_conv2d(g: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Transpose convolution (scatter-sum), no padding.

    Output size is (H-1)*s + k per axis; with k == s this is exactly H*s.
    """
    g = as_grid(g)
    if not spec.transpose:
        raise ValueError("spec is not a transpose convolution")
    h, w, c = g.shape
    if c != spec.in_channels:
        raise ValueError(
            "grid has %d channels, spec expects %d" % (c, spec.in_channels)
        )
    kh, kw = spec.kernel
    s = spec.stride
    ho = (h - 1) * s + kh
    wo = (w - 1) * s + kw
    out = np.zeros((ho, wo, spec.out_channels))
    in_per_group = spec.in_channels // spec.groups
    out_per_group = spec.out_channels // spec.groups
    for oc in range(spec.out_channels):
        grp = oc // out_per_group
        ic0 = grp * in_per_group
        contrib = g[:, :, ic0 : ic0 + in_per_group]
        for ki in range(kh):
            for kj in range(kw):
                out[ki : ki + (h - 1) * s + 1 : s, kj : kj + (w - 1) * s + 1 : s, oc] += (
                    contrib @ spec.weights[oc, :, ki, kj]
                )
        if spec.bias is not None:
            out[:, :, oc] += spec.bias[oc]
    return out


def write_fgrd(path, g: np.ndarray) -> None:
    """Write a grid in the flat FGRD binary format (little-endian float32)."""
    g = as_grid(g)
    h, w, c = g.shape
    with open(path, "wb") as f:
        f.write(FGRD_MAGIC)
        f.write(struct.pack("<4I", FGRD_VERSION, h, w, c))
        f.write(g.astype("<f4").tobytes())


def read_fgrd(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FGRD_MAGIC:
            raise ValueError("not an FGRD file: bad magic %r" % magic)
        version, h, w, c = struct.unpack("<4I", f.read(16))
        if version != FGRD_VERSION:
            raise ValueError("unsupported FGRD version %d" % version)
        data = np.frombuffer(f.read(h * w * c * 4), dtype="<f4")
        if data.size != h * w * c:
            raise ValueError("truncated FGRD payload")
    return data.reshape(h, w, c).astype(float)
