"""Binarization functions and exact XOR/popcount convolution kernels.

A {+1,-1} dot product over packed bitplanes reduces to
``n - 2 * popcount(xor(a, b))``: XOR marks positions where the signs
differ and every mismatch loses 2 relative to the all-match total ``n``.
A binary complex product splits into four such real dots,

    y_r = <x_r, w_r> - <x_i, w_i>
    y_i = <x_r, w_i> + <x_i, w_r>

and the 2D convolution accumulates these integer dots over the kernel
window.  Spatial padding uses the value -1 on both planes (all-zero
words), consistent with the {+1,-1} alphabet.

All results are integer-exact: the packed kernel must agree bit-for-bit
with a dense reference convolution for any valid input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, InvalidParallelism, LengthMismatch, ShapeMismatch
from .tensors import BitplaneTensor, ComplexTensor, channel_mask, words_per_pixel


def binarize_deterministic(x: np.ndarray) -> np.ndarray:
    """Sign binarization: +1 where x >= 0, else -1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def binarize_stochastic(x: np.ndarray, seed: int) -> np.ndarray:
    """Stochastic binarization: +1 with probability clip((x+1)/2, 0, 1).

    The draw is a pure function of (x, seed); the same seed reproduces the
    same output.
    """
    x = np.asarray(x, dtype=float)
    p = np.clip((x + 1.0) / 2.0, 0.0, 1.0)
    draws = np.random.default_rng(seed).random(x.shape)
    return np.where(draws < p, 1.0, -1.0)


def quadrant_binarize(x: ComplexTensor) -> ComplexTensor:
    """Binarize real and imaginary parts independently by sign."""
    return ComplexTensor(binarize_deterministic(x.re), binarize_deterministic(x.im))


@dataclass(frozen=True)
class ConvGeometry:
    """Kernel/stride/padding and channel counts of a complex convolution.

    ``in_channels`` / ``out_channels`` count complex channels.  Padding
    pixels carry the value -1 on both bitplanes.
    """

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        if min(kh, kw, sh, sw) < 1 or min(ph, pw) < 0:
            raise InvalidConfig(f"invalid conv geometry {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise InvalidConfig("channel counts must be >= 1")

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        h_out = (h + 2 * ph - kh) // sh + 1
        w_out = (w + 2 * pw - kw) // sw + 1
        if h_out < 1 or w_out < 1:
            raise ShapeMismatch(
                f"kernel {self.kernel} with stride {self.stride}, padding "
                f"{self.padding} does not fit a {h}x{w} input"
            )
        return h_out, w_out


def xnor_dot(a_words: np.ndarray, b_words: np.ndarray, n: int) -> int:
    """Dot product of two packed {+1,-1} vectors of n elements.

    Computes ``n - 2 * popcount((a ^ b) & valid_mask)``; pad bits never
    contribute.
    """
    a = np.asarray(a_words, dtype=np.uint64).ravel()
    b = np.asarray(b_words, dtype=np.uint64).ravel()
    expected = words_per_pixel(n)
    if a.size != expected or b.size != expected:
        raise LengthMismatch(
            f"expected {expected} words for {n} elements, got {a.size} and {b.size}"
        )
    mismatches = int(np.bitwise_count((a ^ b) & channel_mask(n)).sum())
    return n - 2 * mismatches


def binary_complex_dot(
    x: tuple[np.ndarray, np.ndarray],
    w: tuple[np.ndarray, np.ndarray],
    n: int,
) -> tuple[int, int]:
    """Complex dot product of two packed complex vectors of n elements.

    ``x`` and ``w`` are (real_words, imag_words) pairs; returns the integer
    pair (y_r, y_i).
    """
    xr, xi = x
    wr, wi = w
    rr = xnor_dot(xr, wr, n)
    ii = xnor_dot(xi, wi, n)
    ri = xnor_dot(xr, wi, n)
    ir = xnor_dot(xi, wr, n)
    return rr - ii, ri + ir


def binary_complex_conv2d(
    x: BitplaneTensor,
    w: BitplaneTensor,
    geometry: ConvGeometry,
    parallelism: tuple[int, int] | None = None,
) -> ComplexTensor:
    """Exact bias-free binary complex 2D convolution on packed operands.

    ``w`` packs the weight tensor with shape (out_c, in_c, kh, kw); its
    batch axis is the output channel.  ``parallelism = (p_out, p_in)``
    selects how many output channels and how many input-channel words are
    processed per inner step; the result is bit-identical for every valid
    choice (integer accumulation is exact), defaulting to the widest.
    """
    n, c, h, wd = x.shape
    out_c, in_c, kh, kw = w.shape
    if c != geometry.in_channels or in_c != geometry.in_channels:
        raise ShapeMismatch(
            f"input has {c} channels, weights expect {in_c}, geometry says "
            f"{geometry.in_channels}"
        )
    if out_c != geometry.out_channels or (kh, kw) != geometry.kernel:
        raise ShapeMismatch(f"weight shape {w.shape} does not match {geometry}")
    h_out, w_out = geometry.out_hw(h, wd)
    nw = words_per_pixel(c)

    p_out, p_in = parallelism if parallelism is not None else (out_c, nw)
    if p_out < 1 or out_c % p_out != 0:
        raise InvalidParallelism(f"p_out={p_out} must divide out_channels={out_c}")
    if p_in < 1 or p_in > nw:
        raise InvalidParallelism(f"p_in={p_in} must be in [1, {nw}]")

    sh, sw = geometry.stride
    ph, pw = geometry.padding
    # zero words encode pixels of all -1 channels, the declared pad value
    spatial_pad = ((0, 0), (ph, ph), (pw, pw), (0, 0))
    xp_re = np.pad(x.re_words, spatial_pad)
    xp_im = np.pad(x.im_words, spatial_pad)
    mask = channel_mask(c)

    pops = {
        key: np.zeros((n, out_c, h_out, w_out), dtype=np.int64)
        for key in ("rr", "ii", "ri", "ir")
    }
    for oc0 in range(0, out_c, p_out):
        ocs = slice(oc0, oc0 + p_out)
        for w0 in range(0, nw, p_in):
            ws = slice(w0, min(w0 + p_in, nw))
            m = mask[ws]
            for ky in range(kh):
                for kx in range(kw):
                    xv_r = xp_re[:, ky : ky + sh * h_out : sh,
                                 kx : kx + sw * w_out : sw, ws]
                    xv_i = xp_im[:, ky : ky + sh * h_out : sh,
                                 kx : kx + sw * w_out : sw, ws]
                    wv_r = w.re_words[ocs, ky, kx, ws]
                    wv_i = w.im_words[ocs, ky, kx, ws]
                    for key, xv, wv in (
                        ("rr", xv_r, wv_r),
                        ("ii", xv_i, wv_i),
                        ("ri", xv_r, wv_i),
                        ("ir", xv_i, wv_r),
                    ):
                        xor = (xv[:, None] ^ wv[None, :, None, None, :]) & m
                        pops[key][:, ocs] += np.bitwise_count(xor).sum(
                            axis=-1, dtype=np.int64
                        )

    total = in_c * kh * kw
    dot = {key: total - 2 * p for key, p in pops.items()}
    y_r = dot["rr"] - dot["ii"]
    y_i = dot["ri"] + dot["ir"]
    return ComplexTensor(y_r.astype(float), y_i.astype(float))
