"""Shared test oracles: dense reference implementations kept independent of
the packed kernels they check."""

import numpy as np

from bcnn.tensors import ComplexTensor


def random_pm1_tensor(rng, shape) -> ComplexTensor:
    return ComplexTensor(
        np.where(rng.random(shape) > 0.5, 1.0, -1.0),
        np.where(rng.random(shape) > 0.5, 1.0, -1.0),
    )


def reference_complex_conv2d(x: ComplexTensor, w: ComplexTensor, stride, padding,
                             pad_value=-1.0):
    """Sliding-window complex convolution on dense planes.

    Padding uses ``pad_value`` on both planes (-1 matches the binary
    kernel's alphabet).  Deliberately written as an explicit window loop.
    """
    n, ic, h, wd = x.shape
    oc, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    pads = ((0, 0), (0, 0), (ph, ph), (pw, pw))
    xr = np.pad(x.re, pads, constant_values=pad_value)
    xi = np.pad(x.im, pads, constant_values=pad_value)
    h_out = (h + 2 * ph - kh) // sh + 1
    w_out = (wd + 2 * pw - kw) // sw + 1
    y_r = np.zeros((n, oc, h_out, w_out))
    y_i = np.zeros((n, oc, h_out, w_out))
    for oy in range(h_out):
        for ox in range(w_out):
            pr = xr[:, :, oy * sh : oy * sh + kh, ox * sw : ox * sw + kw]
            pi = xi[:, :, oy * sh : oy * sh + kh, ox * sw : ox * sw + kw]
            y_r[:, :, oy, ox] = (np.einsum("nckl,ockl->no", pr, w.re)
                                 - np.einsum("nckl,ockl->no", pi, w.im))
            y_i[:, :, oy, ox] = (np.einsum("nckl,ockl->no", pr, w.im)
                                 + np.einsum("nckl,ockl->no", pi, w.re))
    return ComplexTensor(y_r, y_i)


def random_conv_case(rng, max_channels=128):
    """One random binary convolution case (inputs, weights, geometry params)."""
    ic = int(rng.integers(1, max_channels + 1))
    oc = int(rng.integers(1, 17))
    k = int(rng.choice([1, 3]))
    s = int(rng.choice([1, 2]))
    p = int(rng.choice([0, 1]))
    h = int(rng.integers(k + s, 9))
    n = int(rng.integers(1, 3))
    x = random_pm1_tensor(rng, (n, ic, h, h))
    w = random_pm1_tensor(rng, (oc, ic, k, k))
    return x, w, (k, k), (s, s), (p, p)
