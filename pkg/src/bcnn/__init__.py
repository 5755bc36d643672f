"""Binarized complex neural network engine.

Exact bit-packed XOR/popcount kernels for binary complex convolution,
full-precision complex layers, desk-scale STE training, surrogate
Lagrangian relaxation channel pruning, and a first-order accelerator
throughput model.
"""

from .binary_ops import (
    ConvGeometry,
    binarize_deterministic,
    binarize_stochastic,
    binary_complex_conv2d,
    binary_complex_dot,
    quadrant_binarize,
    xnor_dot,
)
from .layers import (
    CgbnLayer,
    ComplexConvLayer,
    CovComplexBnLayer,
    RealBnLayer,
    avg_pool,
    cgbn_forward,
    complex_conv2d_fp,
    cov_complex_bn_forward,
    fully_connected,
    hardtanh,
    max_pool,
    real_bn_forward,
    relu,
    spectral_pool,
)
from .models import (
    ModelGraph,
    build_complex_input_generator,
    build_nin_bcnn,
    build_resnet18_bcnn,
    build_toy_bcnn,
    forward,
)
from .tensors import BitplaneTensor, ComplexTensor, pack, unpack

__version__ = "0.1.0"
