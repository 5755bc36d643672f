import numpy as np
import pytest

from bcnn.binary_ops import ConvGeometry
from bcnn.errors import NonBinaryEntry, ShapeMismatch
from bcnn.layers import CgbnLayer
from bcnn.models import (
    AvgPool,
    Binarize,
    BinaryConvLayer,
    Flatten,
    ModelGraph,
    ResidualBlock1,
    ResidualBlock2,
    build_complex_input_generator,
    build_nin_bcnn,
    build_resnet18_bcnn,
    build_toy_bcnn,
    count_weight_layers,
    forward,
    iter_binary_convs,
    validate_graph,
    _generator_forward,
    _layer_forward,
)
from helpers import random_pm1_tensor


# ---------------------------------------------------------------------------
# complex input generator
# ---------------------------------------------------------------------------

def test_generator_zero_weights_gives_zero_imaginary():
    gen = build_complex_input_generator(3, seed=0)
    gen.w1[:] = 0.0
    gen.w2[:] = 0.0
    x = np.random.default_rng(0).random((2, 3, 8, 8))
    out = _generator_forward(gen, x)
    np.testing.assert_array_equal(out.re, x)
    np.testing.assert_array_equal(out.im, 0.0)


def test_generator_output_shape():
    gen = build_complex_input_generator(3, seed=1)
    x = np.random.default_rng(1).random((1, 3, 32, 32))
    out = _generator_forward(gen, x)
    assert out.shape == (1, 3, 32, 32)


def test_generator_deterministic():
    gen = build_complex_input_generator(3, seed=2)
    x = np.random.default_rng(2).random((1, 3, 8, 8))
    a = _generator_forward(gen, x)
    b = _generator_forward(gen, x)
    np.testing.assert_array_equal(a.im, b.im)


# ---------------------------------------------------------------------------
# NIN
# ---------------------------------------------------------------------------

def test_nin_output_length():
    model = build_nin_bcnn(num_classes=10, seed=0)
    x = np.random.default_rng(0).random((1, 3, 32, 32))
    logits = forward(model, x)
    assert logits.shape == (1, 10)


def test_nin_forward_reproducible_bit_for_bit():
    x = np.random.default_rng(5).random((1, 3, 32, 32))
    a = forward(build_nin_bcnn(seed=9), x)
    b = forward(build_nin_bcnn(seed=9), x)
    np.testing.assert_array_equal(a, b)


def test_nin_rejects_wrong_input_shape():
    model = build_nin_bcnn(seed=0)
    with pytest.raises(ShapeMismatch):
        forward(model, np.zeros((1, 3, 16, 16)))


# ---------------------------------------------------------------------------
# ResNet-18
# ---------------------------------------------------------------------------

def test_resnet18_weight_layer_count():
    model = build_resnet18_bcnn(seed=0)
    assert count_weight_layers(model) == 18


def test_resnet18_stage_structure():
    model = build_resnet18_bcnn(seed=0)
    blocks = [l for l in model.layers if isinstance(l, (ResidualBlock1, ResidualBlock2))]
    assert len(blocks) == 8
    downsampling = [b for b in blocks if isinstance(b, ResidualBlock2)]
    assert len(downsampling) == 3
    widths = [b.conv2.geometry.out_channels for b in blocks]
    assert widths == [32, 32, 64, 64, 128, 128, 256, 256]
    for b in downsampling:
        assert b.conv1.geometry.stride == (2, 2)
        assert b.side_conv.geometry.stride == (2, 2)


def test_resnet18_logits():
    model = build_resnet18_bcnn(num_classes=10, seed=3)
    x = np.random.default_rng(3).random((1, 3, 32, 32))
    assert forward(model, x).shape == (1, 10)


def test_block1_adds_skip_to_cgbn_output():
    # the block output is the second CGBN output plus the untouched input,
    # added in the real domain before any further binarization
    from bcnn.binary_ops import quadrant_binarize
    from bcnn.layers import cgbn_forward
    from bcnn.models import _binary_conv_forward

    rng = np.random.default_rng(4)
    g = ConvGeometry(4, 4, (3, 3), (1, 1), (1, 1))

    def conv():
        return BinaryConvLayer(
            rng.standard_normal((4, 4, 3, 3)).astype(np.float32),
            rng.standard_normal((4, 4, 3, 3)).astype(np.float32), g,
        )

    block = ResidualBlock1(conv(), CgbnLayer.identity(4),
                           conv(), CgbnLayer.identity(4))
    x = random_pm1_tensor(rng, (1, 4, 8, 8))
    out = _layer_forward(block, x, packed=True, debug=False)
    b = quadrant_binarize(x)
    path = cgbn_forward(_binary_conv_forward(block.conv1, b, True, False), block.bn1)
    path = quadrant_binarize(path)
    path = cgbn_forward(_binary_conv_forward(block.conv2, path, True, False), block.bn2)
    np.testing.assert_array_equal(out.re, path.re + x.re)
    np.testing.assert_array_equal(out.im, path.im + x.im)


def test_block_output_is_input_when_path_is_zero():
    # with gamma=0 the CGBN output is exactly beta=0, so block(x) == x
    def conv(c):
        return BinaryConvLayer(
            np.ones((c, c, 3, 3), np.float32), np.ones((c, c, 3, 3), np.float32),
            ConvGeometry(c, c, (3, 3), (1, 1), (1, 1)),
        )

    block = ResidualBlock1(conv(4), CgbnLayer.identity(4), conv(4), CgbnLayer.identity(4))
    block.bn2.gamma_re[:] = 0.0
    x = random_pm1_tensor(np.random.default_rng(5), (1, 4, 6, 6))
    out = _layer_forward(block, x, packed=True, debug=False)
    np.testing.assert_allclose(out.re, x.re, atol=1e-12)
    np.testing.assert_allclose(out.im, x.im, atol=1e-12)


# ---------------------------------------------------------------------------
# forward invariants
# ---------------------------------------------------------------------------

def test_batch_independence():
    model = build_toy_bcnn(seed=6)
    rng = np.random.default_rng(6)
    image = rng.random((3, 8, 8))
    batch = np.stack([image] + [rng.random((3, 8, 8)) for _ in range(7)])
    single = forward(model, image[None])
    batched = forward(model, batch)
    # eval-mode BN removes all batch coupling; the residual tolerance only
    # covers BLAS summation-order differences between batch sizes
    np.testing.assert_allclose(single[0], batched[0], rtol=1e-12, atol=1e-12)


def test_packed_and_unpacked_forward_agree():
    x = np.random.default_rng(7).random((2, 3, 32, 32))
    for build in (build_nin_bcnn, build_resnet18_bcnn):
        model = build(seed=7)
        np.testing.assert_array_equal(
            forward(model, x, packed=True), forward(model, x, packed=False)
        )


def test_forward_deterministic():
    model = build_toy_bcnn(seed=8)
    x = np.random.default_rng(8).random((2, 3, 8, 8))
    np.testing.assert_array_equal(forward(model, x), forward(model, x))


def test_debug_mode_rejects_non_binary_activations():
    layer = BinaryConvLayer(
        np.ones((1, 1, 1, 1), np.float32), np.ones((1, 1, 1, 1), np.float32),
        ConvGeometry(1, 1, (1, 1)),
    )
    from bcnn.models import _binary_conv_forward
    from bcnn.tensors import ComplexTensor

    bad = ComplexTensor(np.full((1, 1, 2, 2), 0.5), np.ones((1, 1, 2, 2)))
    with pytest.raises(NonBinaryEntry):
        _binary_conv_forward(layer, bad, packed=True, debug=True)


def test_validate_graph_requires_binarize_before_binary_conv():
    bad = ModelGraph(
        "bad", (3, 8, 8), 2,
        [
            build_complex_input_generator(3, seed=0),
            BinaryConvLayer(np.ones((4, 3, 1, 1), np.float32),
                            np.ones((4, 3, 1, 1), np.float32),
                            ConvGeometry(3, 4, (1, 1))),
            Flatten(),
        ],
    )
    with pytest.raises(ShapeMismatch):
        validate_graph(bad)


def test_builders_order_pool_between_conv_and_bn():
    # hardware-path ordering: conv -> pool -> CGBN -> binarize
    model = build_nin_bcnn(seed=0)
    kinds = [type(l).__name__ for l in model.layers]
    i = kinds.index("AvgPool")
    assert kinds[i - 1] == "BinaryConvLayer"
    assert kinds[i + 1] == "CgbnLayer"
    assert kinds[i + 2] == "Binarize"


def test_iter_binary_convs_covers_blocks():
    model = build_resnet18_bcnn(seed=0)
    convs = list(iter_binary_convs(model))
    # 8 blocks x 2 main convs + 3 projection convs
    assert len(convs) == 19


def test_spectral_pool_node_in_graph():
    from bcnn.models import SpectralPool
    from bcnn.tensors import ComplexTensor

    node = SpectralPool((4, 4))
    x = ComplexTensor(np.random.default_rng(0).standard_normal((1, 2, 8, 8)),
                      np.zeros((1, 2, 8, 8)))
    out = _layer_forward(node, x, packed=True, debug=False)
    assert out.shape == (1, 2, 4, 4)


def test_forward_debug_mode_passes_on_valid_graph():
    model = build_toy_bcnn(seed=9)
    x = np.random.default_rng(9).random((1, 3, 8, 8))
    np.testing.assert_array_equal(forward(model, x, debug=True), forward(model, x))


def test_pruned_channels_are_skipped_at_binarization():
    from bcnn.models import _binary_conv_forward, active_output_channels
    from bcnn.tensors import ComplexTensor

    rng = np.random.default_rng(10)
    layer = BinaryConvLayer(
        rng.standard_normal((4, 2, 1, 1)).astype(np.float32),
        rng.standard_normal((4, 2, 1, 1)).astype(np.float32),
        ConvGeometry(2, 4, (1, 1)),
    )
    layer.w_re[1] = 0.0
    layer.w_im[1] = 0.0
    np.testing.assert_array_equal(active_output_channels(layer), [True, False, True, True])
    x = ComplexTensor(np.ones((1, 2, 3, 3)), -np.ones((1, 2, 3, 3)))
    for packed in (True, False):
        y = _binary_conv_forward(layer, x, packed=packed, debug=True)
        np.testing.assert_array_equal(y.re[:, 1], 0.0)
        np.testing.assert_array_equal(y.im[:, 1], 0.0)
        assert np.any(y.re[:, 0] != 0.0) or np.any(y.im[:, 0] != 0.0)


def test_forward_is_thread_safe_on_shared_model():
    from concurrent.futures import ThreadPoolExecutor

    model = build_toy_bcnn(seed=11)
    rng = np.random.default_rng(11)
    images = [rng.random((1, 3, 8, 8)) for _ in range(8)]
    serial = [forward(model, img) for img in images]
    with ThreadPoolExecutor(max_workers=4) as pool:
        threaded = list(pool.map(lambda img: forward(model, img), images))
    for a, b in zip(serial, threaded):
        np.testing.assert_array_equal(a, b)
