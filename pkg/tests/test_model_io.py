import numpy as np
import pytest

from bcnn.binary_ops import binarize_deterministic
from bcnn.errors import BadMagic, CorruptModelFile, TruncatedFile, UnsupportedVersion
from bcnn.model_io import load_model, model_from_bytes, model_to_bytes, save_model
from bcnn.models import (
    build_nin_bcnn,
    build_resnet18_bcnn,
    build_toy_bcnn,
    forward,
    iter_binary_convs,
)


def test_roundtrip_is_byte_identical():
    model = build_nin_bcnn(seed=13)
    data = model_to_bytes(model)
    again = model_to_bytes(model_from_bytes(data))
    assert data == again


def test_roundtrip_preserves_forward_logits():
    x = np.random.default_rng(0).random((2, 3, 32, 32))
    for build in (build_nin_bcnn, build_resnet18_bcnn):
        model = build(seed=3)
        loaded = model_from_bytes(model_to_bytes(model))
        np.testing.assert_array_equal(forward(model, x), forward(loaded, x))


def test_binary_weights_stored_packed():
    # packed storage is 32x smaller per plane than float32 would be
    model = build_toy_bcnn(seed=1)
    conv = next(iter(iter_binary_convs(model)))
    loaded = model_from_bytes(model_to_bytes(model))
    loaded_conv = next(iter(iter_binary_convs(loaded)))
    assert np.all(np.abs(loaded_conv.w_re) == 1.0)
    np.testing.assert_array_equal(loaded_conv.w_re, binarize_deterministic(conv.w_re))


def test_save_load_files(tmp_path):
    model = build_toy_bcnn(seed=2)
    path = tmp_path / "model.bcn"
    save_model(model, str(path))
    loaded = load_model(str(path))
    save_model(loaded, str(tmp_path / "model2.bcn"))
    assert path.read_bytes() == (tmp_path / "model2.bcn").read_bytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.bcn"
    path.write_bytes(b"XXXX" + bytes(100))
    with pytest.raises(BadMagic):
        load_model(str(path))


def test_unsupported_version():
    model = build_toy_bcnn(seed=0)
    data = bytearray(model_to_bytes(model))
    data[4:8] = (99).to_bytes(4, "little")
    with pytest.raises(UnsupportedVersion):
        model_from_bytes(bytes(data))


def test_truncated_payload():
    model = build_toy_bcnn(seed=0)
    data = model_to_bytes(model)
    with pytest.raises(TruncatedFile):
        model_from_bytes(data[: len(data) - 10])


def test_trailing_bytes_rejected():
    model = build_toy_bcnn(seed=0)
    data = model_to_bytes(model) + b"\x00\x01"
    with pytest.raises(CorruptModelFile):
        model_from_bytes(data)


def test_loaded_model_metadata():
    model = build_toy_bcnn(seed=5)
    loaded = model_from_bytes(model_to_bytes(model))
    assert loaded.name == model.name
    assert loaded.input_shape == model.input_shape
    assert loaded.num_classes == model.num_classes
    assert len(loaded.layers) == len(model.layers)


def test_roundtrip_covers_every_node_kind():
    from bcnn.binary_ops import ConvGeometry
    from bcnn.layers import CgbnLayer, ComplexConvLayer, RealBnLayer
    from bcnn.models import (AvgPool, Binarize, BinaryConvLayer, DenseLayer,
                             Flatten, Hardtanh, MaxPool, ModelGraph, Relu,
                             SpectralPool, build_complex_input_generator)

    rng = np.random.default_rng(0)
    g = ConvGeometry(3, 4, (3, 3), (1, 1), (1, 1))
    layers = [
        build_complex_input_generator(3, seed=0),
        ComplexConvLayer(rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
                         rng.standard_normal((4, 3, 3, 3)).astype(np.float32), g),
        RealBnLayer.identity(4),
        CgbnLayer.identity(4),
        Relu(),
        Hardtanh(),
        SpectralPool((8, 8)),
        MaxPool((2, 2)),
        AvgPool((2, 2), (2, 2)),
        Binarize(),
        BinaryConvLayer(rng.standard_normal((4, 4, 1, 1)).astype(np.float32),
                        rng.standard_normal((4, 4, 1, 1)).astype(np.float32),
                        ConvGeometry(4, 4, (1, 1))),
        Flatten(),
        DenseLayer(rng.standard_normal((2, 32)).astype(np.float32),
                   np.zeros(2, dtype=np.float32)),
    ]
    model = ModelGraph("kinds", (3, 16, 16), 2, layers)
    blob = model_to_bytes(model)
    loaded = model_from_bytes(blob)
    assert model_to_bytes(loaded) == blob
    assert [type(l).__name__ for l in loaded.layers] == [type(l).__name__ for l in layers]
