import numpy as np
import pytest

from bcnn.cli import main
from bcnn.model_io import load_model, save_model
from bcnn.models import build_toy_bcnn, forward


def run(argv):
    return main(argv)


def test_bench_prints_reference_throughput(capsys):
    assert run(["bench", "--kernels", "9", "--latency-ms", "1.53"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "5882"


def test_bench_with_baseline(capsys):
    assert run(["bench", "--kernels", "8", "--latency-ms", "1.62",
                "--baseline-fps", "3123"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "4938"
    assert "1.58x" in out


def test_train_zero_epochs_saves_untrained(tmp_path, capsys):
    out_file = tmp_path / "untrained.bcn"
    code = run(["train", "--model", "toy", "--epochs", "0", "--seed", "3",
                "--out", str(out_file)])
    assert code == 0
    model = load_model(str(out_file))
    assert model.num_classes == 10


def test_train_is_seed_deterministic(tmp_path):
    a = tmp_path / "a.bcn"
    b = tmp_path / "b.bcn"
    run(["train", "--model", "toy", "--epochs", "0", "--seed", "7", "--out", str(a)])
    run(["train", "--model", "toy", "--epochs", "0", "--seed", "7", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_infer_missing_model_names_path(capsys):
    code = run(["infer", "--in", "/no/such/model.bcn", "--image", "x.npy"])
    assert code == 1
    assert "/no/such/model.bcn" in capsys.readouterr().err


def test_infer_on_npy_image(tmp_path, capsys):
    model = build_toy_bcnn(input_shape=(3, 32, 32), num_classes=10,
                           channels=(8, 8), seed=1)
    model_path = tmp_path / "m.bcn"
    save_model(model, str(model_path))
    rng = np.random.default_rng(0)
    img = rng.random((3, 32, 32))
    img_path = tmp_path / "img.npy"
    np.save(img_path, img)
    assert run(["infer", "--in", str(model_path), "--image", str(img_path)]) == 0
    out = capsys.readouterr().out
    expected = int(forward(load_model(str(model_path)), img[None])[0].argmax())
    assert f"class {expected}" in out


def test_infer_jobs_over_dataset(tmp_path, capsys):
    model = build_toy_bcnn(input_shape=(3, 32, 32), num_classes=10,
                           channels=(8, 8), seed=1)
    model_path = tmp_path / "m.bcn"
    save_model(model, str(model_path))
    pixels = bytes([100]) * 3072
    for i in range(1, 6):
        (tmp_path / f"data_batch_{i}.bin").write_bytes(bytes([1]) + pixels)
    (tmp_path / "test_batch.bin").write_bytes((bytes([1]) + pixels) * 3)
    assert run(["infer", "--in", str(model_path), "--data", str(tmp_path),
                "--jobs", "2"]) == 0
    assert "over 3 images" in capsys.readouterr().out


def test_quantize_roundtrip(tmp_path, capsys):
    model = build_toy_bcnn(input_shape=(3, 32, 32), num_classes=10,
                           channels=(8, 8), seed=2)
    src = tmp_path / "in.bcn"
    dst = tmp_path / "out.bcn"
    save_model(model, str(src))
    assert run(["quantize", "--in", str(src), "--epochs", "1", "--clip", "1.0",
                "--out", str(dst)]) == 0
    assert dst.exists()


def test_prune_command(tmp_path, capsys):
    model = build_toy_bcnn(input_shape=(3, 32, 32), num_classes=10,
                           channels=(8, 8), seed=2)
    src = tmp_path / "in.bcn"
    dst = tmp_path / "pruned.bcn"
    save_model(model, str(src))
    code = run(["prune", "--in", str(src), "--budget-ratio", "0.5",
                "--iters", "2", "--out", str(dst)])
    assert code == 0
    out = capsys.readouterr().out
    assert '"violation"' in out  # line-delimited history records
    pruned = load_model(str(dst))
    from bcnn.models import iter_binary_convs
    from bcnn.slr import count_nonzero_channels

    conv = next(iter(iter_binary_convs(pruned)))
    assert count_nonzero_channels(np.stack([conv.w_re, conv.w_im]), 1) <= 4


def test_export_text(tmp_path, capsys):
    model = build_toy_bcnn(seed=0)
    path = tmp_path / "m.bcn"
    save_model(model, str(path))
    assert run(["export", "--in", str(path), "--format", "text"]) == 0
    out = capsys.readouterr().out
    assert "BinaryConvLayer" in out and "DenseLayer" in out


def test_unknown_flag_rejected():
    with pytest.raises(SystemExit) as exc:
        run(["bench", "--kernels", "9", "--latency-ms", "1.5", "--bogus", "1"])
    assert exc.value.code == 2


def test_unknown_command_rejected():
    with pytest.raises(SystemExit) as exc:
        run(["frobnicate"])
    assert exc.value.code == 2


def test_train_with_cifar_directory(tmp_path):
    pixels = bytes([64]) * 3072
    for i in range(1, 6):
        (tmp_path / f"data_batch_{i}.bin").write_bytes((bytes([i % 10]) + pixels) * 2)
    (tmp_path / "test_batch.bin").write_bytes(bytes([0]) + pixels)
    out_file = tmp_path / "m.bcn"
    code = run(["train", "--model", "toy", "--data", str(tmp_path),
                "--epochs", "0", "--out", str(out_file)])
    assert code == 0 and out_file.exists()


def test_infer_on_raw_pixel_file(tmp_path, capsys):
    model = build_toy_bcnn(input_shape=(3, 32, 32), num_classes=10,
                           channels=(8, 8), seed=4)
    model_path = tmp_path / "m.bcn"
    save_model(model, str(model_path))
    raw = bytes(range(256)) * 12  # 3072 pixel bytes
    img_path = tmp_path / "img.bin"
    img_path.write_bytes(raw)
    assert run(["infer", "--in", str(model_path), "--image", str(img_path)]) == 0
    assert "class " in capsys.readouterr().out


def test_prune_then_quantize_keeps_budgets(tmp_path, capsys):
    from bcnn.models import iter_binary_convs
    from bcnn.slr import count_nonzero_channels

    model = build_toy_bcnn(input_shape=(3, 32, 32), num_classes=10,
                           channels=(8, 8), seed=5)
    src = tmp_path / "in.bcn"
    pruned = tmp_path / "pruned.bcn"
    quant = tmp_path / "quant.bcn"
    save_model(model, str(src))
    assert run(["prune", "--in", str(src), "--budget-ratio", "0.5",
                "--iters", "2", "--out", str(pruned)]) == 0
    assert run(["quantize", "--in", str(pruned), "--epochs", "1",
                "--out", str(quant)]) == 0
    final = load_model(str(quant))
    conv = next(iter(iter_binary_convs(final)))
    assert count_nonzero_channels(np.stack([conv.w_re, conv.w_im]), 1) <= 4
