import csv
import json

import numpy as np
import pytest

from hqnn import train as train_mod
from hqnn.checkpoint import FORMAT_VERSION, load_checkpoint, read_manifest, save_checkpoint
from hqnn.cli import gradcheck_rows, main
from hqnn.data import Dataset, Split, downsample_dataset, write_idx
from hqnn.errors import ConfigurationError, FormatError, TrainingAborted
from hqnn.nn import build_model, count_parameters, cross_entropy
from hqnn.train import (ExperimentResult, RunMetrics, TrainConfig, aggregate_runs, batches, evaluate,
                        multi_seed_experiment, parse_config, read_metrics, run_training, write_aggregate)


@pytest.fixture
def small(digits_28):
    tr, te = digits_28
    return (Dataset(tr.images[:120], tr.labels[:120], Split.TRAIN),
            Dataset(te.images[:40], te.labels[:40], Split.TEST))


def quick_config(tmp_path, **kw):
    base = dict(variant="HQNN_QUANV", epochs=2, batch_size=16, image_size=14, output_dir=str(tmp_path / "run"))
    base.update(kw)
    return TrainConfig(**base)


# =============================================================================
# configuration
# =============================================================================

def test_parse_config():
    cfg = parse_config("""
        # quanv experiment
        variant = CNN4
        epochs = 3
        lr = 0.01
        data_dir = /tmp/mnist
        train_count = 500   # inline comment
        model.stride = 2
        seeds = 0, 1, 2
        variants = HQNN_QUANV, CNN1
    """.replace("\n        ", "\n"))
    assert cfg.variant == "CNN4" and cfg.epochs == 3 and cfg.lr == 0.01
    assert cfg.data_dir == "/tmp/mnist" and cfg.train_count == 500
    assert cfg.overrides == {"stride": 2}
    assert cfg.seeds == (0, 1, 2) and cfg.variants == ("HQNN_QUANV", "CNN1")


@pytest.mark.parametrize("text", ["epochs = 0", "batch_size = 0", "variant = MLP", "engine = backprop",
                                  "colour = red", "epochs"])
def test_invalid_config(text):
    with pytest.raises((ConfigurationError, ValueError)):
        parse_config(text)


def test_config_echo_covers_every_field():
    keys = {k for k, _ in TrainConfig(overrides={"stride": 2}).echo()}
    assert {"variant", "epochs", "batch_size", "optimizer", "lr", "engine", "seed", "model.stride"} <= keys


def test_batch_size_defaults_per_variant():
    assert TrainConfig(variant="HQNN_PARALLEL").batch_size == 64
    assert TrainConfig(variant="HQNN_QUANV").batch_size == 32
    assert TrainConfig(variant="HQNN_PARALLEL", batch_size=8).batch_size == 8


def test_batches_cover_everything_once():
    parts = batches(33, 16, np.random.default_rng(0))
    assert [len(p) for p in parts] == [16, 17]
    assert sorted(np.concatenate(parts).tolist()) == list(range(33))


# =============================================================================
# evaluate
# =============================================================================

class _Fixed:
    """Stand-in model returning stored logits."""

    def __init__(self, logits):
        self.logits = logits
        self.cursor = 0

    def forward(self, x, training=True):
        out = self.logits[self.cursor: self.cursor + len(x)]
        self.cursor += len(x)
        return out


def test_evaluate_perfect_logits():
    labels = np.arange(10)
    ds = Dataset(np.zeros((10, 1, 2, 2)), labels, Split.TEST)
    loss, acc = evaluate(_Fixed(np.eye(10) * 50), ds)
    assert acc == 1.0 and loss < 1e-15


def test_evaluate_loss_is_mean_cross_entropy(rng):
    logits = rng.normal(size=(7, 10))
    ds = Dataset(np.zeros((7, 1, 2, 2)), rng.integers(0, 10, 7), Split.TEST)
    loss, _ = evaluate(_Fixed(logits), ds, batch_size=3)
    assert loss == pytest.approx(cross_entropy(logits, ds.labels), abs=1e-14)


def test_evaluate_empty():
    with pytest.raises(ConfigurationError):
        evaluate(_Fixed(np.zeros((0, 10))), Dataset(np.zeros((0, 1, 2, 2)), np.zeros(0, np.int64)))


def test_untrained_model_near_chance(digits_28):
    _, te = digits_28
    accs = [evaluate(build_model("HQNN_PARALLEL", {"image_size": 28}, seed=s), te)[1] for s in range(3)]
    assert abs(np.mean(accs) - 0.1) <= 0.05


# =============================================================================
# run_training
# =============================================================================

def test_training_writes_artifacts(tmp_path, small):
    cfg = quick_config(tmp_path)
    metrics, model = run_training(cfg, *small)
    out = tmp_path / "run"
    assert len(metrics.rows) == 2
    assert all(0 <= r[3] <= 1 for r in metrics.rows)
    assert metrics.param_count == 654
    text = (out / "metrics.csv").read_text()
    assert "# bilinear: bilinear;half-pixel centers;clamped;no-antialias" in text
    assert "# gradient_engine: adjoint" in text
    assert "# config.epochs: 2" in text
    assert [ln for ln in text.splitlines() if not ln.startswith("#")][0] == "epoch,train_loss,test_loss,test_acc"
    assert read_metrics(out / "metrics.csv") == metrics.rows
    run = json.loads((out / "run.json").read_text())
    assert run["seconds"] > 0 and run["best_acc"] == max(metrics.accuracies)


def test_best_checkpoint_matches_best_epoch(tmp_path, small):
    cfg = quick_config(tmp_path, epochs=3, lr=0.02)
    metrics, _ = run_training(cfg, *small)
    best = load_checkpoint(tmp_path / "run" / "best.ckpt")
    _, acc = evaluate(best, downsample_dataset(small[1], 14, 14))
    assert acc == metrics.best_acc == max(metrics.accuracies)
    meta, _, _ = read_manifest(tmp_path / "run" / "best.ckpt")
    assert int(meta["meta.epoch"]) == metrics.best_epoch


def test_training_is_deterministic(tmp_path, small):
    # same config (output directory included, since it is echoed into the header)
    run_training(quick_config(tmp_path), *small)
    a = (tmp_path / "run" / "metrics.csv").read_bytes()
    run_training(quick_config(tmp_path), *small)
    assert (tmp_path / "run" / "metrics.csv").read_bytes() == a


def test_training_reduces_loss(tmp_path, small):
    metrics, _ = run_training(quick_config(tmp_path, variant="CNN4", epochs=4, lr=0.02), *small)
    assert metrics.rows[-1][1] < metrics.rows[0][1]


def test_training_with_parameter_shift_engine(tmp_path, small):
    tr, te = small
    tiny = (Dataset(tr.images[:24], tr.labels[:24], Split.TRAIN), Dataset(te.images[:8], te.labels[:8], Split.TEST))
    m1, _ = run_training(quick_config(tmp_path / "a", epochs=1, engine="param_shift"), *tiny)
    m2, _ = run_training(quick_config(tmp_path / "b", epochs=1, engine="adjoint"), *tiny)
    assert m1.rows[0][2] == pytest.approx(m2.rows[0][2], abs=1e-9)


def test_abort_keeps_last_good_checkpoint(tmp_path, small, monkeypatch):
    real = train_mod.train_epoch
    calls = []

    def flaky(*args, **kw):
        calls.append(1)
        if len(calls) == 2:
            raise TrainingAborted("non-finite gradient")
        return real(*args, **kw)

    monkeypatch.setattr(train_mod, "train_epoch", flaky)
    with pytest.raises(TrainingAborted, match="epoch 2"):
        run_training(quick_config(tmp_path, epochs=3), *small)
    out = tmp_path / "run"
    assert len(read_metrics(out / "metrics.csv")) == 1
    assert load_checkpoint(out / "last.ckpt") is not None
    assert json.loads((out / "run.json").read_text())["aborted"].startswith("epoch 2")


def test_training_without_data():
    with pytest.raises(ConfigurationError):
        run_training(TrainConfig(epochs=1))


# =============================================================================
# multi-seed experiments
# =============================================================================

def test_multi_seed_aggregate(tmp_path, small):
    cfg = quick_config(tmp_path, epochs=2, variants=("HQNN_QUANV", "CNN1"))
    result = multi_seed_experiment(cfg, seeds=[0, 1, 2], train=small[0], test=small[1])
    assert result.complete
    assert {r[1] for r in result.aggregate} == {"HQNN_QUANV", "CNN1"}
    # recompute every aggregate row from the per-run metrics files
    with open(tmp_path / "run" / "aggregate.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    for row in rows:
        accs = [read_metrics(tmp_path / "run" / row["model"] / f"seed{s}" / "metrics.csv")[int(row["epoch"]) - 1][3]
                for s in (0, 1, 2)]
        assert float(row["mean_acc"]) == float(np.mean(accs))
        assert float(row["std_acc"]) == float(np.std(accs))


def test_repeated_identical_run_has_zero_std(tmp_path, small):
    cfg = quick_config(tmp_path, epochs=1, variant="CNN1")
    result = multi_seed_experiment(cfg, seeds=[3, 3], train=small[0], test=small[1])
    assert result.final("CNN1")[1] == 0.0


def test_constant_runs_aggregate_to_constant():
    runs = {("M", s): RunMetrics(rows=[(1, 0.0, 0.0, 0.42), (2, 0.0, 0.0, 0.42)]) for s in range(4)}
    assert aggregate_runs(runs, ["M"]) == [(1, "M", 0.42, 0.0), (2, "M", 0.42, 0.0)]


def test_multi_seed_needs_two_seeds(tmp_path, small):
    with pytest.raises(ConfigurationError):
        multi_seed_experiment(quick_config(tmp_path), seeds=[0], train=small[0], test=small[1])


def test_partial_experiment_flagged(tmp_path):
    result = ExperimentResult([(1, "CNN1", 0.5, 0.0)], {}, {("CNN1", 1): "TrainingAborted: boom"})
    assert not result.complete
    write_aggregate(tmp_path / "agg.csv", result)
    assert (tmp_path / "agg.csv").read_text().startswith("# incomplete: CNN1/seed1")


def test_parallel_workers_match_serial(tmp_path, small):
    cfg = quick_config(tmp_path, epochs=1, variant="CNN1")
    a = multi_seed_experiment(cfg, seeds=[0, 1], train=small[0], test=small[1])
    b = multi_seed_experiment(replace_out(cfg, tmp_path / "w"), seeds=[0, 1], train=small[0], test=small[1],
                              workers=2)
    assert a.aggregate == b.aggregate


def replace_out(cfg, path):
    from dataclasses import replace
    return replace(cfg, output_dir=str(path))


# =============================================================================
# checkpoints
# =============================================================================

@pytest.mark.parametrize("variant", ["HQNN_PARALLEL", "HQNN_QUANV", "CNN1", "CNN4"])
def test_checkpoint_roundtrip_bit_exact(tmp_path, variant):
    model = build_model(variant, seed=7)
    # non-default values everywhere, including running statistics
    perturb = np.random.default_rng(1)
    for arr in model.state().values():
        arr[...] += perturb.normal(size=arr.shape) * np.pi
    save_checkpoint(model, tmp_path / "m.ckpt")
    loaded = load_checkpoint(tmp_path / "m.ckpt", expected_variant=variant)
    assert list(loaded.state()) == list(model.state())
    for key, arr in model.state().items():
        assert loaded.state()[key].tobytes() == arr.tobytes(), key


def test_checkpoint_evaluates_identically(tmp_path, digits_28):
    _, te = digits_28
    model = build_model("HQNN_PARALLEL", seed=2)
    save_checkpoint(model, tmp_path / "m.ckpt")
    assert evaluate(load_checkpoint(tmp_path / "m.ckpt"), te) == evaluate(model, te)


def test_checkpoint_manifest_contents(tmp_path):
    save_checkpoint(build_model("HQNN_PARALLEL"), tmp_path / "m.ckpt", {"epoch": 3})
    meta, tensors, payload = read_manifest(tmp_path / "m.ckpt")
    assert meta["format_version"] == str(FORMAT_VERSION)
    assert meta["variant"] == "HQNN_PARALLEL"
    assert meta["circuit.quantum.readout"] == "PAULI_Y"
    assert meta["meta.epoch"] == "3"
    assert ("quantum.theta", "param", (4, 3, 5, 3)) in tensors
    assert ("bn1.running_mean", "buffer", (16,)) in tensors
    assert len(payload) == 8 * sum(int(np.prod(s)) for _, _, s in tensors)


def test_checkpoint_corrupt_payload(tmp_path):
    save_checkpoint(build_model("CNN1"), tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "m.ckpt").write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="payload"):
        load_checkpoint(tmp_path / "m.ckpt")


def test_checkpoint_version_mismatch(tmp_path):
    save_checkpoint(build_model("CNN1"), tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "m.ckpt").write_bytes(raw.replace(b"format_version=1", b"format_version=9", 1))
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(tmp_path / "m.ckpt")


def test_checkpoint_architecture_mismatch(tmp_path):
    save_checkpoint(build_model("CNN1"), tmp_path / "m.ckpt")
    with pytest.raises(ConfigurationError):
        load_checkpoint(tmp_path / "m.ckpt", expected_variant="CNN4")


def test_not_a_checkpoint(tmp_path):
    (tmp_path / "x").write_bytes(b"hello")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "x")


# =============================================================================
# command line
# =============================================================================

def test_cli_inspect(tmp_path, capsys):
    save_checkpoint(build_model("HQNN_PARALLEL"), tmp_path / "m.ckpt")
    assert main(["inspect", "--checkpoint", str(tmp_path / "m.ckpt")]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "variant HQNN_PARALLEL"
    assert out[-1] == "total 45194"


def test_cli_missing_config(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "none.cfg")]) == 1


def test_cli_usage_errors(capsys):
    assert main(["gradcheck", "--bogus"]) == 1
    assert main([]) == 1
    assert main(["teleport"]) == 1
    assert "usage" in capsys.readouterr().err


def test_cli_runtime_failure(tmp_path, capsys):
    (tmp_path / "bad.ckpt").write_bytes(b"junk")
    assert main(["inspect", "--checkpoint", str(tmp_path / "bad.ckpt")]) == 2
    assert main(["inspect", "--checkpoint", str(tmp_path / "absent.ckpt")]) == 2


def test_cli_gradcheck(tmp_path):
    out = tmp_path / "g.csv"
    assert main(["gradcheck", "--trials", "50", "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 50
    assert [int(r["circuit_id"]) for r in rows] == list(range(50))
    assert all(float(r["max_abs_diff"]) < 1e-6 for r in rows)


def test_gradcheck_rows_small():
    rows = gradcheck_rows(2, 1, 3, seed=1)
    assert len(rows) == 3 and all(r[1].count("/") == 1 for r in rows)


def test_cli_fourier(tmp_path, capsys):
    out = tmp_path / "v.csv"
    assert main(["fourier", "--samples", "20", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 9 * 20 + 1
    assert "correlation determinant" in capsys.readouterr().out


def test_cli_train_and_eval(tmp_path, capsys, rng):
    data = tmp_path / "mnist"
    data.mkdir()
    imgs = rng.integers(0, 256, (40, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, 40)
    write_idx(imgs, labels, data / "train-images-idx3-ubyte", data / "train-labels-idx1-ubyte")
    write_idx(imgs[:10], labels[:10], data / "t10k-images-idx3-ubyte", data / "t10k-labels-idx1-ubyte")
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"variant = HQNN_QUANV\nepochs = 1\nimage_size = 14\ndata_dir = {data}\n"
                   f"train_count = 30\ntest_count = 10\noutput_dir = {tmp_path / 'out'}\n")
    assert main(["train", "--config", str(cfg)]) == 0
    assert "epoch   1" in capsys.readouterr().out
    ckpt = tmp_path / "out" / "best.ckpt"
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data)]) == 0
    assert "samples 10" in capsys.readouterr().out
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochs = 0\n")
    assert main(["train", "--config", str(bad)]) == 2


def test_cli_multi_seed_train(tmp_path, capsys, rng):
    data = tmp_path / "mnist"
    data.mkdir()
    imgs = rng.integers(0, 256, (30, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, 30)
    write_idx(imgs, labels, data / "train-images-idx3-ubyte", data / "train-labels-idx1-ubyte")
    write_idx(imgs[:10], labels[:10], data / "t10k-images-idx3-ubyte", data / "t10k-labels-idx1-ubyte")
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(f"epochs = 1\nimage_size = 14\ndata_dir = {data}\noutput_dir = {tmp_path / 'out'}\n"
                   "seeds = 0, 1\nvariants = HQNN_QUANV, CNN1, CNN4\n")
    assert main(["train", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert out.count("final test accuracy") == 3
    assert (tmp_path / "out" / "aggregate.csv").exists()


def test_parameter_count_helper():
    assert count_parameters(build_model("CNN4")).total == 666
