"""Training and evaluation loops, multi-seed experiments and run bookkeeping."""
from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .checkpoint import save_checkpoint
from .data import (BILINEAR_CONVENTION, Dataset, Split, SubsetPlan, downsample_dataset, load_mnist,
                   make_subset)
from .errors import ConfigurationError, TrainingAborted
from .grad import Engine
from .nn.functional import cross_entropy_grad, cross_entropy_per_sample
from .nn.models import Model, Variant, build_model, count_parameters
from .nn.optim import OptimizerConfig, make_optimizer

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("epoch", "train_loss", "test_loss", "test_acc")
AGGREGATE_COLUMNS = ("epoch", "model", "mean_acc", "std_acc")
DEFAULT_BATCH_SIZE = {"HQNN_PARALLEL": 64}  # 32 for the quanv-experiment models


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "HQNN_QUANV"
    overrides: dict = field(default_factory=dict)
    epochs: int = 20
    batch_size: Optional[int] = None  # None -> per-variant default
    optimizer: str = "adam"
    lr: float = 1e-3
    engine: str = "adjoint"
    seed: int = 0
    data_dir: Optional[str] = None
    train_count: Optional[int] = None
    test_count: Optional[int] = None
    subset_seed: int = 0
    image_size: int = 28
    output_dir: Optional[str] = None
    seeds: tuple = ()
    variants: tuple = ()

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is None:
            object.__setattr__(self, "batch_size", DEFAULT_BATCH_SIZE.get(self.variant, 32))
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        Variant(self.variant)
        Engine(self.engine)

    def model_overrides(self) -> dict:
        opts = dict(self.overrides)
        if Variant(self.variant) in (Variant.HQNN_PARALLEL, Variant.HQNN_QUANV):
            opts.setdefault("engine", self.engine)
        opts.setdefault("image_size", self.image_size)
        return opts

    def echo(self) -> list[tuple[str, str]]:
        out = []
        for key, value in asdict(self).items():
            if key == "overrides":
                out += [(f"model.{k}", json.dumps(v)) for k, v in sorted(value.items())]
            else:
                out.append((key, json.dumps(list(value) if isinstance(value, tuple) else value)))
        return out


def _coerce(value: str):
    low = value.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", ""):
        return None
    for kind in (int, float):
        try:
            return kind(value)
        except ValueError:
            pass
    return value.strip()


def parse_config(text: str) -> TrainConfig:
    """Flat ``key = value`` lines; ``#`` comments; ``model.<option>`` keys become model overrides.

    ``seeds`` and ``variants`` take comma-separated lists and switch ``train``
    into a multi-seed experiment.
    """
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    known = {f for f in TrainConfig.__dataclass_fields__ if f != "overrides"}
    kwargs: dict = {}
    overrides: dict = {}
    for key, raw in parser["run"].items():
        if key.startswith("model."):
            overrides[key[len("model."):]] = _coerce(raw)
        elif key in ("seeds", "variants"):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kwargs[key] = tuple(int(s) for s in items) if key == "seeds" else tuple(items)
        elif key in known:
            kwargs[key] = _coerce(raw)
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    for key in ("variant", "optimizer", "engine", "data_dir", "output_dir"):
        if kwargs.get(key) is not None:
            kwargs[key] = str(kwargs[key])
    return TrainConfig(overrides=overrides, **kwargs)


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        return parse_config(fh.read())


@dataclass
class RunMetrics:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)
    seconds: float = 0.0
    param_count: int = 0
    best_epoch: int = 0
    best_acc: float = -1.0
    aborted: Optional[str] = None

    @property
    def accuracies(self) -> list[float]:
        return [r[3] for r in self.rows]


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def prepare_datasets(config: TrainConfig, train: Optional[Dataset] = None,
                     test: Optional[Dataset] = None) -> tuple[Dataset, Dataset]:
    """Load (unless given), subset and resize the train/test splits described by ``config``."""
    if train is None or test is None:
        if not config.data_dir:
            raise ConfigurationError("no datasets given and no data_dir configured")
        train = load_mnist(config.data_dir, Split.TRAIN) if train is None else train
        test = load_mnist(config.data_dir, Split.TEST) if test is None else test
    plan = SubsetPlan(config.train_count if config.train_count is not None else len(train),
                      config.test_count if config.test_count is not None else len(test),
                      config.subset_seed)
    train, test = make_subset(train, plan), make_subset(test, plan)
    if train.images.shape[-1] != config.image_size:
        train = downsample_dataset(train, config.image_size, config.image_size)
        test = downsample_dataset(test, config.image_size, config.image_size)
    return train, test


def batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches; a trailing batch of one sample is folded into the previous one."""
    order = rng.permutation(n)
    out = [order[i: i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


# ---------------------------------------------------------------------------
# loops
# ---------------------------------------------------------------------------

def evaluate(model: Model, dataset: Dataset, batch_size: int = 500) -> tuple[float, float]:
    """Mean cross-entropy and argmax accuracy in inference mode."""
    if len(dataset) == 0:
        raise ConfigurationError("cannot evaluate on an empty dataset")
    losses, hits = [], 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start: start + batch_size]
        y = dataset.labels[start: start + batch_size]
        logits = model.forward(x, training=False)
        losses.append(cross_entropy_per_sample(logits, y))
        hits += int(np.sum(np.argmax(logits, axis=1) == y))
    return float(np.concatenate(losses).mean()), hits / len(dataset)


def train_epoch(model: Model, optimizer, dataset: Dataset, batch_size: int,
                rng: np.random.Generator) -> float:
    total, seen = 0.0, 0
    params = model.parameters()
    for idx in batches(len(dataset), batch_size, rng):
        x, y = dataset.images[idx], dataset.labels[idx]
        logits = model.forward(x, training=True)
        loss = float(cross_entropy_per_sample(logits, y).mean())
        if not math.isfinite(loss):
            raise TrainingAborted(f"non-finite training loss {loss} after {seen} samples")
        model.backward(cross_entropy_grad(logits, y))
        optimizer.step(params, model.gradients())
        total += loss * len(idx)
        seen += len(idx)
    return total / seen


def metadata_lines(config: TrainConfig, model: Model) -> list[str]:
    lines = [f"# hqnn {__version__}", f"# bilinear: {BILINEAR_CONVENTION}",
             f"# gradient_engine: {config.engine}", f"# param_count: {count_parameters(model).total}"]
    lines += [f"# config.{k}: {v}" for k, v in config.echo()]
    return lines


def write_metrics(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    buf.write("\n".join(header) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for epoch, tr, te, acc in rows:
        writer.writerow([epoch, repr(tr), repr(te), repr(acc)])
    path.write_text(buf.getvalue())


def read_metrics(path) -> list[tuple[int, float, float, float]]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return [(int(r["epoch"]), float(r["train_loss"]), float(r["test_loss"]), float(r["test_acc"]))
            for r in reader]


def run_training(config: TrainConfig, train: Optional[Dataset] = None, test: Optional[Dataset] = None,
                 model: Optional[Model] = None) -> tuple[RunMetrics, Model]:
    """Train one model; writes ``metrics.csv``, ``best.ckpt`` and ``last.ckpt`` under ``output_dir``."""
    train, test = prepare_datasets(config, train, test)
    if model is None:
        model = build_model(config.variant, config.model_overrides(), seed=config.seed)
    optimizer = make_optimizer(OptimizerConfig(kind=config.optimizer, lr=config.lr))
    out = Path(config.output_dir) if config.output_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    header = metadata_lines(config, model)
    metrics = RunMetrics(param_count=count_parameters(model).total)
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        try:
            train_loss = train_epoch(model, optimizer, train, config.batch_size, rng)
            test_loss, test_acc = evaluate(model, test)
            if not math.isfinite(test_loss):
                raise TrainingAborted(f"non-finite test loss at epoch {epoch}")
        except TrainingAborted as exc:
            metrics.aborted = f"epoch {epoch}: {exc}"
            log.error("run aborted: %s", metrics.aborted)
            break
        metrics.rows.append((epoch, train_loss, test_loss, test_acc))
        log.info("epoch %d train_loss %.4f test_loss %.4f test_acc %.4f", epoch, train_loss, test_loss, test_acc)
        if out:
            if test_acc > metrics.best_acc:
                save_checkpoint(model, out / "best.ckpt", {"epoch": epoch, "test_acc": repr(test_acc)})
            save_checkpoint(model, out / "last.ckpt", {"epoch": epoch, "test_acc": repr(test_acc)})
            write_metrics(out / "metrics.csv", header, metrics.rows)
        if test_acc > metrics.best_acc:
            metrics.best_acc, metrics.best_epoch = test_acc, epoch
    metrics.seconds = time.perf_counter() - start
    if out:
        write_metrics(out / "metrics.csv", header, metrics.rows)
        summary = {"seconds": metrics.seconds, "param_count": metrics.param_count,
                   "best_epoch": metrics.best_epoch, "best_acc": metrics.best_acc, "aborted": metrics.aborted}
        (out / "run.json").write_text(json.dumps(summary, indent=2) + "\n")
    if metrics.aborted:
        raise TrainingAborted(metrics.aborted)
    return metrics, model


# ---------------------------------------------------------------------------
# multi-seed experiments
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    aggregate: list[tuple[int, str, float, float]]
    runs: dict[tuple[str, int], RunMetrics]
    failures: dict[tuple[str, int], str]

    @property
    def complete(self) -> bool:
        return not self.failures

    def final(self, variant: str) -> tuple[float, float]:
        rows = [r for r in self.aggregate if r[1] == variant]
        return rows[-1][2], rows[-1][3]


def _run_one(args):
    config, train, test = args
    try:
        metrics, _ = run_training(config, train, test)
        return metrics, None
    except Exception as exc:  # reported as a partial experiment
        return None, f"{type(exc).__name__}: {exc}"


def aggregate_runs(runs: dict[tuple[str, int], RunMetrics], variants: Sequence[str]):
    rows = []
    for variant in variants:
        curves = [m.accuracies for (v, _), m in sorted(runs.items()) if v == variant]
        if not curves:
            continue
        epochs = min(len(c) for c in curves)
        acc = np.array([c[:epochs] for c in curves])
        for e in range(epochs):
            rows.append((e + 1, variant, float(acc[:, e].mean()), float(acc[:, e].std())))
    return rows


def multi_seed_experiment(config: TrainConfig, seeds: Sequence[int], variants: Optional[Sequence[str]] = None,
                          train: Optional[Dataset] = None, test: Optional[Dataset] = None,
                          workers: int = 1) -> ExperimentResult:
    """Train every (variant, seed) pair on the same data; std is the population std over seeds."""
    if len(seeds) < 2:
        raise ConfigurationError(f"a multi-seed experiment needs >= 2 seeds, got {len(seeds)}")
    variants = list(variants or config.variants or [config.variant])
    train, test = prepare_datasets(config, train, test)
    image_size = train.images.shape[-1]
    jobs, keys = [], []
    for variant in variants:
        for seed in seeds:
            out = str(Path(config.output_dir) / variant / f"seed{seed}") if config.output_dir else None
            cfg = replace(config, variant=variant, seed=seed, output_dir=out, seeds=(), variants=(),
                          train_count=None, test_count=None, image_size=image_size)
            jobs.append((cfg, train, test))
            keys.append((variant, seed))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    runs, failures = {}, {}
    for key, (metrics, error) in zip(keys, results):
        if error is None:
            runs[key] = metrics
        else:
            failures[key] = error
    result = ExperimentResult(aggregate_runs(runs, variants), runs, failures)
    if config.output_dir:
        write_aggregate(Path(config.output_dir) / "aggregate.csv", result)
    return result


def write_aggregate(path: Path, result: ExperimentResult) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not result.complete:
            fh.write("# incomplete: " + "; ".join(f"{v}/seed{s}: {e}" for (v, s), e in result.failures.items()) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        for epoch, model, mean, std in result.aggregate:
            writer.writerow([epoch, model, repr(mean), repr(std)])
