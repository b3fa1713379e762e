"""Command-line entry point: ``hqnn {train,eval,gradcheck,fourier,inspect}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, HQNNError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hqnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one model or a multi-seed experiment")
    t.add_argument("--config", required=True)
    t.add_argument("--workers", type=int, default=1)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the MNIST test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="directory holding the MNIST IDX files")
    e.add_argument("--count", type=int, default=None, help="evaluate on a seeded subset of this size")
    e.add_argument("--subset-seed", type=int, default=0)

    g = sub.add_parser("gradcheck", help="cross-check gradient engines on random circuits")
    g.add_argument("--qubits", type=int, default=5)
    g.add_argument("--depth", type=int, default=3)
    g.add_argument("--trials", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None, help="CSV path (default: stdout)")

    f = sub.add_parser("fourier", help="sample Fourier coefficients of the parallel-layer circuit")
    f.add_argument("--samples", type=int, default=100)
    f.add_argument("--frequency", type=int, default=1)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--qubits", type=int, default=5)
    f.add_argument("--depth", type=int, default=3)
    f.add_argument("--out", default="fourier_violin.csv")

    i = sub.add_parser("inspect", help="print the parameter table of a checkpoint")
    i.add_argument("--checkpoint", required=True)
    return p


def _cmd_train(args) -> int:
    from .train import load_config, multi_seed_experiment, run_training

    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    config = load_config(args.config)
    if config.seeds:
        result = multi_seed_experiment(config, config.seeds, workers=args.workers)
        for variant in dict.fromkeys(r[1] for r in result.aggregate):
            mean, std = result.final(variant)
            print(f"{variant}: final test accuracy {mean:.4f} +- {std:.4f}")
        if not result.complete:
            print(f"incomplete: {len(result.failures)} run(s) failed", file=sys.stderr)
            return EXIT_RUNTIME
        return EXIT_OK
    metrics, _ = run_training(config)
    for epoch, tr, te, acc in metrics.rows:
        print(f"epoch {epoch:3d}  train_loss {tr:.4f}  test_loss {te:.4f}  test_acc {acc:.4f}")
    print(f"best test accuracy {metrics.best_acc:.4f} at epoch {metrics.best_epoch}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import Split, SubsetPlan, downsample_dataset, load_mnist, make_subset
    from .train import evaluate

    model = load_checkpoint(args.checkpoint)
    test = load_mnist(args.data, Split.TEST)
    if args.count is not None:
        test = make_subset(test, SubsetPlan(0, args.count, args.subset_seed))
    size = model.spec.options["image_size"]
    if test.images.shape[-1] != size:
        test = downsample_dataset(test, size, size)
    loss, acc = evaluate(model, test)
    print(f"test_loss {loss:.6f}  test_acc {acc:.6f}  samples {len(test)}")
    return EXIT_OK


def gradcheck_rows(qubits: int, depth: int, trials: int, seed: int = 0) -> list[tuple[int, str, float]]:
    """One row per random circuit: the engine pair with the largest disagreement and its size."""
    from .grad import adjoint_grad, finite_diff_grad, param_shift_grad
    from .pqc import parallel_circuit_spec

    if trials < 1:
        raise ConfigurationError(f"trials must be >= 1, got {trials}")
    spec = parallel_circuit_spec(qubits, depth)
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(trials):
        x = rng.uniform(-np.pi, np.pi, spec.num_inputs)
        theta = rng.uniform(0, 2 * np.pi, spec.num_params)
        engines = {"param_shift": param_shift_grad(spec, x, theta), "adjoint": adjoint_grad(spec, x, theta),
                   "finite_diff": finite_diff_grad(spec, x, theta)}
        worst = ("", -1.0)
        for a, b in (("param_shift", "adjoint"), ("param_shift", "finite_diff"), ("adjoint", "finite_diff")):
            diff = max(float(np.max(np.abs(ga - gb), initial=0.0))
                       for ga, gb in zip(engines[a], engines[b]))
            if diff > worst[1]:
                worst = (f"{a}/{b}", diff)
        rows.append((k, worst[0], worst[1]))
    return rows


def _cmd_gradcheck(args) -> int:
    rows = gradcheck_rows(args.qubits, args.depth, args.trials, args.seed)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["circuit_id", "engine_pair", "max_abs_diff"])
        for row in rows:
            writer.writerow([row[0], row[1], repr(row[2])])
    finally:
        if args.out:
            fh.close()
    worst = max(r[2] for r in rows)
    print(f"# {len(rows)} circuits, worst engine disagreement {worst:.3e}", file=sys.stderr)
    return EXIT_OK


def _cmd_fourier(args) -> int:
    from .fourier import correlation_determinant, export_violin_csv, sample_coefficient_distribution
    from .pqc import parallel_circuit_spec

    spec = parallel_circuit_spec(args.qubits, args.depth)
    dist = sample_coefficient_distribution(spec, args.samples, args.seed, d=args.frequency)
    rows = export_violin_csv(dist, args.out)
    std_re, std_im = dist.spread()
    for omega, sr, si in zip(dist.omegas, std_re, std_im):
        print(f"c{omega}: std(real) {sr:.4f}  std(imag) {si:.4f}")
    print(f"correlation determinant {correlation_determinant(dist):.3e}")
    print(f"wrote {rows} rows to {args.out}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    from .checkpoint import load_checkpoint
    from .nn.models import count_parameters

    model = load_checkpoint(args.checkpoint)
    print(f"variant {model.variant.value}")
    print(count_parameters(model).format())
    return EXIT_OK


_COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "gradcheck": _cmd_gradcheck,
             "fourier": _cmd_fourier, "inspect": _cmd_inspect}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (HQNNError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
