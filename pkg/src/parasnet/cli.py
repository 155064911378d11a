"""One executable for the whole workflow, from dataset to benchmark.

Subcommands:
  gen             write a synthetic dataset (train and test splits)
  train           fit the CNN, save a checkpoint and a history CSV
  eval            confusion matrix of a checkpoint on a dataset split
  sweep           train at several filter widths and tabulate accuracy
  embed           t-SNE of the last hidden layer to CSV
  baseline-train  fit the keypoint-histogram classifier
  baseline-eval   confusion matrix of a saved baseline model
  bench           single-image latency of the CNN against the baseline

Every run prints its resolved configuration up front, so that line plus
the seeds in it reproduce the run. PARASNET_OUTDIR moves all default
output paths. Heavy imports happen after argument parsing, which lets
--threads cap the BLAS pool through environment variables before numpy
is loaded; when the library was imported beforehand the cap is best
effort only.
"""

from __future__ import annotations

import argparse
import os
import sys


def _outdir() -> str:
    return os.environ.get("PARASNET_OUTDIR", ".")


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _filter_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad filter list {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"bad filter list {text!r}")
    return values


def build_parser() -> argparse.ArgumentParser:
    out = _outdir()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--threads", type=_positive_int, default=None,
        help="cap BLAS worker threads (1 forces a serial, bit-reproducible run)",
    )

    parser = argparse.ArgumentParser(
        prog="parasnet", description=__doc__.split("\n", 1)[0]
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    p.add_argument("--out", default=os.path.join(out, "dataset"),
                   help="dataset root directory")
    p.add_argument("--seed", type=int, default=7, help="master generator seed")
    p.add_argument("--train", type=_positive_int, default=300,
                   help="training images per class")
    p.add_argument("--test", type=_positive_int, default=100,
                   help="test images per class")
    p.add_argument("--full-scale", action="store_true",
                   help="5000/1000 images per class instead of --train/--test")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train the CNN")
    p.add_argument("--data", required=True, help="dataset root (train/ and test/)")
    p.add_argument("--filters", type=_positive_int, default=8,
                   help="first-layer filter count F")
    p.add_argument("--epochs", type=_positive_int, default=30)
    p.add_argument("--batch", type=_positive_int, default=8)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-augment", action="store_true",
                   help="disable flips and shifts during training")
    p.add_argument("--ckpt", default=os.path.join(out, "model.pnet"),
                   help="checkpoint output path")
    p.add_argument("--history", default=os.path.join(out, "train_history.csv"),
                   help="per-epoch CSV output path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", default=os.path.join(out, "confusion.csv"))
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", parents=[common],
                       help="accuracy across filter widths")
    p.add_argument("--data", required=True)
    p.add_argument("--filters", type=_filter_list, default=[2, 4, 8, 16],
                   help="comma-separated filter counts")
    p.add_argument("--epochs", type=_positive_int, default=30)
    p.add_argument("--batch", type=_positive_int, default=8)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-seed", type=int, default=0,
                   help="weight initialization seed, shared by all widths")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--out", default=os.path.join(out, "sweep.csv"))
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("embed", parents=[common],
                       help="t-SNE embedding of hidden features")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iters", type=_positive_int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=os.path.join(out, "embedding.csv"))
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("baseline-train", parents=[common],
                       help="train the keypoint-histogram classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", type=_positive_int, default=64,
                   help="visual vocabulary size")
    p.add_argument("--svm-epochs", type=_positive_int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gap", type=float, default=0.2,
                   help="confidence gap under which naive Bayes blends in")
    p.add_argument("--out", default=os.path.join(out, "baseline.pbas"))
    p.set_defaults(func=_cmd_baseline_train)

    p = sub.add_parser("baseline-eval", parents=[common],
                       help="evaluate a saved baseline model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", default=os.path.join(out, "baseline_confusion.csv"))
    p.set_defaults(func=_cmd_baseline_eval)

    p = sub.add_parser("bench", parents=[common],
                       help="single-image latency and throughput")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--baseline", default=None,
                   help="optional baseline model to time on the same images")
    p.add_argument("--images", type=_positive_int, default=16,
                   help="distinct images to cycle through")
    p.add_argument("--iters", type=_positive_int, default=50)
    p.add_argument("--warmup", type=_positive_int, default=3)
    p.add_argument("--out", default=os.path.join(out, "bench.csv"))
    p.set_defaults(func=_cmd_bench)

    return parser


def _echo(args: argparse.Namespace) -> None:
    skip = {"func", "command"}
    pairs = [(k, v) for k, v in sorted(vars(args).items()) if k not in skip]
    print(f"[{args.command}] " + " ".join(f"{k}={v}" for k, v in pairs))


def _cmd_gen(args: argparse.Namespace) -> int:
    from . import pgmio, synth

    config = synth.GenConfig()
    train_n, test_n = (5000, 1000) if args.full_scale else (args.train, args.test)
    for split, count in (("train", train_n), ("test", test_n)):
        dataset = synth.gen_dataset(config, args.seed, split, count)
        root = os.path.join(args.out, split)
        pgmio.write_dataset(
            root, dataset.images, dataset.labels, args.seed, extra={"split": split}
        )
        print(f"wrote {len(dataset.images)} images under {root}")
    return 0


def _read_split(pgmio, root: str, split: str):
    return pgmio.read_dataset(os.path.join(root, split))


def _cmd_train(args: argparse.Namespace) -> int:
    from . import evaluation, pgmio, training
    from . import model as pm

    train_images, train_labels = _read_split(pgmio, args.data, "train")
    test_images, test_labels = _read_split(pgmio, args.data, "test")
    h, w = train_images.shape[1:3]
    net = pm.build_model(args.filters, seed=args.seed, height=h, width=w)
    config = training.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        augment=None if args.no_augment else training.AugmentConfig(),
    )
    report = training.fit(
        net, train_images, train_labels, test_images, test_labels, config,
        log=lambda e: print(
            f"epoch {e.epoch:3d}  loss {e.train_loss:.4f}  "
            f"test acc {e.test_accuracy:.4f}  ({e.seconds:.1f}s)"
        ),
    )
    net.meta["filters"] = str(args.filters)
    net.meta["epochs"] = str(args.epochs)
    _ensure_parent(args.ckpt)
    pm.save_checkpoint(net, args.ckpt)
    _ensure_parent(args.history)
    report.to_csv(args.history, include_seconds=False)
    print(evaluation.ConfusionMatrix(report.confusion))
    print(f"final test accuracy {report.final_accuracy:.4f}")
    print(f"checkpoint -> {args.ckpt} ({pm.param_count(net)} parameters)")
    print(f"history -> {args.history}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    from . import evaluation, pgmio
    from . import model as pm

    net = pm.load_checkpoint(args.ckpt)
    images, labels = _read_split(pgmio, args.data, args.split)
    matrix = evaluation.evaluate(
        evaluation.CnnClassifier(net, batch_size=4), images, labels
    )
    _ensure_parent(args.out)
    matrix.to_csv(args.out)
    print(matrix)
    from . import CLASS_NAMES

    for name, acc in zip(CLASS_NAMES, matrix.per_class_accuracy()):
        print(f"{name} accuracy {acc:.4f}")
    print(f"overall accuracy {matrix.accuracy():.4f}")
    print(f"confusion -> {args.out}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    from . import evaluation, pgmio, training

    train_images, train_labels = _read_split(pgmio, args.data, "train")
    test_images, test_labels = _read_split(pgmio, args.data, "test")
    config = training.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        augment=None if args.no_augment else training.AugmentConfig(),
    )
    result = evaluation.filter_sweep(
        args.filters, train_images, train_labels, test_images, test_labels,
        config, init_seed=args.init_seed,
    )
    _ensure_parent(args.out)
    result.to_csv(args.out)
    for row in result.rows:
        print(
            f"F={row.filters:<3d} params={row.params:<7d} "
            f"best={row.best_accuracy:.4f} final={row.final_accuracy:.4f}"
        )
    print(f"sweep -> {args.out}")
    return 0


def _cmd_embed(args: argparse.Namespace) -> int:
    from . import evaluation, pgmio, tsne
    from . import model as pm

    net = pm.load_checkpoint(args.ckpt)
    images, labels = _read_split(pgmio, args.data, args.split)
    features = evaluation.hidden_features(net, images)
    config = tsne.TsneConfig(
        perplexity=args.perplexity, iterations=args.iters, seed=args.seed
    )
    embedding = tsne.tsne(features, config)
    _ensure_parent(args.out)
    with open(args.out, "w") as fh:
        fh.write("x,y,label\n")
        for (x, y), label in zip(embedding, labels):
            fh.write(f"{x:.6f},{y:.6f},{int(label)}\n")
    score = evaluation.silhouette_score(embedding, labels)
    print(f"embedded {len(images)} images, silhouette {score:.4f}")
    print(f"embedding -> {args.out}")
    return 0


def _cmd_baseline_train(args: argparse.Namespace) -> int:
    from . import pgmio
    from .baseline import classify

    images, labels = _read_split(pgmio, args.data, "train")
    config = classify.BaselineTrainConfig(
        vocab_size=args.vocab,
        svm_epochs=args.svm_epochs,
        gap_threshold=args.gap,
        seed=args.seed,
    )
    clf = classify.train_baseline(images, labels, config, log=print)
    clf.model.meta = {
        "gap_threshold": str(args.gap),
        "seed": str(args.seed),
        "vocab_size": str(clf.model.vocab_size),
    }
    _ensure_parent(args.out)
    classify.save_baseline(clf.model, args.out)
    print(f"baseline model -> {args.out}")
    return 0


def _cmd_baseline_eval(args: argparse.Namespace) -> int:
    from . import evaluation, pgmio
    from .baseline import classify

    model = classify.load_baseline(args.model)
    gap = float(model.meta.get("gap_threshold", 0.2))
    clf = classify.SiftBowClassifier(model, gap_threshold=gap)
    images, labels = _read_split(pgmio, args.data, args.split)
    matrix = evaluation.evaluate(clf, images, labels)
    _ensure_parent(args.out)
    matrix.to_csv(args.out)
    print(matrix)
    print(f"overall accuracy {matrix.accuracy():.4f}")
    print(f"confusion -> {args.out}")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    from . import evaluation, pgmio
    from . import model as pm
    from .baseline import classify

    net = pm.load_checkpoint(args.ckpt)
    images, _ = _read_split(pgmio, args.data, args.split)
    images = images[: args.images]
    cnn = evaluation.CnnClassifier(net)
    rows = [
        ("cnn", evaluation.benchmark(
            cnn.predict_one, images, warmup=args.warmup, iters=args.iters
        ))
    ]
    if args.baseline is not None:
        model = classify.load_baseline(args.baseline)
        clf = classify.SiftBowClassifier(model)
        rows.append(("baseline", evaluation.benchmark(
            clf.predict_one, images, warmup=args.warmup, iters=args.iters
        )))
    _ensure_parent(args.out)
    lines = ["pipeline,p50_ms,p90_ms,p99_ms,fps"]
    for name, rep in rows:
        lines.append(
            f"{name},{rep.p50_ms:.3f},{rep.p90_ms:.3f},{rep.p99_ms:.3f},{rep.fps:.2f}"
        )
        print(
            f"{name:<9} p50 {rep.p50_ms:8.2f} ms   p90 {rep.p90_ms:8.2f} ms   "
            f"p99 {rep.p99_ms:8.2f} ms   {rep.fps:8.1f} fps"
        )
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if len(rows) == 2:
        ratio = rows[0][1].fps / rows[1][1].fps
        print(f"cnn throughput is {ratio:.1f}x the baseline's")
    print(f"report -> {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    _echo(args)
    from .baseline.classify import BaselineFileError
    from .model import CheckpointError

    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, CheckpointError, BaselineFileError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
