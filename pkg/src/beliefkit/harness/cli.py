"""Command-line experiment runner.

Every run directory receives config.json, metrics.csv (epoch, loss,
train_acc, test_acc), and a model checkpoint, so reruns can be diffed
byte for byte.  Usage errors exit 2 (argparse), runtime failures exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..beliefs import (
    coarse_to_prior,
    debias_prior,
    fuse_auxiliary,
    partial_label_prior,
    ranking_pair_prior,
    SelfSimilarityParams,
)
from ..data import (
    BeliefDataset,
    SyntheticSceneSpec,
    counter_rng,
    gen_blob_points,
    gen_coarse_scene,
    gen_texture_scene,
    load_mnist,
    make_ranked_pairs,
    read_beliefs,
    sample_negative_labels,
    write_beliefs,
)
from ..losses import DistributionBatch
from ..models import ModelSpec, build_model, load_checkpoint, save_checkpoint
from .metrics import cluster_to_label, evaluate, evaluate_r, predict_proba
from .train import EpochRecord, TrainConfig, train, train_scene

__all__ = ["main", "build_parser"]

_STREAM_TRAIN_SUBSET = 501
_STREAM_TEST_SUBSET = 502
_STREAM_LABELED_POINTS = 11


def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def _write_run(out_dir, payload: dict, history, model=None, extra: dict | None = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out / "metrics.csv", "w", newline="") as f:
        f.write("epoch,loss,train_acc,test_acc\n")
        for r in history:
            f.write(f"{r.epoch},{_fmt(r.loss)},{_fmt(r.train_acc)},{_fmt(r.test_acc)}\n")
    if model is not None:
        save_checkpoint(model, out / "model.bkpt", extra=extra or {})
    return out


def _write_summary(out_dir, summary: dict):
    with open(Path(out_dir) / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def _report_dict(report) -> dict:
    iou = [None if not np.isfinite(v) else float(v) for v in report.per_class_iou]
    return {
        "accuracy": report.accuracy,
        "mean_iou": report.mean_iou,
        "per_class_iou": iou,
        "confusion": report.confusion.tolist(),
    }


def _subsample(n_total: int, n_keep: int, seed: int, stream: int) -> np.ndarray | None:
    if n_keep <= 0 or n_keep >= n_total:
        return None
    rng = counter_rng(seed, stream=stream)
    return np.sort(rng.choice(n_total, size=n_keep, replace=False))


def _model_inputs(kind: str, images: np.ndarray) -> np.ndarray:
    if kind in ("logistic", "mlp"):
        return images.reshape(len(images), -1)
    return images


def _parse_widths(text: str) -> tuple:
    return tuple(int(w) for w in text.split(",") if w.strip()) if text else ()


def _add_train_flags(p: argparse.ArgumentParser, epochs=300, lr=1e-4, batch=256):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--batch", type=int, default=batch)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--smoothing", type=float, default=1e-4)
    p.add_argument("--warmup", type=int, default=0, help="cross-entropy epochs first")
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--eval-train-n", type=int, default=0, help="0 = evaluate on all")
    p.add_argument("--out", required=True, help="run directory")


def _mnist_flags(p: argparse.ArgumentParser):
    p.add_argument("--data", default="data/mnist", help="directory with IDX files")
    p.add_argument("--subset", type=int, default=0, help="train on N seeded images (0 = all)")
    p.add_argument("--test-subset", type=int, default=0)
    p.add_argument("--model", default="small_cnn", choices=["small_cnn", "mlp", "logistic"])
    p.add_argument("--widths", default="", help="comma-separated MLP hidden sizes")
    p.add_argument("--dtype", default="float32", choices=["float32", "float64"])


def _load_mnist_arrays(args):
    tr = load_mnist(args.data, "train")
    te = load_mnist(args.data, "test")
    keep = _subsample(len(tr.labels), args.subset, args.seed, _STREAM_TRAIN_SUBSET)
    if keep is not None:
        tr = tr.take(keep)
    keep = _subsample(len(te.labels), args.test_subset, args.seed, _STREAM_TEST_SUBSET)
    if keep is not None:
        te = te.take(keep)
    return tr, te


def _mnist_model_spec(args) -> ModelSpec:
    return ModelSpec(
        kind=args.model,
        classes=10,
        in_dim=784,
        in_channels=1,
        in_side=28,
        widths=_parse_widths(args.widths),
        dtype=args.dtype,
        seed=args.seed,
    )


def _train_config(args, loss: str, spec: ModelSpec) -> TrainConfig:
    return TrainConfig(
        loss=loss,
        lr=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        smoothing=args.smoothing,
        model=spec,
        warmup_epochs=getattr(args, "warmup", 0),
        eval_every=args.eval_every,
        eval_train_n=args.eval_train_n or None,
    )


def _payload(args, config: TrainConfig, command: str, **extra) -> dict:
    d = {"command": command, "train": config.to_dict()}
    d.update(extra)
    return d


def cmd_mnist_partial(args) -> int:
    tr, te = _load_mnist_arrays(args)
    loss = "nll_union" if args.loss == "nll" else args.loss
    mask = sample_negative_labels(tr.labels, args.k, args.seed)
    if loss == "nll_union":
        supervision = mask
    else:
        supervision = mask / mask.sum(axis=1, keepdims=True)
    spec = _mnist_model_spec(args)
    model = build_model(spec)
    config = _train_config(args, loss, spec)
    x = _model_inputs(args.model, tr.images)
    xt = _model_inputs(args.model, te.images)
    result = train(model, x, supervision, config,
                   eval_train=(x, tr.labels), eval_test=(xt, te.labels))
    out = _write_run(args.out, _payload(args, config, "mnist-partial", k=args.k),
                     result.history, model,
                     extra={"test_accuracy": result.final_test.accuracy})
    _write_summary(out, {"train": _report_dict(result.final_train),
                         "test": _report_dict(result.final_test)})
    print(f"test accuracy {result.final_test.accuracy:.4f}")
    return 0


def cmd_mnist_rank(args) -> int:
    tr, te = _load_mnist_arrays(args)
    pairs = make_ranked_pairs(tr.labels, args.seed)
    spec = _mnist_model_spec(args)
    model = build_model(spec)
    config = _train_config(args, "pair_rq", spec)
    x = _model_inputs(args.model, tr.images)
    xt = _model_inputs(args.model, te.images)
    result = train(model, x, pairs, config,
                   eval_train=(x, tr.labels), eval_test=(xt, te.labels))
    out = _write_run(args.out, _payload(args, config, "mnist-rank", n_pairs=len(pairs.first)),
                     result.history, model,
                     extra={"test_accuracy": result.final_test.accuracy})
    _write_summary(out, {"train": _report_dict(result.final_train),
                         "test": _report_dict(result.final_test)})
    print(f"test accuracy {result.final_test.accuracy:.4f}")
    return 0


def _entropy(rows: np.ndarray) -> float:
    rows = np.clip(rows, 1e-12, None)
    return float(-(rows * np.log(rows)).sum(axis=-1).mean())


def cmd_segment_synth(args) -> int:
    layout = args.layout or ("blobs" if args.prior == "coarse" else "bands")
    spec = SyntheticSceneSpec(h=args.size, w=args.size, classes=args.classes, layout=layout)
    selfsim = None
    if args.prior == "coarse":
        scene = gen_coarse_scene(spec, args.factor, args.seed)
        sigma = args.sigma if args.sigma > 0 else args.factor / 2.0
        prior = coarse_to_prior(scene.coarse, scene.cooccurrence, sigma)
    else:
        scene = gen_texture_scene(spec, args.seed)
        prior = scene.prior
        if args.prior == "selfsim":
            selfsim = SelfSimilarityParams.contrastive(args.classes)
    model_spec = ModelSpec(
        kind="patch_fcn",
        classes=args.classes,
        in_channels=spec.channels,
        in_side=args.size,
        widths=(args.filters, args.layers),
        dtype=args.dtype,
        seed=args.seed,
    )
    model = build_model(model_spec)
    config = TrainConfig(
        loss=args.loss,
        lr=args.lr,
        batch_size=1,
        epochs=args.epochs,
        seed=args.seed,
        smoothing=args.smoothing,
        model=model_spec,
        prior_refresh=args.refresh,
        eval_every=args.eval_every,
    )
    result = train_scene(model, scene.image, prior, config,
                         selfsim=selfsim, eval_labels=scene.labels)
    q = predict_proba(model, scene.image[None], batch_size=1)
    agreement = float((q.argmax(axis=1) == scene.labels.reshape(-1)).mean())
    payload = _payload(args, config, "segment-synth", prior=args.prior,
                       layout=layout, size=args.size, factor=args.factor)
    out = _write_run(args.out, payload, result.history, model,
                     extra={"pixel_agreement": agreement})
    _write_summary(out, {
        "pixel_agreement": agreement,
        "prediction_entropy": _entropy(q),
        "prior_entropy": _entropy(prior.reshape(-1, args.classes)),
    })
    print(f"pixel agreement {agreement:.4f}")
    return 0


def cmd_cluster(args) -> int:
    points, labels = gen_blob_points(args.n, args.k_clusters, args.seed,
                                     separation=args.separation)
    spec = ModelSpec(
        kind=args.model,
        classes=args.k_clusters,
        in_dim=points.shape[1],
        widths=_parse_widths(args.widths),
        dtype="float64",
        seed=args.seed,
    )
    model = build_model(spec)
    if args.batch <= 0:
        args.batch = len(points)  # full-batch default: column stats need it
    config = _train_config(args, "diverse", spec)
    result = train(model, points, None, config)
    q = predict_proba(model, points)
    rng = counter_rng(args.seed, stream=_STREAM_LABELED_POINTS)
    labeled = np.sort(rng.choice(args.n, size=args.labeled_points, replace=False))
    mapping, pred = cluster_to_label(q, labeled, labels[labeled])
    alignment = float((pred == labels).mean())
    max_prob = float(q.max(axis=1).mean())
    payload = _payload(args, config, "cluster",
                       k_clusters=args.k_clusters, labeled_points=args.labeled_points)
    out = _write_run(args.out, payload, result.history, model,
                     extra={"alignment": alignment, "max_prob": max_prob})
    _write_summary(out, {"alignment": alignment, "max_prob": max_prob,
                         "mapping": mapping.tolist()})
    print(f"alignment {alignment:.4f} max-prob {max_prob:.4f}")
    return 0


def _rewrite_beliefs(path_in, path_out, new_priors: DistributionBatch):
    ds = read_beliefs(path_in)
    out = BeliefDataset(features=ds.features, priors=new_priors,
                        labels=ds.labels, dim=ds.dim)
    write_beliefs(path_out, out)


def cmd_make_prior(args) -> int:
    if args.kind == "rank":
        table = ranking_pair_prior(args.classes).table
        np.savetxt(args.out, table, delimiter=",")
        print(f"wrote {args.classes}x{args.classes} ranking table to {args.out}")
        return 0
    if args.kind == "coarse":
        coarse = np.loadtxt(args.coarse, delimiter=",", dtype=np.int64)
        cooc = np.loadtxt(args.cooc, delimiter=",", dtype=np.float64)
        prior = coarse_to_prior(coarse, cooc, args.sigma)
        np.save(args.out, prior)
        print(f"wrote prior raster {prior.shape} to {args.out}")
        return 0
    ds = read_beliefs(args.beliefs)
    if args.kind == "partial":
        if ds.labels is None:
            raise ValueError("partial priors need labels in the beliefs file")
        l = ds.priors.l
        mask = sample_negative_labels(ds.labels, args.k, args.seed, l=l)
        new = partial_label_prior([np.flatnonzero(m) for m in mask], l)
    elif args.kind == "debias":
        new = debias_prior(ds.priors)
    else:  # fuse
        aux = np.load(args.aux)
        new = DistributionBatch(fuse_auxiliary(ds.priors.values, aux))
    _rewrite_beliefs(args.beliefs, args.out, new)
    print(f"wrote {args.kind} beliefs to {args.out}")
    return 0


def cmd_train_beliefs(args) -> int:
    ds = read_beliefs(args.beliefs)
    x = ds.dense_features()
    loss = "nll_union" if args.loss == "nll" else args.loss
    supervision = ds.priors.values > 0 if loss == "nll_union" else ds.priors.values
    spec = ModelSpec(
        kind=args.model,
        classes=ds.priors.l,
        in_dim=x.shape[1],
        widths=_parse_widths(args.widths),
        dtype=args.dtype,
        seed=args.seed,
    )
    model = build_model(spec)
    config = _train_config(args, loss, spec)
    eval_train = (x, ds.labels) if ds.labels is not None else None
    eval_test = None
    if args.test_beliefs:
        ts = read_beliefs(args.test_beliefs)
        if ts.labels is not None:
            eval_test = (ts.dense_features(), ts.labels)
    result = train(model, x, supervision, config,
                   eval_train=eval_train, eval_test=eval_test)
    extra = {}
    if result.final_test is not None:
        extra["test_accuracy"] = result.final_test.accuracy
    out = _write_run(args.out, _payload(args, config, "train", beliefs=str(args.beliefs)),
                     result.history, model, extra=extra)
    summary = {}
    if result.final_train is not None:
        summary["train"] = _report_dict(result.final_train)
    if result.final_test is not None:
        summary["test"] = _report_dict(result.final_test)
    if summary:
        _write_summary(out, summary)
    print(f"final loss {result.history[-1].loss:.6f}")
    return 0


def cmd_eval(args) -> int:
    model, extra = load_checkpoint(args.checkpoint)
    ds = read_beliefs(args.beliefs)
    if ds.labels is None:
        raise ValueError("eval needs labels in the beliefs file")
    x = ds.dense_features()
    if args.posterior:
        report = evaluate_r(model, ds.priors, x, ds.labels)
    else:
        report = evaluate(model, x, ds.labels)
    payload = {"command": "eval", "checkpoint": str(args.checkpoint),
               "beliefs": str(args.beliefs), "posterior": bool(args.posterior),
               "checkpoint_extra": extra}
    row = EpochRecord(epoch=0, loss=float("nan"), test_acc=report.accuracy)
    out = _write_run(args.out, payload, [row], model)
    _write_summary(out, _report_dict(report))
    print(f"accuracy {report.accuracy:.4f} mean IoU {report.mean_iou:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beliefkit",
        description="Weak-supervision training experiments over belief priors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mnist-partial", help="digits with k sampled negative labels")
    p.add_argument("--k", type=int, default=1, help="negative labels per image")
    p.add_argument("--loss", default="rq", choices=["qr", "rq", "ce", "nll"])
    _mnist_flags(p)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_mnist_partial)

    p = sub.add_parser("mnist-rank", help="digits from ranked pairs")
    _mnist_flags(p)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_mnist_rank)

    p = sub.add_parser("segment-synth", help="synthetic scene segmentation")
    p.add_argument("--prior", default="hand", choices=["hand", "coarse", "selfsim"])
    p.add_argument("--layout", default="", choices=["", "bands", "blobs"])
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--factor", type=int, default=16, help="coarse block side")
    p.add_argument("--sigma", type=float, default=0.0, help="0 = factor/2")
    p.add_argument("--loss", default="qr", choices=["qr", "rq", "ce"])
    p.add_argument("--filters", type=int, default=128)
    p.add_argument("--layers", type=int, default=5)
    p.add_argument("--refresh", type=int, default=50)
    p.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    _add_train_flags(p, epochs=150, lr=1e-3, batch=1)
    p.set_defaults(fn=cmd_segment_synth)

    p = sub.add_parser("cluster", help="self-supervised clustering on blobs")
    p.add_argument("--k-clusters", type=int, default=2)
    p.add_argument("--labeled-points", type=int, default=20)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--model", default="logistic", choices=["logistic", "mlp"])
    p.add_argument("--widths", default="")
    _add_train_flags(p, epochs=200, lr=1e-2, batch=0)
    p.set_defaults(fn=cmd_cluster)

    p = sub.add_parser("make-prior", help="construct belief priors")
    p.add_argument("--kind", required=True,
                   choices=["partial", "rank", "coarse", "debias", "fuse"])
    p.add_argument("--beliefs", default="", help="input beliefs file (partial/debias/fuse)")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=10, help="rank table size")
    p.add_argument("--coarse", default="", help="coarse raster CSV (kind=coarse)")
    p.add_argument("--cooc", default="", help="cooccurrence CSV (kind=coarse)")
    p.add_argument("--sigma", type=float, default=3.0)
    p.add_argument("--aux", default="", help="auxiliary mass .npy (kind=fuse)")
    p.set_defaults(fn=cmd_make_prior)

    p = sub.add_parser("train", help="train on a beliefs file")
    p.add_argument("--beliefs", required=True)
    p.add_argument("--test-beliefs", default="")
    p.add_argument("--loss", default="rq", choices=["qr", "rq", "ce", "nll"])
    p.add_argument("--model", default="logistic", choices=["logistic", "mlp"])
    p.add_argument("--widths", default="")
    p.add_argument("--dtype", default="float64", choices=["float32", "float64"])
    _add_train_flags(p, epochs=100, lr=1e-3, batch=64)
    p.set_defaults(fn=cmd_train_beliefs)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a beliefs file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--beliefs", required=True)
    p.add_argument("--posterior", action="store_true",
                   help="score the implied posterior instead of raw predictions")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        raise
    except Exception as e:  # runtime failure contract: exit 1 with a message
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
