"""Single entry-point command: dataset generation, training, sweeps, metric
evaluation, model selection, and report emission.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 runtime or
numeric failure. All randomness flows from explicit --seed flags; identical
invocations write identical files. TNVAE_OUT sets the default output root.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import data as d
from . import metrics as m
from . import models as mo
from . import sweep as sw
from .configfile import apply_overrides, format_config, parse_config
from .errors import ConfigError, DataError, TnvaeError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_root(args) -> Path:
    out = getattr(args, "out", None) or os.environ.get("TNVAE_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# gen


def _gen_config(args) -> dict:
    cfg = {
        "kind": "spiral",
        "n": 5000,
        "seed": 0,
        "noise": 0.2,
        "turns": 3.0,
        "embed_dim": 31,
        "embed_seed": d.DEFAULT_EMBED_SEED,
        "n_states": 3,
        "shuffle_seed": -1,  # -1 disables shuffling
        "name": "",
    }
    if args.config:
        cfg = apply_overrides(cfg, [f"{k}={v}" for k, v in parse_config(args.config).items()])
    for key in ("kind", "n", "seed", "noise", "turns", "embed_dim", "embed_seed", "n_states", "name"):
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    if args.shuffle_seed is not None:
        cfg["shuffle_seed"] = args.shuffle_seed
    cfg = apply_overrides(cfg, args.set)
    return cfg


def cmd_gen(args) -> int:
    cfg = _gen_config(args)
    out = _out_root(args)
    if cfg["kind"] == "spiral":
        spiral = d.SpiralConfig(
            n_points=int(cfg["n"]),
            turns=float(cfg["turns"]),
            noise_sigma=float(cfg["noise"]),
            embed_dim=int(cfg["embed_dim"]),
            seed=int(cfg["seed"]),
            embed_seed=int(cfg["embed_seed"]),
        )
        series, ground_truth = d.gen_spiral(spiral)
    elif cfg["kind"] == "hmm":
        hmm = d.default_hmm_config(int(cfg["n"]), int(cfg["seed"]), n_states=int(cfg["n_states"]))
        series = d.gen_hmm(hmm)
        ground_truth = series.labels[:, None].astype(np.float64)
    else:
        raise ConfigError(f"unknown dataset kind {cfg['kind']!r}")

    if int(cfg["shuffle_seed"]) >= 0:
        perm = d.shuffle_permutation(series.n_points, int(cfg["shuffle_seed"]))
        series = d.shuffle_series(series, int(cfg["shuffle_seed"]))
        ground_truth = ground_truth[perm]

    name = str(cfg["name"]) or str(cfg["kind"])
    d.save_csv(series, out / f"{name}.csv")
    gt_cols = ["gt_x", "gt_y"] if cfg["kind"] == "spiral" else ["state"]
    with open(out / f"{name}.ground_truth.csv", "w", encoding="utf-8", newline="") as f:
        f.write(",".join(["time_index"] + gt_cols) + "\n")
        for i, row in enumerate(np.atleast_2d(ground_truth)):
            f.write(",".join([str(i)] + [repr(float(v)) for v in row]) + "\n")
    manifest = dict(cfg, n_points=series.n_points, dim=series.dim, data_hash=sw.series_hash(series))
    (out / f"{name}.manifest.txt").write_text(format_config(manifest), encoding="utf-8")
    print(f"wrote {name}.csv ({series.n_points} x {series.dim}), ground truth, manifest -> {out}")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    series = d.load_csv(args.dataset, has_labels=None)
    hp = mo.Hyperparams(
        variant=args.variant,
        n_layers=args.layers,
        hidden_width=args.width,
        latent_dim=args.latent,
        beta=args.beta,
        batch_size=args.batch,
        lr=args.lr,
    ).validate()
    splits = d.split_series(series, args.seed, args.val_fraction, args.test_fraction)
    cfg = mo.TrainConfig(
        epochs=args.epochs, batch_size=hp.batch_size, lr=hp.lr, seed=args.seed,
        val_fraction=args.val_fraction,
    )
    out = _out_root(args)
    rid = sw.run_id(sw.series_hash(series), hp, args.seed)
    record = mo.train(hp, splits, cfg, checkpoint_path=out / f"{rid}.ckpt", run_id=rid)
    record.save(out / f"{rid}.txt")
    if record.failed:
        print(f"run {rid} FAILED: {record.note}", file=sys.stderr)
        return 3
    print(
        f"run {rid} val_loss={record.final_val_loss!r} val_nl={record.val_nl!r} "
        f"checkpoint={record.checkpoint_ref}"
    )
    return 0


# ---------------------------------------------------------------------------
# sweep


def _load_gridspec(spec_arg: str, overrides) -> dict:
    if os.path.exists(spec_arg):
        cfg = parse_config(spec_arg)
    elif spec_arg in sw.BUILTIN_GRIDS:
        cfg = dict(sw.BUILTIN_GRIDS[spec_arg])
    else:
        raise ConfigError(
            f"gridspec {spec_arg!r} is neither a file nor a builtin "
            f"({', '.join(sorted(sw.BUILTIN_GRIDS))})"
        )
    return apply_overrides(cfg, overrides)


def cmd_sweep(args) -> int:
    if not os.path.exists(args.dataset):
        raise DataError(f"dataset {args.dataset} does not exist")
    series = d.load_csv(args.dataset, has_labels=None)
    spec = sw.SweepSpec.from_config(_load_gridspec(args.gridspec, args.set))
    out = _out_root(args)
    ds_hash = sw.series_hash(series)
    where = {
        sw.run_id(ds_hash, hp, seed): (gi, seed)
        for gi, hp, seed in spec.plan()
    }

    def progress(record):
        gi, seed = where[record.run_id]
        status = "FAILED" if record.failed else "ok"
        print(
            f"run grid={gi} seed={seed} {status} "
            f"val_loss={record.final_val_loss!r} val_nl={record.val_nl!r}",
            flush=True,
        )

    result = sw.run_sweep(series, spec, out, jobs=args.jobs, dataset_path=str(args.dataset), progress=progress)
    print(f"sweep: {len(result.records)} runs, {result.n_failures} failures -> {out}")
    if result.failed:
        print("sweep failed: too many training failures", file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------------------
# encode / metrics / select


def cmd_encode(args) -> int:
    model = mo.load_model(args.checkpoint)
    series = d.load_csv(args.dataset, has_labels=None)
    enc = mo.encode_series(model, series, source_model=str(args.checkpoint))
    m.save_encoding_csv(enc, args.out)
    print(f"wrote {enc.n_points} x {enc.dim} encodings -> {args.out}")
    return 0


def cmd_metrics(args) -> int:
    enc = m.load_encoding_csv(args.encodings)
    nl = m.neighbor_loss(enc)
    lines = {
        "n_points": enc.n_points,
        "latent_dim": enc.dim,
        "n_pairs": nl.n_pairs,
        "neighbor_loss": nl.total,
        "neighbor_loss_per_pair": nl.per_pair,
        "sigma": args.sigma,
        "random_walk_loglik": m.random_walk_loglik(enc, args.sigma),
    }
    if args.labels_from:
        labeled = d.load_csv(args.labels_from, has_labels=True)
        z, lab = m.align_encoding_labels(enc, labeled.labels)
        lines["silhouette"] = m.silhouette(z, lab)
        moments = m.cluster_moments(z, lab)
        lines["mean_abs_skew"] = moments.mean_abs_skew
        lines["mean_excess_kurtosis"] = moments.mean_excess_kurtosis
    text = format_config(lines)
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return 0


def cmd_select(args) -> int:
    records = sw.load_records(args.records)
    chosen = sw.select_model(records, args.criterion, args.k)
    for rank, record in enumerate(chosen, start=1):
        print(
            f"{rank} {record.run_id} {args.criterion}={record.criterion_value(args.criterion)!r} "
            f"checkpoint={record.checkpoint_ref}"
        )
    return 0


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    info = sw.read_manifest(args.records)
    records = sw.load_records(args.records)

    dataset_path = args.dataset or info["dataset"]
    if not os.path.exists(dataset_path):
        raise DataError(f"dataset {dataset_path} not found; pass --dataset")
    series = d.load_csv(dataset_path, has_labels=None)
    if sw.series_hash(series) != info["dataset_hash"]:
        raise DataError(f"{dataset_path} does not match the sweep's dataset hash")
    start = d.test_segment_start(series.n_points, info["test_fraction"])
    labels = series.labels[start:] if series.labels is not None else None
    test_series = d.SeriesMatrix(series.values[start:], labels, dict(series.meta, segment="test"))

    planned = len(sw.expand_grid(info["axes"])) * len(info["seeds"]) if info["axes"] else len(records)
    partial = len(records) < planned

    out = _out_root(args)
    tables = sw.correlation_report(records, test_series, args.records)
    written = sw.write_report(tables, out)
    if args.top_k:
        written += sw.write_topk_encodings(
            records, test_series, args.records, out, args.top_k, args.criterion
        )
    print(f"report files: {', '.join(written)} -> {out}")
    if partial:
        print(
            f"warning: partial report ({len(records)} of {planned} planned runs present)",
            file=sys.stderr,
        )
        return 2
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="tnvae", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--kind", choices=["spiral", "hmm"], default=None)
    p.add_argument("--n", type=int, default=None, help="number of time points")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise", type=float, default=None, help="spiral noise level")
    p.add_argument("--turns", type=float, default=None)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    p.add_argument("--embed-seed", dest="embed_seed", type=int, default=None)
    p.add_argument("--n-states", dest="n_states", type=int, default=None)
    p.add_argument("--shuffle-seed", dest="shuffle_seed", type=int, default=None,
                   help="shuffle rows with this seed (breaks time structure)")
    p.add_argument("--name", default=None)
    p.add_argument("--config", default=None, help="config file with the same keys")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a single model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--variant", choices=list(mo.VARIANTS), default="time_neighbor")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--width", type=int, default=50)
    p.add_argument("--latent", type=int, default=2)
    p.add_argument("--beta", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=0.2)
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.15)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train an ensemble over a hyperparameter grid")
    p.add_argument("--gridspec", required=True, help="gridspec file or builtin name")
    p.add_argument("--dataset", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--resume", action="store_true",
                   help="accepted for clarity; completed runs are always kept")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("encode", help="encode a dataset with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output encodings CSV")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("metrics", help="evaluate metrics on an encodings CSV")
    p.add_argument("--encodings", required=True)
    p.add_argument("--labels-from", dest="labels_from", default=None,
                   help="dataset CSV whose label column scores the encoding")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("select", help="pick the best records from a sweep")
    p.add_argument("--records", required=True, help="sweep output directory")
    p.add_argument("--criterion", choices=["val_loss", "nl", "neighbor_loss"], default="nl")
    p.add_argument("--k", type=int, default=1)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("report", help="emit report tables and figure data")
    p.add_argument("--records", required=True, help="sweep output directory")
    p.add_argument("--dataset", default=None, help="override the manifest's dataset path")
    p.add_argument("--top-k", dest="top_k", type=int, default=0)
    p.add_argument("--criterion", choices=["val_loss", "nl", "neighbor_loss"], default="nl")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except TnvaeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
