"""Command-line driver.

Subcommands: ``train``, ``eval``, ``analyze``, ``sweep`` and ``mdl-bound``.
Exit codes: 0 on success, 1 on a configuration or input error, 2 on a
numerical abort (non-finite loss or gradient).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

from . import data as data_io
from . import mdl, training
from .analytics import export_filters, extract_filters, nnz_report
from .architectures import built_layer_counts, first_weight_layer
from .checkpoint import CheckpointError, load_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("convbias")


def _add_run_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    for f in fields(training.RunConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                       metavar=f.name.upper())


def _run_config(args):
    values = {}
    if args.config:
        try:
            values.update(training.parse_config_text(Path(args.config).read_text()))
        except OSError as exc:
            raise training.ConfigError(f"cannot read config: {exc}") from None
    for f in fields(training.RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return training.make_config(values).validate()


def cmd_train(args):
    cfg = _run_config(args)
    result = training.train_run(cfg)
    for rec in result["records"][-1:]:
        print(json.dumps(rec))
    print(f"wrote {result['out_dir']}")
    return EXIT_OK


def _eval_dataset(args, spec):
    train, test = data_io.load(args.dataset, args.data_dir)
    ds = train if args.split == "train" else test
    if tuple(ds.image_shape) != (spec.in_channels, spec.image_size, spec.image_size):
        raise training.ConfigError(
            f"dataset images {tuple(ds.image_shape)} do not match the network input "
            f"{(spec.in_channels, spec.image_size, spec.image_size)}")
    if ds.num_classes != spec.num_classes:
        raise training.ConfigError("dataset class count does not match the network")
    return ds


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    ds = _eval_dataset(args, ckpt.spec)
    acc, loss = training.evaluate(ckpt.network, ds, args.batch_size)
    print(json.dumps({"split": args.split, "accuracy": acc, "loss": loss, "count": len(ds)}))
    return EXIT_OK


def cmd_analyze(args):
    ckpt = load_checkpoint(args.checkpoint)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = nnz_report(ckpt.network, built_layer_counts(ckpt.spec))
    (out / "sparsity.csv").write_text(report.to_csv())
    layer = first_weight_layer(ckpt.network.layers).name
    filters = extract_filters(ckpt.network, layer, min_nnz=args.min_nnz,
                              limit=args.max_filters, seed=args.seed)
    export_filters(filters, out / "filters")
    bound = mdl.network_bound_report(ckpt.network, m=args.m, delta=args.delta, b=args.b,
                                     train_loss=args.train_loss, base=_base(args.base))
    (out / "bound.txt").write_text(bound.table() + "\n")
    print(report.to_csv(), end="")
    print(f"exported {len(filters)} filters from {layer} (min_nnz={args.min_nnz})")
    print(bound.table())
    return EXIT_OK


def cmd_sweep(args):
    cfg = _run_config(args)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    if not sizes:
        raise training.ConfigError("--sizes is empty")
    rows = training.sweep(cfg, sizes, args.target, args.budget)
    print("size,params,epochs_to_target")
    for r in rows:
        print(",".join(str(c) for c in r.cells()))
    ok = [r.size for r in rows if r.epochs_to_target is not None]
    print(f"smallest qualifying size: {min(ok) if ok else 'none'}")
    return EXIT_OK


def _base(text):
    if text in ("e", "nats"):
        return math.e
    if text in ("2", "bits"):
        return 2
    base = float(text)
    if base <= 1:
        raise training.ConfigError(f"log base must exceed 1, got {text}")
    return base


def cmd_mdl_bound(args):
    base = _base(args.base)
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        rep = mdl.network_bound_report(ckpt.network, m=args.m, delta=args.delta, b=args.b,
                                       train_loss=args.train_loss, base=base)
    else:
        if args.n is None or args.nnz is None:
            raise training.ConfigError("give --checkpoint or both --n and --nnz")
        k = args.k if args.k is not None else mdl.sparsity_k(args.n, args.nnz)
        inp = mdl.BoundInput(args.train_loss, args.m, args.delta, args.n, k, args.b, args.nnz)
        gap = mdl.bound_gap(inp, base)
        rep = mdl.BoundReport(n=inp.n, k=k, b=inp.b, nnz=inp.nnz,
                              desc_len=mdl.sharing_desc_len(inp.n, k, inp.nnz, base),
                              gap=gap, bound=inp.train_loss + gap, base=base)
    print(rep.table())
    return EXIT_OK


def _bound_flags(p, m_required=True):
    p.add_argument("--m", type=int, required=m_required, default=None if m_required else 50000,
                   help="training-set size")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--b", type=int, default=32, help="bits per parameter value")
    p.add_argument("--train-loss", type=float, default=0.0, help="0-1 training loss")
    p.add_argument("--base", default="2", help="log base: 2 (bits) or e (nats)")


def build_parser():
    parser = argparse.ArgumentParser(prog="convbias")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--dataset", required=True, choices=sorted(data_io.LOADERS))
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--batch-size", type=int, default=1000)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="sparsity, filters and bound for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--min-nnz", type=int, default=20)
    p.add_argument("--max-filters", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    _bound_flags(p, m_required=False)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="epochs to a target training accuracy per model size")
    _add_run_flags(p)
    p.add_argument("--sizes", required=True, help="comma-separated alpha (or hidden) values")
    p.add_argument("--target", type=float, required=True, help="target training accuracy")
    p.add_argument("--budget", type=int, required=True, help="epoch budget per size")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("mdl-bound", help="description-length generalization bound")
    p.add_argument("--checkpoint")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--nnz", type=int)
    _bound_flags(p)
    p.set_defaults(func=cmd_mdl_bound)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except training.NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (training.ConfigError, CheckpointError, data_io.DataFormatError,
            FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
