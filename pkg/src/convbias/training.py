"""Run configuration, the epoch loop and evaluation.

Metrics go to ``metrics.jsonl``, one JSON object per epoch with a fixed key
order. Wall-clock times go to the ``timing.jsonl`` sidecar so that the
metrics file of a seeded run is byte-reproducible.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import data as data_io
from . import optim
from .analytics import nnz_report
from .architectures import ArchSpec, Family, build, param_count
from .checkpoint import save_checkpoint
from .functional import softmax_xent
from .layers import CONV_LIKE, FC_LIKE

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class NumericalAbort(FloatingPointError):
    pass


@dataclass
class RunConfig:
    arch: str = "s-fc"
    alpha: int = 1
    hidden: int | None = None
    dataset: str = "mnist"
    data_dir: str = ""
    optimizer: str = optim.SGD
    lr: float = 0.1
    lambda_conv: float = 0.0
    lambda_fc: float = 0.0
    beta: float = 50.0
    momentum: float = 0.0
    weight_decay: float = 0.0
    epochs: int = 1
    batch_size: int = 512
    seed: int = 0
    dropout: float = 0.0
    val_fraction: float = 0.1
    augment: bool = False
    crop_pad: int = 4
    hflip: bool = True
    train_limit: int | None = None
    eval_batch_size: int = 1000
    out_dir: str = "runs/default"

    def validate(self):
        try:
            Family(self.arch)
        except ValueError:
            raise ConfigError(f"unknown arch {self.arch!r}") from None
        if self.dataset not in data_io.LOADERS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if not self.data_dir or not os.path.isdir(self.data_dir):
            raise ConfigError(f"data_dir {self.data_dir!r} does not exist")
        if self.optimizer not in (optim.SGD, optim.BETA_LASSO):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.train_limit is not None and self.train_limit < 1:
            raise ConfigError("train_limit must be positive")
        return self


def _coerce(value: str, ftype):
    text = value.strip()
    if "None" in str(ftype) and text.lower() in ("", "none", "null"):
        return None
    if "bool" in str(ftype):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    for name, cast in (("int", int), ("float", float)):
        if str(ftype).startswith(name):
            try:
                return cast(text)
            except ValueError:
                raise ConfigError(f"not a{'n' if name == 'int' else ''} {name}: {value!r}") from None
    return text


def parse_config_text(text):
    """Parse flat ``key = value`` lines (``#`` starts a comment)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def make_config(values: dict) -> RunConfig:
    """Build a RunConfig from string or typed values keyed by field name."""
    types = {f.name: f.type for f in fields(RunConfig)}
    kwargs = {}
    for key, value in values.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[key] = _coerce(value, types[key]) if isinstance(value, str) else value
    return RunConfig(**kwargs)


def config_to_text(cfg: RunConfig):
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def arch_spec(cfg: RunConfig, dataset) -> ArchSpec:
    C, H, W = dataset.image_shape
    if H != W:
        raise ConfigError("square images required")
    return ArchSpec(Family(cfg.arch), alpha=cfg.alpha, image_size=H, in_channels=C,
                    num_classes=dataset.num_classes, hidden=cfg.hidden, dropout=cfg.dropout)


def optimizer_config(cfg: RunConfig, total_steps) -> optim.OptimizerConfig:
    return optim.OptimizerConfig(
        eta0=cfg.lr, lambda_by_group={CONV_LIKE: cfg.lambda_conv, FC_LIKE: cfg.lambda_fc},
        beta=cfg.beta, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
        total_steps=max(1, total_steps), algorithm=cfg.optimizer)


def steps_per_epoch(n, batch_size):
    return math.ceil(n / batch_size)


def evaluate(network, dataset, batch_size=1000):
    """Eval-mode top-1 accuracy and mean cross-entropy over ``dataset``."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    mode = network.mode
    network.eval()
    correct = 0
    total_loss = 0.0
    try:
        for start in range(0, len(dataset), batch_size):
            idx = np.arange(start, min(start + batch_size, len(dataset)))
            logits = network.forward(data_io.make_batch(dataset, idx, dtype=network.dtype))
            labels = dataset.labels[idx]
            loss, _ = softmax_xent(logits, labels)
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels).sum())
    finally:
        network.mode = mode
    return correct / len(dataset), total_loss / len(dataset)


def train_epoch(network, dataset, opt_config, opt_state, epoch, batch_size, seed,
                augment=None, step_losses=None):
    """One pass over ``dataset`` in a seeded shuffled order.

    Returns ``(mean loss, running accuracy, last learning rate)``.
    """
    network.train()
    n = len(dataset)
    order = np.random.default_rng([seed, epoch]).permutation(n)
    params = list(network.params.values())
    total_loss, correct, lr = 0.0, 0, float("nan")
    for b, start in enumerate(range(0, n, batch_size)):
        idx = order[start:start + batch_size]
        x = data_io.make_batch(dataset, idx, augment, seed=[seed, epoch, b], dtype=network.dtype)
        labels = dataset.labels[idx]
        logits = network.forward(x)
        loss, grad = softmax_xent(logits, labels)
        if not math.isfinite(loss):
            raise NumericalAbort(f"non-finite loss at epoch {epoch}, batch {b}")
        network.backward(grad)
        try:
            lr = optim.step(params, opt_config, opt_state)
        except optim.NonFiniteGradient as exc:
            raise NumericalAbort(str(exc)) from exc
        if step_losses is not None:
            step_losses.append(loss)
        total_loss += loss * len(idx)
        correct += int((logits.argmax(axis=1) == labels).sum())
    return total_loss / n, correct / n, lr


@dataclass
class Prepared:
    train: object
    val: object
    test: object
    spec: ArchSpec


def prepare_data(cfg: RunConfig, loaded=None) -> Prepared:
    train, test = loaded if loaded is not None else data_io.load(cfg.dataset, cfg.data_dir)
    if cfg.train_limit is not None:
        train = train.subset(np.arange(min(cfg.train_limit, len(train))))
    val = None
    if cfg.val_fraction > 0:
        train, val = data_io.split_train_val(train, cfg.val_fraction, seed=cfg.seed)
    return Prepared(train, val, test, arch_spec(cfg, train))


METRIC_KEYS = ("epoch", "train_loss", "train_acc", "val_acc", "test_acc", "lr", "nnz")


def train_run(cfg: RunConfig, loaded=None):
    """Full training run writing metrics and checkpoints under ``cfg.out_dir``.

    Checkpoints: ``init.sclb`` before training, ``last.sclb`` after every
    epoch, ``best.sclb`` at the best validation accuracy and ``final.sclb``
    at the end. A non-finite loss raises :class:`NumericalAbort` and leaves
    the previous checkpoints untouched.
    """
    prep = prepare_data(cfg, loaded)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_to_text(cfg))

    network = build(prep.spec, seed=cfg.seed)
    spe = steps_per_epoch(len(prep.train), cfg.batch_size)
    opt_config = optimizer_config(cfg, cfg.epochs * spe)
    opt_state = optim.OptimizerState()
    augment = data_io.AugmentConfig(cfg.crop_pad, cfg.hflip, cfg.augment)

    def save(name, extra=None):
        save_checkpoint(out / name, prep.spec, network, opt_config, opt_state, extra=extra)

    save("init.sclb", {"epoch": 0})
    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("")
    timing_path = out / "timing.jsonl"
    timing_path.write_text("")

    best_val = -1.0
    records = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        train_loss, train_acc, lr = train_epoch(
            network, prep.train, opt_config, opt_state, epoch, cfg.batch_size, cfg.seed, augment)
        val_acc = evaluate(network, prep.val, cfg.eval_batch_size)[0] if prep.val else None
        test_acc = evaluate(network, prep.test, cfg.eval_batch_size)[0]
        report = nnz_report(network)
        record = dict(zip(METRIC_KEYS, (
            epoch, train_loss, train_acc, val_acc, test_acc, lr,
            {r.name: r.nonzero for r in report.per_layer})))
        records.append(record)
        with open(metrics_path, "a") as fh:
            fh.write(json.dumps(record) + "\n")
        save("last.sclb", {"epoch": epoch, "test_acc": test_acc})
        score = val_acc if val_acc is not None else test_acc
        if score > best_val:
            best_val = score
            save("best.sclb", {"epoch": epoch, "val_acc": val_acc, "test_acc": test_acc})
        wall = time.perf_counter() - t0
        with open(timing_path, "a") as fh:
            fh.write(json.dumps({"epoch": epoch, "wall_seconds": wall}) + "\n")
        log.info("epoch %d loss %.4f train %.4f val %s test %.4f lr %.4g (%.1fs)",
                 epoch, train_loss, train_acc, val_acc, test_acc, lr, wall)
    if cfg.epochs > 0:
        save("final.sclb", {"epoch": cfg.epochs, "test_acc": records[-1]["test_acc"]})
    return {"spec": prep.spec, "network": network, "records": records, "out_dir": out,
            "param_count": param_count(prep.spec)}


def read_metrics(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    size: int
    params: int
    epochs_to_target: int | None

    def cells(self):
        return [self.size, self.params,
                "FAIL" if self.epochs_to_target is None else self.epochs_to_target]


def sweep(cfg: RunConfig, sizes, target_train_acc, budget, loaded=None):
    """Epochs each model size needs to reach ``target_train_acc``.

    Training accuracy is measured in eval mode over the training split,
    before training (epoch 0) and after each epoch, up to ``budget`` epochs.
    """
    prep0 = prepare_data(cfg, loaded)
    rows = []
    for size in sizes:
        if Family(cfg.arch) is Family.THREE_FC:
            run_cfg = dataclasses.replace(cfg, hidden=size)
        else:
            run_cfg = dataclasses.replace(cfg, alpha=size)
        spec = arch_spec(run_cfg, prep0.train)
        network = build(spec, seed=cfg.seed)
        spe = steps_per_epoch(len(prep0.train), cfg.batch_size)
        opt_config = optimizer_config(run_cfg, budget * spe)
        opt_state = optim.OptimizerState()
        augment = data_io.AugmentConfig(cfg.crop_pad, cfg.hflip, cfg.augment)
        reached = None
        for epoch in range(0, budget + 1):
            if epoch > 0:
                train_epoch(network, prep0.train, opt_config, opt_state, epoch,
                            cfg.batch_size, cfg.seed, augment)
            acc, _ = evaluate(network, prep0.train, cfg.eval_batch_size)
            if acc >= target_train_acc:
                reached = epoch
                break
        rows.append(SweepRow(size, param_count(spec), reached))
        log.info("size %d: %s", size, rows[-1].cells()[2])
    return rows
