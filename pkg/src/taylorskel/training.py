"""Momentum-SGD training with step or milestone learning-rate schedules."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import models
from . import numerics as nx
from .skeleton_data import PreprocessConfig, preprocess, split_dataset, stack_sequences
from .taylor import TaylorConfig, taylor_transform

log = logging.getLogger(__name__)

INPUT_KINDS = ("original", "taylor")


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepSchedule:
    every: int = 10
    factor: float = 0.1

    def __post_init__(self):
        if self.every < 1:
            raise ValueError("step schedule needs every >= 1")
        if not 0 < self.factor < 1:
            raise ValueError("decay factor must lie strictly between 0 and 1")

    def multiplier(self, epoch):
        return self.factor ** (epoch // self.every)

    def to_dict(self):
        return {"kind": "step", "every": self.every, "factor": self.factor}


@dataclass(frozen=True)
class MilestoneSchedule:
    milestones: tuple = (110, 120)
    factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(self.milestones))
        if not 0 < self.factor < 1:
            raise ValueError("decay factor must lie strictly between 0 and 1")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be strictly increasing")

    def multiplier(self, epoch):
        return self.factor ** sum(1 for m in self.milestones if epoch >= m)

    def to_dict(self):
        return {"kind": "milestone", "milestones": list(self.milestones), "factor": self.factor}


def schedule_from_dict(doc):
    doc = dict(doc)
    kind = doc.pop("kind", "step")
    if kind == "step":
        return StepSchedule(**doc)
    if kind == "milestone":
        return MilestoneSchedule(**doc)
    raise ValueError(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.01
    schedule: object = field(default_factory=StepSchedule)
    total_epochs: int = 80
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    drop_last: bool = False
    stop_at_accuracy: float = None  # stop once an epoch's train top-1 reaches this

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            object.__setattr__(self, "schedule", schedule_from_dict(self.schedule))
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.total_epochs < 0 or self.batch_size < 1:
            raise ValueError("total_epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if isinstance(self.schedule, MilestoneSchedule) and self.schedule.milestones:
            if self.schedule.milestones[-1] >= self.total_epochs:
                raise ValueError("milestones must be below total_epochs")

    def to_dict(self):
        return {
            "base_lr": self.base_lr,
            "schedule": self.schedule.to_dict(),
            "total_epochs": self.total_epochs,
            "batch_size": self.batch_size,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "drop_last": self.drop_last,
            "stop_at_accuracy": self.stop_at_accuracy,
        }


def stgcn_train_config(total_epochs=80, **kw):
    """0.01, x0.1 every 10 epochs, batch 32."""
    return TrainConfig(base_lr=0.01, schedule=StepSchedule(10, 0.1), total_epochs=total_epochs,
                       batch_size=kw.pop("batch_size", 32), **kw)


def hyperformer_train_config(**kw):
    """0.025, x0.1 at epochs 110 and 120, 140 epochs, batch 128."""
    return TrainConfig(base_lr=0.025, schedule=MilestoneSchedule((110, 120), 0.1),
                       total_epochs=kw.pop("total_epochs", 140), batch_size=kw.pop("batch_size", 128), **kw)


def lr_at(cfg, epoch):
    if not 0 <= epoch < cfg.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    return cfg.base_lr * cfg.schedule.multiplier(epoch)


class SGD:
    """``v <- mu * v + g;  p <- p - lr * v`` (weight decay folded into g)."""

    def __init__(self, params, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        nx.zero_grad(self.params)

    def step(self, lr):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            v *= self.momentum
            v += g
            p.data -= lr * v


# ------------------------------------------------------------------ data preparation


def prepare_sequences(seqs, input_kind="original", taylor_cfg=None, preprocess_cfg=None):
    """Optional Taylor transform, then preprocessing (resize); returns (N,C,T,V,M), labels."""
    if input_kind not in INPUT_KINDS:
        raise ValueError(f"input kind must be one of {INPUT_KINDS}")
    taylor_cfg = taylor_cfg or TaylorConfig()
    preprocess_cfg = preprocess_cfg or PreprocessConfig()
    out = []
    for s in seqs:
        if input_kind == "taylor":
            s = taylor_transform(s, taylor_cfg)
        out.append(preprocess(s, preprocess_cfg))
    return stack_sequences(out)


def input_channels(input_kind, taylor_cfg=None, base=3):
    taylor_cfg = taylor_cfg or TaylorConfig()
    return 2 * base if input_kind == "taylor" and taylor_cfg.mode == "concat" else base


# ------------------------------------------------------------------ loops


@dataclass
class TrainResult:
    params: models.ParameterSet
    history: list  # dicts: epoch, lr, loss, top1


def fit(kind, x, y, train_cfg, model_cfg, topology=None, params=None):
    """Train on arrays ``x`` (N, C, T, V, M) and integer labels ``y``."""
    topology = topology or models.default_topology(kind)
    params = params if params is not None else models.init_model(kind, model_cfg, train_cfg.seed)
    n = len(y)
    if n == 0:
        raise ValueError("training set is empty")
    if train_cfg.drop_last and train_cfg.batch_size > n:
        raise ValueError("batch_size exceeds the training set with drop_last enabled")
    rng = np.random.default_rng(train_cfg.seed)
    opt = SGD(params.values(), train_cfg.momentum, train_cfg.weight_decay)
    history = []
    for epoch in range(train_cfg.total_epochs):
        lr = lr_at(train_cfg, epoch)
        order = rng.permutation(n)
        bs = train_cfg.batch_size
        stop = n - n % bs if train_cfg.drop_last else n
        total_loss, correct, seen = 0.0, 0, 0
        for b, start in enumerate(range(0, stop, bs)):
            idx = order[start:start + bs]
            opt.zero_grad()
            logits = models.forward(kind, x[idx], topology, model_cfg, params, training=True, rng=rng)
            loss = nx.cross_entropy(logits, y[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
            nx.backward(loss)
            opt.step(lr)
            if not all(np.isfinite(p.data).all() for p in opt.params):
                raise DivergenceError(f"non-finite parameters after epoch {epoch}, batch {b}")
            total_loss += value * len(idx)
            correct += int((logits.data.argmax(axis=1) == y[idx]).sum())
            seen += len(idx)
        row = {"epoch": epoch, "lr": lr, "loss": total_loss / seen, "top1": 100.0 * correct / seen}
        history.append(row)
        log.info("epoch %d lr %.6g loss %.4f top1 %.2f", epoch, lr, row["loss"], row["top1"])
        if train_cfg.stop_at_accuracy is not None and row["top1"] >= train_cfg.stop_at_accuracy:
            break
    return TrainResult(params, history)


def train(kind, data, train_cfg, model_cfg, input_kind="original", taylor_cfg=None,
          preprocess_cfg=None, topology=None):
    """Train on the train split of a manifest."""
    train_seqs, _ = split_dataset(data)
    x, y = prepare_sequences(train_seqs, input_kind, taylor_cfg, preprocess_cfg)
    return fit(kind, x, y, train_cfg, model_cfg, topology)


def predict(kind, params, x, model_cfg, topology=None, batch_size=64):
    """Eval-mode logits, batched, no graph recording."""
    topology = topology or models.default_topology(kind)
    out = []
    with nx.no_grad():
        for start in range(0, len(x), batch_size):
            logits = models.forward(kind, x[start:start + batch_size], topology, model_cfg, params)
            out.append(logits.data)
    return np.concatenate(out) if out else np.zeros((0, model_cfg.num_classes))


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "lr", "loss", "top1"])
        w.writeheader()
        for row in history:
            w.writerow(row)
