"""Desk-scale supervised training: AdamW, warmup+cosine schedule, smoothed
cross-entropy, and a seeded synthetic dataset.

The synthetic task places one bright Gaussian blob in a random quadrant of
a small image; the label is the quadrant.  Solving it requires the token
mixer to move spatial information into channels before mean pooling, which
is exactly what these models are supposed to do.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import hpxio
from . import numerics as nx
from .model import Model
from .numerics import GradTape, Tensor


@dataclass
class TrainConfig:
    lr_peak: float = 1e-3
    lr_final: float = 1e-5
    warmup_epochs: int = 2
    total_epochs: int = 20
    weight_decay: float = 0.05
    batch_size: int = 32
    label_smoothing: float = 0.1
    seed: int = 0
    hflip: bool = False

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label smoothing must lie in [0, 1)")
        if not self.warmup_epochs < self.total_epochs:
            raise ValueError("warmup must be shorter than the run")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DatasetSpec:
    source: str = "synthetic"
    image_size: int = 32
    num_classes: int = 4
    train_size: int = 512
    val_size: int = 128
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "directory"):
            raise ValueError("source must be 'synthetic' or 'directory'")
        if self.source == "directory" and not self.path:
            raise ValueError("directory source requires a path")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Schedule and loss
# ---------------------------------------------------------------------------


def cosine_warmup_lr(step: int, config: TrainConfig, steps_per_epoch: int = 1) -> float:
    """Linear ramp 0 -> lr_peak over the warmup, then cosine to lr_final.

    ``step`` counts optimizer steps; the last step of the run lands exactly
    on lr_final and the warmup end exactly on lr_peak.
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    warmup = config.warmup_epochs * steps_per_epoch
    last = max(config.total_epochs * steps_per_epoch - 1, 1)
    if warmup > 0 and step < warmup:
        return config.lr_peak * step / warmup
    if step >= last:
        return config.lr_final
    span = max(last - warmup, 1)
    phase = math.pi * (step - warmup) / span
    return config.lr_final + 0.5 * (config.lr_peak - config.lr_final) * (1.0 + math.cos(phase))


def cross_entropy_smoothed(logits: Tensor, labels: np.ndarray, smoothing: float) -> Tensor:
    """Mean batch cross-entropy against (1-eps)*onehot + eps/num_classes."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError("labels must be a vector matching the batch")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")
    if not np.all(np.isfinite(logits.data)):
        raise ValueError("non-finite logits")
    targets = np.full((n, k), smoothing / k)
    targets[np.arange(n), labels] += 1.0 - smoothing
    shift = logits.data.max(axis=-1, keepdims=True)  # detached stabilizer
    z = nx.sub(logits, shift)
    log_probs = nx.sub(z, nx.log(nx.tensor_sum(nx.exp(z), axis=-1, keepdims=True)))
    per_example = nx.neg(nx.tensor_sum(nx.mul(log_probs, Tensor(targets)), axis=-1))
    return nx.mean(per_example)


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


def init_adamw_state(params: list[Tensor]) -> dict:
    return {
        "step": 0,
        "m": [np.zeros_like(p.data) for p in params],
        "v": [np.zeros_like(p.data) for p in params],
    }


def adamw_step(
    params: list[Tensor],
    grads: list[np.ndarray],
    state: dict,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> dict:
    """One decoupled-weight-decay Adam update with bias correction.

    Decay multiplies parameters by (1 - lr*wd) before the moment update, so
    with wd = 0 the trajectory is exactly plain Adam.
    """
    beta1, beta2 = betas
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
        if weight_decay != 0.0:
            p.data *= 1.0 - lr * weight_decay
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= lr * update
    return state


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def synthetic_quadrant_dataset(spec: DatasetSpec):
    """Seeded blob-in-quadrant images; class-balanced, train/val disjoint.

    Returns (train_x, train_y, val_x, val_y) with images [N, S, S, 3].
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size
    half = size // 2
    total = spec.train_size + spec.val_size
    coords = np.arange(size, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    images = np.empty((total, size, size, 3))
    labels = np.empty(total, dtype=np.int64)
    margin = max(2, size // 10)
    for i in range(total):
        label = i % spec.num_classes
        qy, qx = divmod(label, 2)
        cy = rng.uniform(margin, half - margin) + qy * half
        cx = rng.uniform(margin, half - margin) + qx * half
        sigma = rng.uniform(1.5, 2.5)
        amp = rng.uniform(2.0, 3.0)
        blob = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
        tint = 1.0 + rng.uniform(-0.2, 0.2, size=3)
        img = rng.normal(0.0, 0.05, size=(size, size, 3)) + blob[:, :, None] * tint
        images[i] = img
        labels[i] = label
    return (
        images[: spec.train_size],
        labels[: spec.train_size],
        images[spec.train_size :],
        labels[spec.train_size :],
    )


def directory_dataset(spec: DatasetSpec):
    """Load HPX1 images from <path>/{train,val}/<class>/*.hpx1."""
    root = Path(spec.path)
    splits = []
    for split in ("train", "val"):
        base = root / split
        classes = sorted(p.name for p in base.iterdir() if p.is_dir())
        if not classes:
            raise ValueError(f"no class directories under {base}")
        xs, ys = [], []
        for ci, cname in enumerate(classes):
            for f in sorted((base / cname).glob("*.hpx1")):
                xs.append(hpxio.read_hpx1(f))
                ys.append(ci)
        splits.append((np.stack(xs), np.asarray(ys, dtype=np.int64)))
    (tx, ty), (vx, vy) = splits
    return tx, ty, vx, vy


def load_dataset(spec: DatasetSpec):
    if spec.source == "synthetic":
        return synthetic_quadrant_dataset(spec)
    return directory_dataset(spec)


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------


def evaluate_accuracy(model: Model, images: np.ndarray, labels: np.ndarray, batch_size: int = 64) -> float:
    hits = 0
    for start in range(0, len(images), batch_size):
        xb = Tensor(images[start : start + batch_size])
        logits = model(xb).data
        hits += int((logits.argmax(axis=-1) == labels[start : start + batch_size]).sum())
    return hits / len(images)


def train(model: Model, dataset: DatasetSpec, config: TrainConfig, out_dir=None):
    """Train in place; returns the per-epoch history list.

    Deterministic given seeds: fixed batch order per epoch from the config
    seed, seeded data generation, and a serial reduction order.  When
    ``out_dir`` is given, writes history.csv plus a checkpoint directory.
    """
    train_x, train_y, val_x, val_y = load_dataset(dataset)
    if train_x.shape[1] != model.config.input_size[0]:
        raise ValueError(
            f"dataset images are {train_x.shape[1]}px, model expects "
            f"{model.config.input_size[0]}px"
        )
    if dataset.num_classes != model.config.num_classes:
        raise ValueError("dataset/model class-count mismatch")
    params = model.parameter_tensors()
    state = init_adamw_state(params)
    order_rng = np.random.default_rng(config.seed)
    steps_per_epoch = max(len(train_x) // config.batch_size, 1)
    history = []
    step = 0
    for epoch in range(config.total_epochs):
        perm = order_rng.permutation(len(train_x))
        losses = []
        lr = 0.0
        for b in range(steps_per_epoch):
            idx = perm[b * config.batch_size : (b + 1) * config.batch_size]
            xb = train_x[idx]
            if config.hflip:
                flip = order_rng.random(len(idx)) < 0.5
                xb = xb.copy()
                xb[flip] = xb[flip, :, ::-1]
            lr = cosine_warmup_lr(step, config, steps_per_epoch)
            with GradTape() as tape:
                logits = model(Tensor(xb))
                loss = cross_entropy_smoothed(logits, train_y[idx], config.label_smoothing)
            grads = tape.gradient(loss, params)
            adamw_step(params, grads, state, lr, weight_decay=config.weight_decay)
            model.apply_constraints()
            losses.append(float(loss.data))
            step += 1
        val_acc = evaluate_accuracy(model, val_x, val_y, config.batch_size)
        history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_loss": float(np.mean(losses)),
                "val_acc": val_acc,
            }
        )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_history_csv(out / "history.csv", history)
        hpxio.save_checkpoint(out / "checkpoint", model.config.to_dict(), model.parameters())
    return history


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "val_acc"])
        for row in history:
            writer.writerow([row["epoch"], row["lr"], row["train_loss"], row["val_acc"]])
