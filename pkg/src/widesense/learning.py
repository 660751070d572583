"""Losses, optimizer, architecture builders, training loops and inference."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, DataError, LabelError, ShapeError
from .neuralcore import (
    Conv1xW,
    CustomPool,
    Dense,
    InceptionBlock,
    Network,
    Offset,
    Param,
    ReLU,
    Sigmoid,
)

BCE_CLAMP = 1e-7
NUM_CLASSES = 8  # vacant + 7 schemes


class Arch(enum.IntEnum):
    DLWSS = 1
    NDLMC_BASELINE = 2
    NDLMC_INCEPTION = 3
    WDLMC = 4

    @classmethod
    def parse(cls, value) -> "Arch":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("-", "_")
        aliases = {"BASELINE": "NDLMC_BASELINE", "INCEPTION": "NDLMC_INCEPTION", "NDLMC": "NDLMC_BASELINE"}
        key = aliases.get(key, key)
        try:
            return cls[key]
        except KeyError:
            raise ConfigError(f"unknown architecture {value!r}") from None


# full-size filter counts; "desk" presets keep widths/padding and shrink channels
_FULL_FILTERS = {
    Arch.DLWSS: (256, 128, 64),
    Arch.WDLMC: (256, 128, 64),
    Arch.NDLMC_BASELINE: (64, 64),
    Arch.NDLMC_INCEPTION: (64, 48, 64, 16, 32, 32),
}
_DESK_FILTERS = {
    Arch.DLWSS: (32, 16, 8),
    Arch.WDLMC: (32, 16, 8),
    Arch.NDLMC_BASELINE: (64, 64),
    Arch.NDLMC_INCEPTION: (16, 12, 16, 4, 8, 8),
}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture choice plus its size knobs.

    ``filters`` means (conv1, conv2, conv3) for DLWSS/WDLMC, (conv1, conv2)
    for the baseline, and the inception branch split
    (1x1, 3-reduce, 3, 5-reduce, 5, pool-proj) for the inception model.
    """

    arch: Arch = Arch.DLWSS
    input_len: int = 299
    bands: int = 14
    in_channels: int = 2
    n_classes: int = NUM_CLASSES
    filters: Optional[tuple] = None
    widths: tuple = (150, 100, 51)
    tap_width: int = 3
    input_offset: float = 0.5  # subtracted before the first conv; 0 disables

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch.parse(self.arch))
        if self.filters is None:
            object.__setattr__(self, "filters", _FULL_FILTERS[self.arch])
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        need = {Arch.DLWSS: 3, Arch.WDLMC: 3, Arch.NDLMC_BASELINE: 2, Arch.NDLMC_INCEPTION: 6}[self.arch]
        if len(self.filters) != need or min(self.filters) < 1:
            raise ConfigError(f"{self.arch.name} needs {need} positive filter counts, got {self.filters}")
        if self.arch in (Arch.DLWSS, Arch.WDLMC):
            if len(self.widths) != 3:
                raise ConfigError("widths must list three conv widths")
            if self.input_len - sum(self.widths) + len(self.widths) < 1:
                raise ConfigError(f"input length {self.input_len} too short for widths {self.widths}")
        if self.input_len < 1 or self.in_channels < 1 or self.n_classes < 2:
            raise ConfigError("input_len, in_channels must be >= 1 and n_classes >= 2")

    @classmethod
    def preset(cls, arch, size: str = "full", **kw) -> "ModelSpec":
        arch = Arch.parse(arch)
        if size not in ("full", "desk"):
            raise ConfigError(f"size must be 'full' or 'desk', got {size!r}")
        filters = (_FULL_FILTERS if size == "full" else _DESK_FILTERS)[arch]
        if "input_len" not in kw:
            kw["input_len"] = 256 if arch in (Arch.NDLMC_BASELINE, Arch.NDLMC_INCEPTION) else 299
        return cls(arch=arch, filters=filters, **kw)

    @property
    def is_classifier(self) -> bool:
        return self.arch != Arch.DLWSS


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Network:
    """Construct the layer stack for ``spec`` with seeded Glorot-uniform weights."""
    rng = np.random.default_rng(seed)
    f, c_in, m1 = spec.filters, spec.in_channels, spec.n_classes
    pre = [Offset(spec.input_offset)] if spec.input_offset else []
    stages: list = []
    layers: list = []

    def add(name, *ls):
        stages.append(name)
        for layer in ls:
            layers.append((layer, len(stages) - 1))

    if spec.arch in (Arch.DLWSS, Arch.WDLMC):
        w = spec.widths
        add("Conv/relu", *pre, Conv1xW(w[0], c_in, f[0], rng=rng, dtype=dtype), ReLU())
        add("Conv/relu", Conv1xW(w[1], f[0], f[1], rng=rng, dtype=dtype), ReLU())
        add("Conv/relu", Conv1xW(w[2], f[1], f[2], rng=rng, dtype=dtype), ReLU())
        if spec.arch == Arch.DLWSS:
            add("Custom pool", CustomPool(keepdims=True))
            add("FC/sigmoid", Dense(f[2], 1, rng=rng, dtype=dtype), Sigmoid())
        else:
            add("Conv/relu 1x1", Conv1xW(1, f[2], m1, rng=rng, dtype=dtype), ReLU())
            add("Custom pool/softmax", CustomPool())
    elif spec.arch == Arch.NDLMC_BASELINE:
        t = spec.tap_width
        add("Conv/relu", *pre, Conv1xW(t, c_in, f[0], "same", rng=rng, dtype=dtype), ReLU())
        add("Conv/relu", Conv1xW(t, f[0], f[1], "same", rng=rng, dtype=dtype), ReLU())
        add("Conv 1x1", Conv1xW(1, f[1], m1, rng=rng, dtype=dtype))
        add("Custom pool/softmax", CustomPool())
    else:
        c1, c3r, c3, c5r, c5, cp = f
        total = c1 + c3 + c5 + cp
        add("Inception block", *pre, InceptionBlock(c_in, c1, c3r, c3, c5r, c5, cp, total, rng=rng, dtype=dtype))
        add("Inception block", InceptionBlock(total, c1, c3r, c3, c5r, c5, cp, total, rng=rng, dtype=dtype))
        add("Conv/relu 1x1", Conv1xW(1, total, m1, rng=rng, dtype=dtype), ReLU())
        add("Custom pool/softmax", CustomPool())
    return Network(
        [l for l, _ in layers],
        [s for _, s in layers],
        stages,
        arch_id=int(spec.arch),
        squeeze_output=spec.arch == Arch.DLWSS,
    )


# losses ---------------------------------------------------------------------


def bce_loss(pred: np.ndarray, label: np.ndarray) -> tuple:
    """Binary cross-entropy summed over bands, averaged over leading (frame) axes.

    Predictions are clamped to ``[1e-7, 1 - 1e-7]``; the returned gradient
    is that of the clamped loss (zero where the clamp is active).
    """
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise ShapeError(f"prediction shape {pred.shape} != label shape {label.shape}")
    frames = max(1, int(np.prod(pred.shape[:-1]))) if pred.ndim > 1 else 1
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -np.sum(label * np.log(p) + (1.0 - label) * np.log1p(-p)) / frames
    grad = (-label / p + (1.0 - label) / (1.0 - p)) / frames
    grad[(pred < BCE_CLAMP) | (pred > 1.0 - BCE_CLAMP)] = 0.0
    return float(loss), grad


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def check_labels(k: np.ndarray, n_classes: int = NUM_CLASSES) -> np.ndarray:
    k = np.asarray(k)
    if k.size and (not np.issubdtype(k.dtype, np.integer) or k.min() < 0 or k.max() >= n_classes):
        raise LabelError(f"class labels must be integers in [0, {n_classes - 1}]")
    return k.astype(np.int64)


def ce_rows(logits: np.ndarray, k: np.ndarray, frames: int = 1) -> tuple:
    """Sum of categorical cross-entropies over rows of ``logits``, divided by ``frames``."""
    z = np.asarray(logits, dtype=np.float64)
    k = check_labels(k, z.shape[-1])
    if z.shape[:-1] != k.shape:
        raise ShapeError(f"logits {z.shape} and labels {k.shape} disagree")
    logp = _log_softmax(z)
    picked = np.take_along_axis(logp, k[..., None], axis=-1)[..., 0]
    grad = np.exp(logp)
    np.put_along_axis(grad, k[..., None], np.take_along_axis(grad, k[..., None], axis=-1) - 1.0, axis=-1)
    return float(-picked.sum() / frames), grad / frames


def masked_ce_loss(logits: np.ndarray, k: np.ndarray, mask: np.ndarray) -> tuple:
    """Masked categorical cross-entropy over bands.

    ``logits`` is ``(..., N, C)``; the loss sums the per-band cross-entropy
    over bands with ``mask == 1`` and averages over leading frame axes.
    Masked-out bands contribute exactly zero loss and zero gradient.
    """
    z = np.asarray(logits, dtype=np.float64)
    k = check_labels(k, z.shape[-1])
    mask = np.asarray(mask).astype(bool)
    if z.shape[:-1] != k.shape or k.shape != mask.shape:
        raise ShapeError(f"logits {z.shape}, labels {k.shape}, mask {mask.shape} disagree")
    frames = max(1, int(np.prod(z.shape[:-2]))) if z.ndim > 2 else 1
    grad = np.zeros_like(z)
    if not mask.any():
        return 0.0, grad
    loss, g = ce_rows(z[mask], k[mask], frames)
    grad[mask] = g
    return loss, grad


# optimizer ------------------------------------------------------------------


@dataclass(frozen=True)
class TrainCfg:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    patience: int = 5
    seed: int = 0
    optimizer: str = "adam"
    val_fraction: float = 0.1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be > 0")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("batch_size and patience must be >= 1, max_epochs >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")

    def replace(self, **changes) -> "TrainCfg":
        return replace(self, **changes)


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def adam_step(params: Sequence[Param], state: AdamState, cfg: TrainCfg) -> AdamState:
    """One in-place update of ``params`` from their ``.grad`` (Adam or plain SGD)."""
    if cfg.optimizer == "sgd":
        for p in params:
            p.data -= (cfg.learning_rate * p.grad).astype(p.data.dtype)
        state.t += 1
        return state
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.data.dtype)
    return state


# training -------------------------------------------------------------------

HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "train_acc", "val_acc")


@dataclass
class TrainResult:
    model: Network
    history: list  # dicts keyed by HISTORY_FIELDS
    best_epoch: int

    def write_history(self, path: Union[str, Path]) -> None:
        write_history(self.history, path)


def write_history(history: Sequence[dict], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])


def _split(n: int, frac: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_val = int(round(n * frac))
    if frac > 0 and n > 1:
        n_val = min(max(n_val, 1), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


class _Task:
    """Per-objective batch logic shared by the training loop."""

    def __init__(self, net: Network, x, labels, mask=None):
        self.net, self.x, self.labels, self.mask = net, x, labels, mask

    def step(self, idx, train: bool):
        raise NotImplementedError


class _SensingTask(_Task):
    def step(self, idx, train):
        xb = self.x[idx]
        s = self.labels[idx]
        pred = self.net.forward(xb)
        loss, g = bce_loss(pred, s)
        if train:
            self.net.backward(g)
        correct = int(np.sum((pred >= 0.5) == (s > 0)))
        return loss * len(idx), correct, s.size


class _ClassifierTask(_Task):
    def step(self, idx, train):
        m = self.mask[idx].astype(bool)
        if not m.any():
            if train:
                for p in self.net.params():
                    p.grad = np.zeros_like(p.data)
            return 0.0, 0, 0
        rows = self.x[idx][m]  # only busy bands: every layer is band-wise
        k = self.labels[idx][m]
        logits = self.net.forward_rows(rows)
        loss, g = ce_rows(logits, k, frames=len(idx))
        if train:
            self.net.backward_rows(g)
        correct = int(np.sum(np.argmax(logits, axis=-1) == k))
        return loss * len(idx), correct, len(k)


def _evaluate(task: _Task, idx, batch: int):
    tot_loss = correct = count = 0
    for b0 in range(0, len(idx), batch):
        l, c, n = task.step(idx[b0 : b0 + batch], train=False)
        tot_loss += l
        correct += c
        count += n
    return tot_loss / max(1, len(idx)), (correct / count if count else float("nan"))


def _fit(net: Network, task: _Task, train_idx, val_idx, cfg: TrainCfg, rng, history_path, log):
    state = AdamState()
    params = net.params()
    history = []
    best = (math.inf, 0, [p.data.copy() for p in params])
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = train_idx[rng.permutation(len(train_idx))]
        tot_loss = correct = count = 0
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0 : b0 + cfg.batch_size]
            l, c, n = task.step(idx, train=True)
            adam_step(params, state, cfg)
            tot_loss += l
            correct += c
            count += n
        row = {
            "epoch": epoch,
            "train_loss": tot_loss / max(1, len(order)),
            "train_acc": correct / count if count else float("nan"),
        }
        if len(val_idx):
            row["val_loss"], row["val_acc"] = _evaluate(task, val_idx, cfg.batch_size)
        else:
            row["val_loss"], row["val_acc"] = row["train_loss"], row["train_acc"]
        history.append(row)
        if log:
            log(row)
        if row["val_loss"] < best[0]:
            best = (row["val_loss"], epoch, [p.data.copy() for p in params])
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if history:
        for p, data in zip(params, best[2]):
            p.data = data
    if history_path is not None:
        write_history(history, history_path)
    return TrainResult(model=net, history=history, best_epoch=best[1])


def _prepare(dataset, val, cfg, rng):
    n = len(dataset.x)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    if val is None:
        train_idx, val_idx = _split(n, cfg.val_fraction, rng)
        return dataset, train_idx, val_idx
    # concatenate so one index space covers both parts
    merged = _Stacked(dataset, val)
    return merged, np.arange(n), np.arange(n, n + len(val.x))


class _Stacked:
    def __init__(self, a, b):
        self.x = np.concatenate([a.x, b.x])
        self.s = np.concatenate([a.s, b.s])
        self.k = np.concatenate([a.k, b.k])


def _check_input(dataset, spec: ModelSpec):
    x = dataset.x
    if x.ndim != 4 or x.shape[2] != spec.input_len or x.shape[3] != spec.in_channels:
        raise ShapeError(
            f"dataset inputs {x.shape} do not match model input (*, {spec.input_len}, {spec.in_channels})"
        )


def train_dlwss(dataset, spec: ModelSpec, cfg: TrainCfg, val=None, history_path=None,
                model: Optional[Network] = None, log=None) -> TrainResult:
    """Mini-batch BCE training of the occupancy network with early stopping.

    ``dataset``/``val`` expose ``x`` (frames, N, Q, 2) and ``s`` (frames, N).
    Without ``val``, ``cfg.val_fraction`` of the frames is held out.
    The best-validation weights are restored at the end.
    """
    if spec.arch != Arch.DLWSS:
        raise ConfigError("train_dlwss needs a DLWSS model spec")
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(seeds[1])
    data, tr, va = _prepare(dataset, val, cfg, rng)
    _check_input(data, spec)
    net = model or build_model(spec, seed=int(seeds[0].generate_state(1)[0]))
    task = _SensingTask(net, data.x, data.s.astype(np.float64))
    return _fit(net, task, tr, va, cfg, rng, history_path, log)


MASK_SOURCES = ("ground-truth", "predicted")


def train_dlmc(dataset, spec: ModelSpec, cfg: TrainCfg, mask_source: str = "ground-truth",
               predicted_mask: Optional[np.ndarray] = None, val=None, val_mask=None,
               history_path=None, model: Optional[Network] = None, log=None) -> TrainResult:
    """Masked cross-entropy training of a modulation classifier (NDLMC or WDLMC).

    With ``mask_source="predicted"`` the loss mask is ``predicted_mask``
    (e.g. DLWSS output) instead of the true occupancy; labels stay the true
    ``k``, so falsely detected bands teach the vacant class.
    """
    if not spec.is_classifier:
        raise ConfigError("train_dlmc needs a classifier model spec")
    if mask_source not in MASK_SOURCES:
        raise ConfigError(f"mask_source must be one of {MASK_SOURCES}")
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(seeds[1])
    data, tr, va = _prepare(dataset, val, cfg, rng)
    _check_input(data, spec)
    check_labels(data.k, spec.n_classes)
    if mask_source == "predicted":
        if predicted_mask is None:
            raise ConfigError("mask_source='predicted' requires predicted_mask")
        mask = np.asarray(predicted_mask)
        if val is not None:
            if val_mask is None:
                raise ConfigError("val_mask is required with a separate validation set")
            mask = np.concatenate([mask, np.asarray(val_mask)])
        if mask.shape != data.k.shape:
            raise ShapeError(f"predicted mask {mask.shape} does not match labels {data.k.shape}")
    else:
        mask = data.s
    net = model or build_model(spec, seed=int(seeds[0].generate_state(1)[0]))
    task = _ClassifierTask(net, data.x, data.k, mask)
    return _fit(net, task, tr, va, cfg, rng, history_path, log)


# inference ------------------------------------------------------------------


def _frames(x: np.ndarray):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"expected (N, L, C) or (frames, N, L, C), got {x.shape}")
    return x, False


def predict_occupancy_prob(net: Network, x: np.ndarray, batch: int = 64) -> np.ndarray:
    xf, single = _frames(x)
    out = np.concatenate([net.forward(xf[i : i + batch]) for i in range(0, len(xf), batch)]) if len(xf) else np.zeros(xf.shape[:2])
    if out.shape != xf.shape[:2]:
        raise ShapeError(f"occupancy model produced {out.shape}, expected {xf.shape[:2]}")
    return out[0] if single else out


def infer_occupancy(net: Network, x: np.ndarray, threshold: float = 0.5, batch: int = 64) -> np.ndarray:
    """Binary occupancy ``(N,)`` or ``(frames, N)``: sigmoid output >= threshold."""
    return (predict_occupancy_prob(net, x, batch) >= threshold).astype(np.uint8)


def classifier_logits(net: Network, x: np.ndarray, batch_rows: int = 512) -> np.ndarray:
    xf, single = _frames(x)
    f, n = xf.shape[:2]
    rows = xf.reshape(f * n, *xf.shape[2:])
    out = np.concatenate([net.forward_rows(rows[i : i + batch_rows]) for i in range(0, len(rows), batch_rows)])
    out = out.reshape(f, n, -1)
    return out[0] if single else out


def infer_modulation(net: Network, x: np.ndarray, occupancy: np.ndarray, batch_rows: int = 512) -> np.ndarray:
    """Per-band class: argmax of the logits on busy bands (lowest index on ties), 0 on vacant bands."""
    xf, single = _frames(x)
    occ = np.asarray(occupancy).astype(bool)
    occ = occ[None] if occ.ndim == 1 else occ
    if occ.shape != xf.shape[:2]:
        raise ShapeError(f"occupancy {occ.shape} does not match inputs {xf.shape[:2]}")
    k = np.zeros(occ.shape, dtype=np.uint8)
    rows = xf[occ]
    if len(rows):
        logits = np.concatenate(
            [net.forward_rows(rows[i : i + batch_rows]) for i in range(0, len(rows), batch_rows)]
        )
        k[occ] = np.argmax(logits, axis=-1)
    return k[0] if single else k
