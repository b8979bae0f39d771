"""Training: label-smoothed cross-entropy, L2, Adam, LR-on-plateau, early stopping."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensorcore as tc
from .errors import TrainingDiverged
from .models import ATTACKNET_V1, ATTACKNET_V2_1, ATTACKNET_V2_2, LIVENESSNET, Network

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-6
    dropout: float = 0.25
    l2: float = 1e-5
    batch_size: int = 8
    max_epochs: int = 20
    early_stop_patience: int = 15
    plateau_factor: float = 0.5
    plateau_patience: int = 7
    min_lr: float = 1e-9
    min_delta: float = 1e-4
    label_smoothing: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-7
    augment: bool = False
    seed: int = 42

    def __post_init__(self):
        if self.lr < 0 or self.l2 < 0 or self.label_smoothing < 0:
            raise ValueError("lr, l2 and label_smoothing must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise ValueError("patience values must be integers >= 1")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.lr > 0 and self.min_lr > self.lr:
            raise ValueError(f"min_lr {self.min_lr} exceeds lr {self.lr}")

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# single-dataset settings: (model, dataset) -> (learning rate, dropout)
TABLE6 = {
    (LIVENESSNET, "Our Dataset"): (1e-6, 0.2), (LIVENESSNET, "Replay-Attack"): (1e-7, 0.2),
    (LIVENESSNET, "CSMAD"): (7e-8, 0.5), (LIVENESSNET, "3DMAD"): (5e-8, 0.5), (LIVENESSNET, "MSSpoof"): (1e-6, 0.15),
    (ATTACKNET_V1, "Our Dataset"): (3e-7, 0.3), (ATTACKNET_V1, "Replay-Attack"): (2e-8, 0.2),
    (ATTACKNET_V1, "CSMAD"): (5e-9, 0.3), (ATTACKNET_V1, "3DMAD"): (5e-9, 0.3), (ATTACKNET_V1, "MSSpoof"): (3e-7, 0.5),
    (ATTACKNET_V2_1, "Our Dataset"): (3e-7, 0.2), (ATTACKNET_V2_1, "Replay-Attack"): (3e-8, 0.2),
    (ATTACKNET_V2_1, "CSMAD"): (7e-9, 0.1), (ATTACKNET_V2_1, "3DMAD"): (8e-9, 0.2), (ATTACKNET_V2_1, "MSSpoof"): (4e-7, 0.4),
    (ATTACKNET_V2_2, "Our Dataset"): (2e-7, 0.2), (ATTACKNET_V2_2, "Replay-Attack"): (4e-8, 0.2),
    (ATTACKNET_V2_2, "CSMAD"): (8e-9, 0.2), (ATTACKNET_V2_2, "3DMAD"): (6e-9, 0.1), (ATTACKNET_V2_2, "MSSpoof"): (2e-8, 0.4),
}

# combined-dataset settings
TABLE10 = {
    LIVENESSNET: TrainConfig(lr=1e-7, dropout=0.01, batch_size=16, min_lr=1e-9),
    ATTACKNET_V1: TrainConfig(lr=1e-5, dropout=0.05, batch_size=16),
    ATTACKNET_V2_1: TrainConfig(lr=1e-6, dropout=0.05, batch_size=16),
    ATTACKNET_V2_2: TrainConfig(lr=1e-6, dropout=0.05, batch_size=16),
}


def table6_config(model: str, dataset: str, **kw) -> TrainConfig:
    lr, dr = TABLE6[(model, dataset)]
    return TrainConfig(lr=lr, dropout=dr, min_lr=min(1e-9, lr), **kw)


def tiny_lr_warning(config: TrainConfig) -> str | None:
    # below ~1e-7 relative updates fall under float32 resolution for unit-scale weights
    if 0 < config.lr < 1e-7:
        return f"learning rate {config.lr:g} barely moves float32 weights; expect little or no convergence"
    return None


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def smoothed_targets(labels: np.ndarray, alpha: float, k: int = 2) -> np.ndarray:
    onehot = np.eye(k)[np.asarray(labels, dtype=np.int64)]
    return (1.0 - alpha) * onehot + alpha / k


def smoothed_cross_entropy(probs, labels: np.ndarray, alpha: float = 0.1) -> tc.Tensor:
    """Mean over the batch of -sum(target * log(prob)), targets label-smoothed."""
    probs = probs if isinstance(probs, tc.Tensor) else tc.Tensor(probs)
    n, k = probs.shape
    target = smoothed_targets(labels, alpha, k).astype(probs.dtype)
    p = probs.data
    clamped = np.maximum(p, LOG_CLAMP)
    loss = -(target * np.log(clamped)).sum() / n

    def backward(g):
        return (np.where(p > LOG_CLAMP, -g * target / (n * clamped), 0.0).astype(p.dtype),)

    return tc._result(np.asarray(loss, dtype=probs.dtype), (probs,), backward)


def l2_penalty(params: dict[str, tc.Tensor], l2: float) -> float:
    if l2 == 0:
        return 0.0
    return float(l2 * sum(float(np.sum(np.square(p.data, dtype=np.float64))) for p in params.values()))


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState, lr: float,
              l2: float = 0.0) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update, in place, in the dict's key order.

    L2 enters as its gradient 2*l2*w, added to the loss gradient (coupled,
    not decoupled, decay).
    """
    if lr < 0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {name!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise tc.ShapeError(f"{name}: gradient shape {g.shape} vs parameter {w.shape}")
        if l2:
            g = g + (2.0 * l2) * w
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        w -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(w.dtype)
    return params


# --------------------------------------------------------------------------
# schedules
# --------------------------------------------------------------------------

def epochs_since_best(history: list[float], min_delta: float = 0.0) -> int:
    """Epochs after the last one that improved on the running best by more than min_delta."""
    best = math.inf
    best_i = -1
    for i, v in enumerate(history):
        if v < best - min_delta:
            best, best_i = v, i
    return len(history) - 1 - best_i if history else 0


def reduce_lr_on_plateau(history: list[float], lr: float, patience: int = 7, factor: float = 0.5,
                         min_lr: float = 1e-9, min_delta: float = 1e-4) -> float:
    """Halve (by ``factor``) once ``patience`` epochs pass without an improvement above min_delta."""
    if history and epochs_since_best(history, min_delta) >= patience:
        return max(lr * factor, min_lr)
    return lr


class PlateauScheduler:
    """Stateful form of reduce_lr_on_plateau: the wait counter restarts after every reduction."""

    def __init__(self, lr: float, patience: int = 7, factor: float = 0.5, min_lr: float = 1e-9, min_delta: float = 1e-4):
        self.lr, self.patience, self.factor, self.min_lr, self.min_delta = lr, patience, factor, min_lr, min_delta
        self.window: list[float] = []
        self.best = math.inf

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.window = [val_loss]
            return self.lr
        self.window.append(val_loss)
        if len(self.window) - 1 >= self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.window = [self.best]
        return self.lr


def early_stop(history: list[float], patience: int) -> bool:
    return bool(history) and epochs_since_best(history) >= patience


# --------------------------------------------------------------------------
# loop
# --------------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float
    wall_time: float
    is_best: bool = False


LOG_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr", "is_best")


def epoch_logs_csv(logs: list[EpochLog], with_time: bool = False) -> str:
    """CSV of epoch logs; wall time is left out unless asked for so reruns stay byte-identical."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = LOG_COLUMNS + (("wall_time",) if with_time else ())
    w.writerow(cols)
    for e in logs:
        row = [e.epoch, repr(e.train_loss), repr(e.train_acc), repr(e.val_loss), repr(e.val_acc), repr(e.lr), int(e.is_best)]
        if with_time:
            row.append(f"{e.wall_time:.3f}")
        w.writerow(row)
    return buf.getvalue()


@dataclass
class TrainResult:
    logs: list[EpochLog]
    best_epoch: int
    best_val_loss: float
    best_val_acc: float
    stopped_early: bool
    train_time: float


def to_input(x: np.ndarray, dtype=tc.TRAIN_DTYPE) -> np.ndarray:
    """uint8 images -> float in [0, 1]."""
    dtype = np.dtype(dtype)
    return x.astype(dtype) / dtype.type(255.0) if x.dtype == np.uint8 else x.astype(dtype)


def evaluate_loss(net: Network, x: np.ndarray, y: np.ndarray, config: TrainConfig, batch_size: int = 64) -> tuple[float, float]:
    """(regularized loss, accuracy) in inference mode."""
    if len(x) == 0:
        return math.nan, math.nan
    total = 0.0
    correct = 0
    for s in range(0, len(x), batch_size):
        xb, yb = to_input(x[s:s + batch_size], net.dtype), y[s:s + batch_size]
        probs = net.forward(xb, training=False)
        total += float(smoothed_cross_entropy(probs, yb, config.label_smoothing).data) * len(xb)
        correct += int(np.sum(probs.data.argmax(axis=1) == yb))
    return total / len(x) + l2_penalty(net.params, config.l2), correct / len(x)


def train_loop(net: Network, train: tuple[np.ndarray, np.ndarray], val: tuple[np.ndarray, np.ndarray],
               config: TrainConfig, augment_fn=None) -> TrainResult:
    """Train ``net`` in place; the weights of the best validation epoch are restored at the end.

    ``augment_fn(batch_uint8, rng) -> batch_uint8`` is applied to training
    batches only, when given.
    """
    x_tr, y_tr = train
    x_va, y_va = val
    if len(x_tr) == 0:
        raise ValueError("empty training split")
    if len(x_va) == 0:
        raise ValueError("empty validation split")
    warn = tiny_lr_warning(config)
    if warn:
        log.warning(warn)
    shuffle_rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng([config.seed, 1])
    aug_rng = np.random.default_rng([config.seed, 2])
    state = OptimizerState(beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    sched = PlateauScheduler(config.lr, config.plateau_patience, config.plateau_factor, config.min_lr, config.min_delta)
    names = list(net.params)
    lr = config.lr
    logs: list[EpochLog] = []
    val_hist: list[float] = []
    best = (math.inf, -1, math.nan)
    best_weights = net.snapshot()
    stopped = False
    t_start = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(x_tr))
        loss_sum = 0.0
        correct = 0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            xb = x_tr[idx]
            if augment_fn is not None:
                xb = augment_fn(xb, aug_rng)
            xb, yb = to_input(xb, net.dtype), y_tr[idx]
            for p in net.params.values():
                p.grad = None
            probs = net.forward(xb, training=True, rng=drop_rng)
            loss = smoothed_cross_entropy(probs, yb, config.label_smoothing)
            if not math.isfinite(float(loss.data)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            loss.backward()
            adam_step({n: net.params[n].data for n in names}, {n: net.params[n].grad for n in names}, state, lr, config.l2)
            loss_sum += float(loss.data) * len(idx)
            correct += int(np.sum(probs.data.argmax(axis=1) == yb))
        train_loss = loss_sum / len(order) + l2_penalty(net.params, config.l2)
        val_loss, val_acc = evaluate_loss(net, x_va, y_va, config)
        val_hist.append(val_loss)
        entry = EpochLog(epoch, train_loss, correct / len(order), val_loss, val_acc, lr, time.perf_counter() - t0)
        if val_loss < best[0]:
            best = (val_loss, epoch, val_acc)
            best_weights = net.snapshot()
            entry.is_best = True
        logs.append(entry)
        log.info("epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f lr %.3g", epoch, train_loss,
                 entry.train_acc, val_loss, val_acc, lr)
        if early_stop(val_hist, config.early_stop_patience):
            stopped = True
            break
        lr = sched.step(val_loss)
    net.set_weights(best_weights)
    return TrainResult(logs, best[1], best[0], best[2], stopped, time.perf_counter() - t_start)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
