"""Adam optimizer and the minibatch training loop."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from . import model as model_mod
from . import ops


@dataclass
class AdamState:
    """Per-parameter moment accumulators plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7


def init_adam(params: dict[str, np.ndarray], lr: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-7) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(a) for k, a in params.items()},
        v={k: np.zeros_like(a) for k, a in params.items()},
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place:

        m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
        p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    """
    if set(grads) != set(params):
        missing = set(params) ^ set(grads)
        raise ValidationError(f"gradient keys do not mirror params: {sorted(missing)}")
    for k in params:
        if grads[k].shape != params[k].shape:
            raise ValidationError(
                f"gradient for {k} has shape {grads[k].shape}, expected {params[k].shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        p -= state.lr * (state.m[k] / bc1) / (np.sqrt(state.v[k] / bc2) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 32
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)

    def table(self) -> str:
        """Tab-delimited history with a header row."""
        lines = ["epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc"]
        for r in self.records:
            lines.append(f"{r.epoch}\t{r.train_loss!r}\t{r.train_acc!r}\t"
                         f"{r.val_loss!r}\t{r.val_acc!r}")
        return "\n".join(lines) + "\n"


def _check_labels(y: np.ndarray, num_classes: int, what: str) -> np.ndarray:
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        raise ValidationError(f"{what} labels must be integers")
    if y.size == 0:
        raise ValidationError(f"{what} set is empty")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValidationError(f"{what} labels must lie in [0, {num_classes})")
    return y


def train_epoch(model: model_mod.Model, state: AdamState, train_set, config: TrainConfig,
                rng: np.random.Generator) -> tuple[float, float]:
    """One pass over the training set; returns (mean sample loss, accuracy).

    Shuffles with the supplied rng when enabled; the last batch may be short.
    """
    x, y = train_set
    y = _check_labels(y, model.num_classes, "train")
    n = len(y)
    order = rng.permutation(n) if config.shuffle else np.arange(n)
    loss_sum = 0.0
    correct = 0
    for start in range(0, n, config.batch_size):
        idx = order[start:start + config.batch_size]
        xb = np.asarray(x[idx], dtype=np.float64)
        yb = y[idx]
        logits, cache = model_mod.forward(model, xb)
        loss, d_logits = ops.softmax_xent(logits, yb)
        grads = model_mod.backward(model, cache, d_logits)
        adam_step(model.params, grads, state)
        loss_sum += loss * len(idx)
        correct += int((logits.argmax(axis=1) == yb).sum())
    return loss_sum / n, correct / n


def evaluate(model: model_mod.Model, x: np.ndarray, y: np.ndarray,
             batch_size: int = 32) -> tuple[float, float]:
    """Mean sample loss and accuracy over (x, y), in deterministic batch order."""
    y = _check_labels(y, model.num_classes, "eval")
    n = len(y)
    loss_sum = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        xb = np.asarray(x[start:start + batch_size], dtype=np.float64)
        yb = y[start:start + batch_size]
        logits, _ = model_mod.forward(model, xb)
        loss, _ = ops.softmax_xent(logits, yb)
        loss_sum += loss * len(yb)
        correct += int((logits.argmax(axis=1) == yb).sum())
    return loss_sum / n, correct / n


def fit(model: model_mod.Model, train_set, val_set, config: TrainConfig,
        state: AdamState | None = None) -> History:
    """Run config.epochs epochs, scoring the validation set after each.

    No early stopping: the model is left in its state after the last epoch.
    """
    x_tr, y_tr = train_set
    x_va, y_va = val_set
    y_tr = _check_labels(y_tr, model.num_classes, "train")
    y_va = _check_labels(y_va, model.num_classes, "validation")
    if state is None:
        state = init_adam(model.params)
    rng = np.random.default_rng(config.seed)
    history = History()
    for epoch in range(1, config.epochs + 1):
        train_loss, train_acc = train_epoch(model, state, (x_tr, y_tr), config, rng)
        val_loss, val_acc = evaluate(model, x_va, y_va, batch_size=config.batch_size)
        history.records.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc))
    return history
