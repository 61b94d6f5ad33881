"""MSE training with Adam, cosine annealing, and dev-loss early stopping.

The loop trains minibatches of per-sample graphs on a fresh tape each
step, evaluates dev MSE once per epoch, keeps the best-dev parameter
snapshot, and stops at the epoch cap or after `patience` epochs without
improvement. Everything is seeded: shuffling and dropout draw from two
generators derived from the config seed, so a config fully determines
the result.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import FeatureSequence
from .errors import DataError, NumericError, ParameterError, ShapeError
from .model import EstimatorModel, aggregate_avg, forward, leaf_params, mlp_head
from .tensor import Tape


@dataclass
class TrainConfig:
    lr_max: float = 1e-3
    t_max_epochs: int = 15
    max_epochs: int = 40
    patience: int = 5
    batch_size: int = 64
    seed: int = 0
    dropout: float = 0.1

    def __post_init__(self):
        if self.lr_max < 0 or not math.isfinite(self.lr_max):
            raise ParameterError(f"lr_max must be >= 0, got {self.lr_max}")
        if self.t_max_epochs < 1:
            raise ParameterError(f"t_max_epochs must be >= 1, got {self.t_max_epochs}")
        if self.max_epochs < 1:
            raise ParameterError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ParameterError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class LabeledExample:
    speech: FeatureSequence
    text: FeatureSequence
    target: float


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    train_mse: float
    dev_mse: float
    lr: float


@dataclass
class TrainResult:
    model: EstimatorModel
    history: list[EpochRow]
    stopped: str  # "max_epochs" or "patience"

    @property
    def best_dev_mse(self) -> float:
        return min(row.dev_mse for row in self.history)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.items()},
            v={k: np.zeros_like(a) for k, a in params.items()},
        )


def mean_squared_difference(a: Sequence[float], b: Sequence[float]) -> float:
    """Shared MSE core; both the training loss and RMSE go through here."""
    if len(a) != len(b):
        raise DataError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise DataError("need at least one pair")
    arr_a = np.asarray(a, dtype=np.float64)
    arr_b = np.asarray(b, dtype=np.float64)
    return float(np.mean((arr_a - arr_b) ** 2))


def mse_loss(estimates: Sequence[float], targets: Sequence[float]) -> float:
    """Mean squared error over rates, which must all sit in [0, 1]."""
    for name, values in (("estimates", estimates), ("targets", targets)):
        for v in values:
            if not 0.0 <= v <= 1.0:
                raise DataError(f"{name} must lie in [0,1], got {v}")
    return mean_squared_difference(estimates, targets)


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    """Annealed rate for a 0-based epoch; flat at 0 once past t_max_epochs."""
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    progress = min(epoch, cfg.t_max_epochs) / cfg.t_max_epochs
    return 0.5 * cfg.lr_max * (1.0 + math.cos(math.pi * progress))


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Standard bias-corrected Adam update, in place."""
    for name, param in params.items():
        if name not in grads:
            raise ShapeError(f"missing gradient for parameter {name}")
        if grads[name].shape != param.shape:
            raise ShapeError(
                f"gradient for {name} shaped {grads[name].shape}, parameter is {param.shape}"
            )
    state.step += 1
    t = state.step
    for name, param in params.items():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1**t)
        v_hat = state.v[name] / (1.0 - beta2**t)
        param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def ensure_finite_loss(value: float, epoch: int, batch_index: int) -> float:
    if not math.isfinite(value):
        raise NumericError(f"non-finite training loss ({value}) at epoch {epoch}, batch {batch_index}")
    return value


def _validate_examples(model: EstimatorModel, examples: Sequence[LabeledExample], split: str):
    if not examples:
        raise DataError(f"{split} split is empty")
    for ex in examples:
        if ex.speech.dim != model.speech_dim or ex.text.dim != model.text_dim:
            raise ShapeError(
                f"{split} example dims {ex.speech.dim}/{ex.text.dim} do not match "
                f"model {model.speech_dim}/{model.text_dim}"
            )
        if not 0.0 <= ex.target <= 1.0:
            raise DataError(f"{split} target {ex.target} outside [0,1]")


class _AvgPoolBatcher:
    """Pools every sequence once up front; batches then reuse the matrix."""

    def __init__(self, model: EstimatorModel, examples: Sequence[LabeledExample]):
        self.inputs = np.vstack(
            [np.hstack([aggregate_avg(ex.speech), aggregate_avg(ex.text)]) for ex in examples]
        )

    def sample_output(self, tape, model, leaves, index, mode, rng, dropout):
        x = tape.leaf(self.inputs[index : index + 1])
        return mlp_head(tape, leaves, x, mode, rng, dropout)


class _SequenceBatcher:
    """Keeps raw sequences; each sample records the full two-tower graph."""

    def __init__(self, model: EstimatorModel, examples: Sequence[LabeledExample]):
        self.examples = examples

    def sample_output(self, tape, model, leaves, index, mode, rng, dropout):
        ex = self.examples[index]
        speech = tape.leaf(ex.speech.values)
        text = tape.leaf(ex.text.values)
        return forward(tape, model, leaves, speech, text, mode, rng, dropout)


def _dev_estimates(model, batcher, n) -> list[float]:
    out = []
    for i in range(n):
        tape = Tape()
        leaves = leaf_params(tape, model)
        out.append(float(batcher.sample_output(tape, model, leaves, i, "eval", None, 0.0).value[0, 0]))
    return out


def train(
    model: EstimatorModel,
    train_set: Sequence[LabeledExample],
    dev_set: Sequence[LabeledExample],
    cfg: TrainConfig,
) -> TrainResult:
    """Run the full recipe and return the best-dev snapshot plus history.

    The passed-in model is left untouched; training works on a copy.
    """
    _validate_examples(model, train_set, "train")
    _validate_examples(model, dev_set, "dev")

    model = EstimatorModel(
        model.aggregator,
        model.speech_dim,
        model.text_dim,
        copy.deepcopy(model.params),
        model.seed,
        model.config_hash,
    )
    batcher_cls = _AvgPoolBatcher if model.aggregator == "avg_pool" else _SequenceBatcher
    train_batcher = batcher_cls(model, train_set)
    dev_batcher = batcher_cls(model, dev_set)
    targets = np.array([ex.target for ex in train_set])
    dev_targets = [ex.target for ex in dev_set]

    data_rng = np.random.default_rng([cfg.seed, 0])
    dropout_rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState.zeros_like(model.params)
    history: list[EpochRow] = []
    best_params = copy.deepcopy(model.params)
    best_dev = math.inf
    since_best = 0
    stopped = "max_epochs"

    for epoch in range(cfg.max_epochs):
        lr = cosine_lr(epoch, cfg)
        order = data_rng.permutation(len(train_set))
        sq_error_total = 0.0
        for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            tape = Tape()
            leaves = leaf_params(tape, model)
            acc = None
            for i in batch:
                out = train_batcher.sample_output(
                    tape, model, leaves, int(i), "train", dropout_rng, cfg.dropout
                )
                diff = tape.sub(out, tape.leaf([[targets[i]]]))
                sq = tape.mul(diff, diff)
                acc = sq if acc is None else tape.add(acc, sq)
            loss = tape.scale(acc, 1.0 / len(batch))
            loss_value = ensure_finite_loss(float(loss.value[0, 0]), epoch, batch_index)
            sq_error_total += loss_value * len(batch)
            grads = tape.backward(loss)
            named = {name: grads[leaf.node_id] for name, leaf in leaves.items()}
            adam_step(model.params, named, state, lr)

        dev_mse = mse_loss(_dev_estimates(model, dev_batcher, len(dev_set)), dev_targets)
        history.append(EpochRow(epoch, sq_error_total / len(train_set), dev_mse, lr))
        if dev_mse < best_dev:
            best_dev = dev_mse
            best_params = copy.deepcopy(model.params)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                stopped = "patience"
                break

    model.params = best_params
    return TrainResult(model, history, stopped)


def history_csv(history: Sequence[EpochRow]) -> str:
    """CSV rows for the training curve; epoch is the 0-based schedule index."""
    lines = ["epoch,train_mse,dev_mse,lr"]
    for row in history:
        lines.append(f"{row.epoch},{row.train_mse!r},{row.dev_mse!r},{row.lr!r}")
    return "\n".join(lines) + "\n"
