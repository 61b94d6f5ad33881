"""The two-tower estimator: aggregators, MLP head, initialisation, model files.

Both towers reduce a (frames x dim) embedding sequence to one vector:
the speech tower by average pooling or a single-layer BiLSTM, the text
tower always by average pooling. The concatenated vector feeds an MLP
with hidden widths 600 and 32 (affine, ReLU, layer norm, dropout) and a
sigmoid output unit, so estimates live strictly inside (0, 1).

Parameters are a flat name -> float64 array dict; every forward pass
re-enters them as leaves on a fresh tape, which keeps inference and
training on one code path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .dataset import FeatureSequence
from .errors import DataError, FormatError, ParameterError, ShapeError
from .tensor import Tape, Tensor

AGGREGATORS = ("avg_pool", "bilstm")
MLP_WIDTHS = (600, 32, 1)
GATES = ("input", "forget", "cell", "output")
DIRECTIONS = ("fwd", "bwd")
DEFAULT_DROPOUT = 0.1

MODEL_MAGIC = b"FEWM"
MODEL_VERSION = 1


@dataclass
class EstimatorModel:
    aggregator: str
    speech_dim: int
    text_dim: int
    params: dict[str, np.ndarray] = field(repr=False)
    seed: int = 0
    config_hash: str = ""

    @property
    def input_dim(self) -> int:
        """Width of the concatenated tower output feeding the MLP."""
        speech_part = 2 * self.speech_dim if self.aggregator == "bilstm" else self.speech_dim
        return speech_part + self.text_dim

    def validate(self):
        expected = param_shapes(self.aggregator, self.speech_dim, self.text_dim)
        if set(self.params) != set(expected):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise FormatError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, arr in self.params.items():
            if arr.shape != expected[name]:
                raise FormatError(f"parameter {name} shaped {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"parameter {name} contains non-finite values")


def param_shapes(aggregator: str, speech_dim: int, text_dim: int) -> dict[str, tuple[int, int]]:
    """Canonical parameter names and shapes for an architecture."""
    if aggregator not in AGGREGATORS:
        raise ParameterError(f"aggregator must be one of {AGGREGATORS}, got {aggregator!r}")
    if speech_dim < 1 or text_dim < 1:
        raise ParameterError(f"dims must be >= 1, got {speech_dim}/{text_dim}")
    shapes: dict[str, tuple[int, int]] = {}
    if aggregator == "bilstm":
        hidden = speech_dim
        for direction in DIRECTIONS:
            for gate in GATES:
                shapes[f"lstm.{direction}.{gate}.w"] = (speech_dim, hidden)
                shapes[f"lstm.{direction}.{gate}.u"] = (hidden, hidden)
                shapes[f"lstm.{direction}.{gate}.b"] = (1, hidden)
    fan_in = (2 * speech_dim if aggregator == "bilstm" else speech_dim) + text_dim
    for i, width in enumerate(MLP_WIDTHS):
        shapes[f"mlp.{i}.weight"] = (fan_in, width)
        shapes[f"mlp.{i}.bias"] = (1, width)
        if i < len(MLP_WIDTHS) - 1:  # no normalisation on the output unit
            shapes[f"mlp.{i}.norm_gain"] = (1, width)
            shapes[f"mlp.{i}.norm_bias"] = (1, width)
        fan_in = width
    return shapes


def init_model(
    aggregator: str, speech_dim: int, text_dim: int, seed: int, config_hash: str = ""
) -> EstimatorModel:
    """Fresh parameters: uniform(+-sqrt(1/fan_in)) weights, zero biases.

    Layer-norm gains start at 1, and the LSTM forget-gate bias at 1.0 so
    early training does not wipe the cell state.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(aggregator, speech_dim, text_dim).items():
        leafkind = name.rsplit(".", 1)[1]
        if leafkind in ("w", "u", "weight"):
            bound = np.sqrt(1.0 / shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif leafkind == "norm_gain":
            params[name] = np.ones(shape)
        elif name.endswith("forget.b"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return EstimatorModel(aggregator, speech_dim, text_dim, params, seed, config_hash)


# -- forward graph ---------------------------------------------------------


def leaf_params(tape: Tape, model: EstimatorModel) -> dict[str, Tensor]:
    return {name: tape.leaf(arr) for name, arr in model.params.items()}


def _lstm_direction(tape: Tape, seq: Tensor, leaves: dict[str, Tensor], direction: str) -> Tensor:
    hidden = leaves[f"lstm.{direction}.input.w"].cols
    # One gemm per gate up front; the recurrence then only needs h @ u.
    pre = {g: tape.matmul(seq, leaves[f"lstm.{direction}.{g}.w"]) for g in GATES}
    h = tape.leaf(np.zeros((1, hidden)))
    c = tape.leaf(np.zeros((1, hidden)))
    steps = range(seq.rows) if direction == "fwd" else range(seq.rows - 1, -1, -1)
    for t in steps:
        gates = {}
        for g in GATES:
            z = tape.add(tape.rows(pre[g], t, t + 1), tape.matmul(h, leaves[f"lstm.{direction}.{g}.u"]))
            gates[g] = tape.add(z, leaves[f"lstm.{direction}.{g}.b"])
        i_gate = tape.sigmoid(gates["input"])
        f_gate = tape.sigmoid(gates["forget"])
        o_gate = tape.sigmoid(gates["output"])
        candidate = tape.tanh(gates["cell"])
        c = tape.add(tape.mul(f_gate, c), tape.mul(i_gate, candidate))
        h = tape.mul(o_gate, tape.tanh(c))
    return h


def speech_tower(tape: Tape, model: EstimatorModel, leaves: dict[str, Tensor], seq: Tensor) -> Tensor:
    if model.aggregator == "avg_pool":
        return tape.mean_pool(seq)
    fwd = _lstm_direction(tape, seq, leaves, "fwd")
    bwd = _lstm_direction(tape, seq, leaves, "bwd")
    return tape.concat_cols(fwd, bwd)


def mlp_head(
    tape: Tape,
    leaves: dict[str, Tensor],
    x: Tensor,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    dropout_rate: float = DEFAULT_DROPOUT,
) -> Tensor:
    for i in range(len(MLP_WIDTHS) - 1):
        x = tape.add(tape.matmul(x, leaves[f"mlp.{i}.weight"]), leaves[f"mlp.{i}.bias"])
        x = tape.relu(x)
        x = tape.layer_norm(x, leaves[f"mlp.{i}.norm_gain"], leaves[f"mlp.{i}.norm_bias"])
        x = tape.dropout(x, dropout_rate, mode, rng)
    last = len(MLP_WIDTHS) - 1
    out = tape.add(tape.matmul(x, leaves[f"mlp.{last}.weight"]), leaves[f"mlp.{last}.bias"])
    return tape.sigmoid(out)


def forward(
    tape: Tape,
    model: EstimatorModel,
    leaves: dict[str, Tensor],
    speech: Tensor,
    text: Tensor,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    dropout_rate: float = DEFAULT_DROPOUT,
) -> Tensor:
    joined = tape.concat_cols(speech_tower(tape, model, leaves, speech), tape.mean_pool(text))
    return mlp_head(tape, leaves, joined, mode, rng, dropout_rate)


def _check_dims(model: EstimatorModel, speech: FeatureSequence, text: FeatureSequence):
    if speech.dim != model.speech_dim or text.dim != model.text_dim:
        raise ShapeError(
            f"model expects dims {model.speech_dim}/{model.text_dim}, "
            f"features are {speech.dim}/{text.dim}"
        )


def estimate(
    model: EstimatorModel,
    speech: FeatureSequence,
    text: FeatureSequence,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    dropout_rate: float = DEFAULT_DROPOUT,
) -> float:
    """One utterance's WER estimate, strictly inside (0, 1)."""
    _check_dims(model, speech, text)
    tape = Tape()
    leaves = leaf_params(tape, model)
    out = forward(
        tape,
        model,
        leaves,
        tape.leaf(speech.values),
        tape.leaf(text.values),
        mode,
        rng,
        dropout_rate,
    )
    return float(out.value[0, 0])


def aggregate_avg(seq: FeatureSequence) -> np.ndarray:
    """Average pooling over frames, as a (1 x dim) float64 row."""
    return seq.values.mean(axis=0, keepdims=True, dtype=np.float64)


def aggregate_bilstm(seq: FeatureSequence, params: dict[str, np.ndarray]) -> np.ndarray:
    """Concatenated final hidden states of both LSTM directions.

    Runs the same graph the estimator records, on a throwaway tape.
    """
    tape = Tape()
    leaves = {name: tape.leaf(arr) for name, arr in params.items() if name.startswith("lstm.")}
    seq_leaf = tape.leaf(seq.values)
    fwd = _lstm_direction(tape, seq_leaf, leaves, "fwd")
    bwd = _lstm_direction(tape, seq_leaf, leaves, "bwd")
    return tape.concat_cols(fwd, bwd).value.copy()


# -- model files -----------------------------------------------------------


def save_model(model: EstimatorModel, path):
    model.validate()
    chunks = [
        MODEL_MAGIC,
        struct.pack("<I", MODEL_VERSION),
        struct.pack("<B", AGGREGATORS.index(model.aggregator)),
        struct.pack("<II", model.speech_dim, model.text_dim),
        struct.pack("<q", model.seed),
    ]
    hash_bytes = model.config_hash.encode("utf-8")
    chunks.append(struct.pack("<I", len(hash_bytes)))
    chunks.append(hash_bytes)
    chunks.append(struct.pack("<I", len(model.params)))
    for name in sorted(model.params):
        name_bytes = name.encode("utf-8")
        arr = model.params[name]
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<II", arr.shape[0], arr.shape[1]))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"model file truncated while reading {what}", offset=self.pos)
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def load_model(path) -> EstimatorModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}", offset=0)
    (version,) = r.unpack("<I", "version")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version} (expected {MODEL_VERSION})", offset=4)
    (agg_index,) = r.unpack("<B", "aggregator")
    if agg_index >= len(AGGREGATORS):
        raise FormatError(f"unknown aggregator code {agg_index}", offset=8)
    speech_dim, text_dim = r.unpack("<II", "dims")
    (seed,) = r.unpack("<q", "seed")
    (hash_len,) = r.unpack("<I", "hash length")
    config_hash = r.take(hash_len, "config hash").decode("utf-8")
    (n_params,) = r.unpack("<I", "parameter count")
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = r.unpack("<I", "parameter name length")
        name = r.take(name_len, "parameter name").decode("utf-8")
        rows, cols = r.unpack("<II", f"shape of {name}")
        if rows < 1 or cols < 1:
            raise FormatError(f"parameter {name} has degenerate shape {rows}x{cols}", offset=r.pos - 8)
        data = r.take(rows * cols * 8, f"values of {name}")
        params[name] = np.frombuffer(data, dtype="<f8").reshape(rows, cols).copy()
    if r.pos != len(blob):
        raise FormatError(f"{len(blob) - r.pos} trailing bytes after last parameter", offset=r.pos)
    model = EstimatorModel(AGGREGATORS[agg_index], speech_dim, text_dim, params, seed, config_hash)
    model.validate()
    return model
