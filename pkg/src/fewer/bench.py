"""Single-stream inference timing: per-stage wall clock and real-time factor.

Stages are the estimator's own pipeline, measured per utterance with the
monotonic performance counter:

  feature_load  — reading both feature files from disk
  aggregation   — collapsing each sequence to its fixed-size vector
  feedforward   — the regression head on the joined vector

Feature loading is reported but kept out of the headline
aggregation/feedforward comparison: extraction happens upstream, so the
load stage times this machine's disk, not the estimator.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import FeatureSequence, UtteranceRecord, load_features_for
from .errors import DataError, FormatError, ParameterError
from .model import EstimatorModel, aggregate_avg, aggregate_bilstm, leaf_params, mlp_head
from .tensor import Tape

STAGES = ("feature_load", "aggregation", "feedforward")

# Denominators below this are indistinguishable from zero; ratios against
# them are reported as a ">N" lower bound instead of a meaningless float.
_RATIO_FLOOR = max(time.get_clock_info("perf_counter").resolution, 1e-9)


@dataclass(frozen=True)
class TimingReport:
    aggregator: str
    n_utterances: int
    stage_seconds: dict[str, float]
    total_seconds: float
    audio_total_seconds: float
    rtf: float
    dataset_hash: str
    warmup: int

    @property
    def estimator_seconds(self) -> float:
        """Aggregation plus feedforward: the part the aggregator choice moves."""
        return self.stage_seconds["aggregation"] + self.stage_seconds["feedforward"]


@dataclass(frozen=True)
class Comparison:
    total_ratio: float | str
    total_reduction: float
    estimator_ratio: float | str
    stage_ratios: dict[str, float | str]


def real_time_factor(compute_seconds: float, audio_seconds: float) -> float:
    if audio_seconds <= 0:
        raise DataError(f"audio duration must be positive, got {audio_seconds}")
    if compute_seconds < 0:
        raise DataError(f"compute time cannot be negative, got {compute_seconds}")
    return compute_seconds / audio_seconds


def dataset_fingerprint(records: Sequence[UtteranceRecord]) -> str:
    """Identity of the benchmarked data, stable across aggregators.

    Hashes ids, durations, and feature file sizes; cheap enough to run
    before timing without touching the file contents.
    """
    digest = hashlib.sha256()
    for r in records:
        line = f"{r.id}|{r.duration_sec!r}|{os.path.getsize(r.speech_feat)}|{os.path.getsize(r.text_feat)}"
        digest.update(line.encode("utf-8"))
    return digest.hexdigest()[:16]


def _aggregate(model: EstimatorModel, speech: FeatureSequence, text: FeatureSequence) -> np.ndarray:
    if model.aggregator == "avg_pool":
        speech_vec = aggregate_avg(speech)
    else:
        speech_vec = aggregate_bilstm(speech, model.params)
    return np.hstack([speech_vec, aggregate_avg(text)])


def _feedforward(model: EstimatorModel, joined: np.ndarray) -> float:
    tape = Tape()
    leaves = {
        name: tape.leaf(arr) for name, arr in model.params.items() if name.startswith("mlp.")
    }
    out = mlp_head(tape, leaves, tape.leaf(joined), mode="eval")
    return float(out.value[0, 0])


def bench_estimator(
    model: EstimatorModel,
    records: Sequence[UtteranceRecord],
    batch_size: int = 1,
    warmup: int = 2,
) -> TimingReport:
    """Time one measured pass over the dataset after `warmup` unmeasured ones."""
    if not records:
        raise DataError("cannot benchmark an empty dataset")
    if warmup < 0:
        raise ParameterError(f"warmup must be >= 0, got {warmup}")
    if batch_size != 1:
        raise ParameterError(
            f"only the single-stream protocol (batch_size=1) is implemented, got {batch_size}"
        )
    audio_total = sum(r.duration_sec for r in records)
    if audio_total <= 0:
        raise DataError("total audio duration must be positive")
    fingerprint = dataset_fingerprint(records)

    for _ in range(warmup):
        for r in records:
            speech, text = load_features_for(r)
            _feedforward(model, _aggregate(model, speech, text))

    stage = dict.fromkeys(STAGES, 0.0)
    clock = time.perf_counter
    t_start = clock()
    for r in records:
        t0 = clock()
        speech, text = load_features_for(r)
        t1 = clock()
        joined = _aggregate(model, speech, text)
        t2 = clock()
        _feedforward(model, joined)
        t3 = clock()
        stage["feature_load"] += t1 - t0
        stage["aggregation"] += t2 - t1
        stage["feedforward"] += t3 - t2
    total = clock() - t_start

    return TimingReport(
        aggregator=model.aggregator,
        n_utterances=len(records),
        stage_seconds=stage,
        total_seconds=total,
        audio_total_seconds=audio_total,
        rtf=real_time_factor(total, audio_total),
        dataset_hash=fingerprint,
        warmup=warmup,
    )


def _ratio(numerator: float, denominator: float) -> float | str:
    if denominator < _RATIO_FLOOR:
        return f">{numerator / _RATIO_FLOOR:.0f}"
    return numerator / denominator


def compare(a: TimingReport, b: TimingReport) -> Comparison:
    """How much slower report `a` is than report `b`, stage by stage."""
    if a.dataset_hash != b.dataset_hash:
        raise DataError(
            f"reports cover different datasets ({a.dataset_hash} vs {b.dataset_hash})"
        )
    if a.total_seconds <= 0:
        raise DataError("cannot compare against a zero-time report")
    return Comparison(
        total_ratio=_ratio(a.total_seconds, b.total_seconds),
        total_reduction=1.0 - b.total_seconds / a.total_seconds,
        estimator_ratio=_ratio(a.estimator_seconds, b.estimator_seconds),
        stage_ratios={s: _ratio(a.stage_seconds[s], b.stage_seconds[s]) for s in STAGES},
    )


# -- renderings ------------------------------------------------------------


def timing_from_json(payload: dict) -> TimingReport:
    """Rebuild a report written by timing_json, e.g. for cross-run compares."""
    try:
        return TimingReport(
            aggregator=str(payload["aggregator"]),
            n_utterances=int(payload["n_utterances"]),
            stage_seconds={s: float(payload["stage_seconds"][s]) for s in STAGES},
            total_seconds=float(payload["total_seconds"]),
            audio_total_seconds=float(payload["audio_total_seconds"]),
            rtf=float(payload["rtf"]),
            dataset_hash=str(payload["dataset_hash"]),
            warmup=int(payload["warmup"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed timing report: {exc}") from exc


def timing_json(report: TimingReport) -> dict:
    return {
        "aggregator": report.aggregator,
        "n_utterances": report.n_utterances,
        "warmup": report.warmup,
        "stage_seconds": dict(report.stage_seconds),
        "estimator_seconds": report.estimator_seconds,
        "total_seconds": report.total_seconds,
        "audio_total_seconds": report.audio_total_seconds,
        "rtf": report.rtf,
        "dataset_hash": report.dataset_hash,
    }


def _rows_for(report: TimingReport) -> list[tuple[str, str]]:
    rows = [(s.replace("_", " "), f"{report.stage_seconds[s]:.4f}") for s in STAGES]
    rows.append(("total", f"{report.total_seconds:.4f}"))
    rows.append(("RTF", f"{report.rtf:.6f}"))
    return rows


def timing_table(report: TimingReport) -> str:
    rows = _rows_for(report)
    label_w = max(len(label) for label, _ in rows)
    value_w = max(len(report.aggregator), *(len(v) for _, v in rows))
    lines = [f"{'':<{label_w}}  {report.aggregator:>{value_w}}"]
    lines.extend(f"{label:<{label_w}}  {value:>{value_w}}" for label, value in rows)
    return "\n".join(lines)


def comparison_table(a: TimingReport, b: TimingReport) -> str:
    cmp = compare(a, b)
    ratio_by_label = {s.replace("_", " "): cmp.stage_ratios[s] for s in STAGES}
    ratio_by_label["total"] = cmp.total_ratio
    headers = ("", a.aggregator, b.aggregator, "ratio")
    rows = []
    for (label, a_val), (_, b_val) in zip(_rows_for(a), _rows_for(b)):
        ratio = ratio_by_label.get(label)
        if isinstance(ratio, float):
            ratio_text = f"{ratio:.2f}x"
        elif ratio is None:
            ratio_text = "-"
        else:
            ratio_text = ratio
        rows.append((label, a_val, b_val, ratio_text))
    widths = [max(len(headers[i]), *(len(r[i]) for r in rows)) for i in range(4)]
    lines = [
        "  ".join(f"{headers[i]:<{widths[i]}}" if i == 0 else f"{headers[i]:>{widths[i]}}" for i in range(4))
    ]
    for row in rows:
        lines.append(
            "  ".join(f"{row[i]:<{widths[i]}}" if i == 0 else f"{row[i]:>{widths[i]}}" for i in range(4))
        )
    lines.append(f"reduction: {100 * cmp.total_reduction:.2f}%")
    return "\n".join(lines)
