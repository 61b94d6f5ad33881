"""Manifests, curation rules, the binary feature store, and synthetic data.

A manifest is JSONL, one utterance per line, with required keys
id / speaker / duration_sec / hypothesis / speech_feat / text_feat /
split and optional reference / token_logprobs. Scoring adds a "wer" key
(and alignment counts when a reference was available), giving a "scored
manifest" that the curation and training stages consume.

Feature files hold one (frames x dim) float32 matrix in a little-endian
binary layout: magic "FEW1", u32 dim, u32 frames, then the row-major
payload. No padding, no checksum; integrity comes from the length check.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, FormatError, ParameterError
from .wer import ErrorCounts, ScoredPair, tokens, weighted_wer_by_words

SPLITS = ("train", "dev", "test")
REQUIRED_KEYS = ("id", "speaker", "duration_sec", "hypothesis", "speech_feat", "text_feat", "split")
COUNT_KEYS = ("substitutions", "insertions", "deletions", "reference_words")

FEATURE_MAGIC = b"FEW1"
_HEADER = struct.Struct("<4sII")

# Synthetic frames are laid out at 50 per second so durations land in a
# plausible speech range for the frame counts below.
_SYNTH_FRAME_SECONDS = 0.02


@dataclass
class UtteranceRecord:
    id: str
    speaker: str
    duration_sec: float
    hypothesis: str
    speech_feat: str
    text_feat: str
    split: str
    reference: str | None = None
    token_logprobs: list[float] | None = None


@dataclass(frozen=True)
class ScoredRow:
    """A manifest line carrying a target WER, with counts when scored from text."""

    record: UtteranceRecord
    wer: float
    counts: ErrorCounts | None = None


@dataclass(frozen=True)
class FeatureSequence:
    """One utterance's embedding matrix, frames x dim, float32."""

    dim: int
    frames: int
    values: np.ndarray

    def __post_init__(self):
        if self.frames < 1 or self.dim < 1:
            raise DataError(f"feature sequence needs frames >= 1 and dim >= 1, got {self.frames}x{self.dim}")
        if self.values.shape != (self.frames, self.dim):
            raise DataError(
                f"feature values shaped {self.values.shape}, header says {self.frames}x{self.dim}"
            )
        if self.values.dtype != np.float32:
            raise DataError(f"feature values must be float32, got {self.values.dtype}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("feature values must be finite")


@dataclass(frozen=True)
class DatasetStats:
    segments: int
    total_duration_hours: float
    avg_duration_sec: float
    avg_words: float
    avg_wer: float
    std_wer: float
    wer_wrd: float


# -- manifests -------------------------------------------------------------


def _parse_record(obj: dict, line_no: int, base_dir: Path) -> UtteranceRecord:
    for key in REQUIRED_KEYS:
        if key not in obj:
            raise DataError(f"line {line_no}: missing required key {key!r}")
    for key in ("id", "speaker", "hypothesis", "speech_feat", "text_feat", "split"):
        if not isinstance(obj[key], str):
            raise DataError(f"line {line_no}: {key!r} must be a string")
    for key in ("id", "speaker", "speech_feat", "text_feat"):
        if not obj[key]:
            raise DataError(f"line {line_no}: {key!r} must be non-empty")
    if obj["split"] not in SPLITS:
        raise DataError(f"line {line_no}: split must be one of {SPLITS}, got {obj['split']!r}")
    dur = obj["duration_sec"]
    if not isinstance(dur, (int, float)) or isinstance(dur, bool) or not math.isfinite(dur) or dur <= 0:
        raise DataError(f"line {line_no}: duration_sec must be a positive number, got {dur!r}")
    reference = obj.get("reference")
    if reference is not None and not isinstance(reference, str):
        raise DataError(f"line {line_no}: reference must be a string or null")
    logprobs = obj.get("token_logprobs")
    if logprobs is not None:
        if not isinstance(logprobs, list) or any(
            not isinstance(v, (int, float)) or isinstance(v, bool) for v in logprobs
        ):
            raise DataError(f"line {line_no}: token_logprobs must be a list of numbers")
        logprobs = [float(v) for v in logprobs]

    def resolve(p: str) -> str:
        path = Path(p)
        return p if path.is_absolute() else str(base_dir / path)

    return UtteranceRecord(
        id=obj["id"],
        speaker=obj["speaker"],
        duration_sec=float(dur),
        hypothesis=obj["hypothesis"],
        speech_feat=resolve(obj["speech_feat"]),
        text_feat=resolve(obj["text_feat"]),
        split=obj["split"],
        reference=reference,
        token_logprobs=logprobs,
    )


def _iter_manifest(path) -> Iterable[tuple[int, dict, UtteranceRecord]]:
    path = Path(path)
    base_dir = path.parent
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise DataError(f"line {line_no}: expected a JSON object")
            record = _parse_record(obj, line_no, base_dir)
            if record.id in seen:
                raise DataError(
                    f"line {line_no}: duplicate id {record.id!r} (first seen on line {seen[record.id]})"
                )
            seen[record.id] = line_no
            yield line_no, obj, record


def load_manifest(path) -> list[UtteranceRecord]:
    """Read and validate a manifest; relative feature paths resolve against it."""
    return [record for _, _, record in _iter_manifest(path)]


def load_scored_manifest(path, skip_errors: bool = False) -> list[ScoredRow]:
    """Read a manifest whose rows carry a "wer" target.

    Rows holding an "error" key (emitted when scoring a record failed)
    raise unless skip_errors is set, in which case they are dropped.
    """
    rows = []
    for line_no, obj, record in _iter_manifest(path):
        if "error" in obj:
            if skip_errors:
                continue
            raise DataError(f"line {line_no}: record {record.id!r} carries a scoring error: {obj['error']}")
        if "wer" not in obj:
            raise DataError(f"line {line_no}: missing 'wer' (not a scored manifest?)")
        wer_value = obj["wer"]
        if not isinstance(wer_value, (int, float)) or isinstance(wer_value, bool) or not math.isfinite(wer_value):
            raise DataError(f"line {line_no}: 'wer' must be a finite number")
        present = [k for k in COUNT_KEYS if k in obj]
        counts = None
        if present:
            if len(present) != len(COUNT_KEYS):
                missing = sorted(set(COUNT_KEYS) - set(present))
                raise DataError(f"line {line_no}: partial alignment counts, missing {missing}")
            try:
                counts = ErrorCounts(*(int(obj[k]) for k in COUNT_KEYS))
            except DataError as exc:
                raise DataError(f"line {line_no}: {exc}") from exc
        rows.append(ScoredRow(record, float(wer_value), counts))
    return rows


def record_to_json(record: UtteranceRecord) -> dict:
    out = {
        "id": record.id,
        "speaker": record.speaker,
        "duration_sec": record.duration_sec,
        "hypothesis": record.hypothesis,
        "speech_feat": record.speech_feat,
        "text_feat": record.text_feat,
        "split": record.split,
    }
    if record.reference is not None:
        out["reference"] = record.reference
    if record.token_logprobs is not None:
        out["token_logprobs"] = record.token_logprobs
    return out


def save_manifest(records: Iterable[UtteranceRecord], path):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record)) + "\n")


def save_scored_manifest(rows: Iterable[ScoredRow], path):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            obj = record_to_json(row.record)
            obj["wer"] = row.wer
            if row.counts is not None:
                obj["substitutions"] = row.counts.substitutions
                obj["insertions"] = row.counts.insertions
                obj["deletions"] = row.counts.deletions
                obj["reference_words"] = row.counts.reference_words
            fh.write(json.dumps(obj) + "\n")


def scored_pairs(rows: Iterable[ScoredRow]) -> list[ScoredPair]:
    """Promote counted rows to scored pairs, checking wer against the counts."""
    pairs = []
    for row in rows:
        if row.counts is None:
            raise DataError(f"record {row.record.id!r} has no alignment counts")
        raw = row.counts.total / row.counts.reference_words
        if not (
            math.isclose(row.wer, raw, rel_tol=0, abs_tol=1e-9)
            or math.isclose(row.wer, min(1.0, raw), rel_tol=0, abs_tol=1e-9)
        ):
            raise DataError(
                f"record {row.record.id!r}: stored wer {row.wer} disagrees with counts ({raw:.6f})"
            )
        pairs.append(ScoredPair(row.record, row.counts, row.wer))
    return pairs


# -- curation --------------------------------------------------------------


def filter_by_duration(records: Sequence, max_seconds: float | None):
    """Keep records no longer than max_seconds; None or inf disables the cut."""
    if max_seconds is None or max_seconds == math.inf:
        return list(records)
    if not max_seconds > 0:
        raise ParameterError(f"max_seconds must be positive, got {max_seconds}")

    def duration(item) -> float:
        return item.record.duration_sec if isinstance(item, (ScoredRow, ScoredPair)) else item.duration_sec

    return [item for item in records if duration(item) <= max_seconds]


def wer_bin(value: float, bins: int) -> int:
    """Bin index for a rate in [0,1]: [k/bins, (k+1)/bins), last bin closed."""
    return min(int(value * bins), bins - 1)


def balance_zero_wer(
    scored: Sequence[ScoredPair], bins: int = 100, rng: np.random.Generator | None = None
) -> list[ScoredPair]:
    """Cap zero-WER pairs at the combined size of the 2nd and 3rd largest bins.

    All pairs with WER > 0 survive; of the zero-WER pairs a uniform
    random subsample of exactly min(n_zero, c2 + c3) is retained, where
    c2 and c3 count the second and third most frequent histogram bins
    (ties broken toward the lower bin index). Input order is preserved.
    """
    if bins < 3:
        raise ParameterError(f"balancing needs at least 3 bins, got {bins}")
    if rng is None:
        raise ParameterError("balance_zero_wer needs a seeded generator")
    for pair in scored:
        if not 0.0 <= pair.wer <= 1.0:
            raise DataError(f"record {pair.record.id!r}: wer {pair.wer} outside [0,1]; clamp before balancing")

    occupancy: dict[int, int] = {}
    for pair in scored:
        b = wer_bin(pair.wer, bins)
        occupancy[b] = occupancy.get(b, 0) + 1
    if len(occupancy) < 3:
        raise DataError(
            f"balancing undefined: only {len(occupancy)} non-empty bins (need 3)"
        )
    ranked = sorted(occupancy.items(), key=lambda kv: (-kv[1], kv[0]))
    cap = ranked[1][1] + ranked[2][1]

    zero_positions = [i for i, pair in enumerate(scored) if pair.wer == 0.0]
    retain = min(len(zero_positions), cap)
    chosen = rng.choice(len(zero_positions), size=retain, replace=False)
    keep = {zero_positions[i] for i in chosen}
    return [pair for i, pair in enumerate(scored) if pair.wer > 0.0 or i in keep]


def compute_stats(scored: Sequence[ScoredPair]) -> DatasetStats:
    """Corpus statistics over scored pairs (durations ride along in the records)."""
    if not scored:
        raise DataError("cannot compute statistics for an empty dataset")
    n = len(scored)
    durations = [p.record.duration_sec for p in scored]
    wers = np.array([p.wer for p in scored], dtype=np.float64)
    return DatasetStats(
        segments=n,
        total_duration_hours=sum(durations) / 3600.0,
        avg_duration_sec=sum(durations) / n,
        avg_words=sum(p.counts.reference_words for p in scored) / n,
        avg_wer=float(wers.mean()),
        std_wer=float(wers.std()),
        wer_wrd=weighted_wer_by_words(scored),
    )


def stats_table(stats_by_split: dict[str, DatasetStats]) -> str:
    """Aligned text table, one column per split."""
    splits = list(stats_by_split)
    rows = [
        ("Segments", lambda s: f"{s.segments}"),
        ("Hours", lambda s: f"{s.total_duration_hours:.2f}"),
        ("Avg. duration (s)", lambda s: f"{s.avg_duration_sec:.2f}"),
        ("Avg. words", lambda s: f"{s.avg_words:.2f}"),
        ("Avg. WER (%)", lambda s: f"{100 * s.avg_wer:.2f}"),
        ("Std. WER (%)", lambda s: f"{100 * s.std_wer:.2f}"),
        ("WER_wrd (%)", lambda s: f"{100 * s.wer_wrd:.2f}"),
    ]
    label_w = max(len(label) for label, _ in rows)
    col_w = max(8, *(len(s) for s in splits))
    lines = [" " * label_w + "  " + "  ".join(f"{s:>{col_w}}" for s in splits)]
    for label, fmt in rows:
        cells = "  ".join(f"{fmt(stats_by_split[s]):>{col_w}}" for s in splits)
        lines.append(f"{label:<{label_w}}  {cells}")
    return "\n".join(lines)


# -- binary feature store --------------------------------------------------


def write_features(seq: FeatureSequence, path):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, seq.dim, seq.frames))
        fh.write(np.ascontiguousarray(seq.values, dtype="<f4").tobytes())


def read_features(path) -> FeatureSequence:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"feature file too short for its header ({len(blob)} bytes)", offset=len(blob))
    magic, dim, frames = _HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}", offset=0)
    if dim < 1:
        raise FormatError(f"header dim must be >= 1, got {dim}", offset=4)
    if frames < 1:
        raise FormatError(f"header frames must be >= 1, got {frames}", offset=8)
    expected = frames * dim * 4
    payload = blob[_HEADER.size :]
    if len(payload) < expected:
        raise FormatError(
            f"payload truncated: header promises {expected} bytes, found {len(payload)}",
            offset=_HEADER.size + len(payload),
        )
    if len(payload) > expected:
        raise FormatError(
            f"{len(payload) - expected} trailing bytes after the declared payload",
            offset=_HEADER.size + expected,
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(frames, dim).copy()
    return FeatureSequence(dim=dim, frames=frames, values=values)


def load_features_for(record: UtteranceRecord) -> tuple[FeatureSequence, FeatureSequence]:
    return read_features(record.speech_feat), read_features(record.text_feat)


# -- synthetic data --------------------------------------------------------


@dataclass(frozen=True)
class SynthResult:
    manifest_path: Path
    sidecar_path: Path
    records: list[UtteranceRecord] = field(repr=False)
    targets: list[float] = field(repr=False)


def synth_dataset(
    out_dir,
    n_train: int,
    n_dev: int,
    n_test: int,
    speech_dim: int,
    text_dim: int,
    seed: int,
    noise_sigma: float = 0.02,
    speech_frames: tuple[int, int] = (20, 500),
    text_frames: tuple[int, int] = (3, 40),
) -> SynthResult:
    """Generate a runnable dataset with known structure.

    Features are Gaussian; the target for each utterance is a logistic
    function of its pooled feature vector under a hidden (w, b), plus
    clipped label noise. Logits are rescaled to mean -0.6 / std 1.5 so
    targets spread over the unit interval instead of piling onto 0.5.
    The effective (w, b) goes to a sidecar JSON so tests can verify the
    targets from the files alone.
    """
    for name, dim in (("speech_dim", speech_dim), ("text_dim", text_dim)):
        if dim < 2:
            raise ParameterError(f"{name} must be >= 2, got {dim}")
    for name, count in (("n_train", n_train), ("n_dev", n_dev), ("n_test", n_test)):
        if count < 0:
            raise ParameterError(f"{name} must be >= 0, got {count}")
    if noise_sigma < 0:
        raise ParameterError(f"noise_sigma must be >= 0, got {noise_sigma}")

    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"
    sidecar_path = out_dir / "hidden.json"

    rng = np.random.default_rng(seed)
    w_raw = rng.standard_normal(speech_dim + text_dim)

    records: list[UtteranceRecord] = []
    pooled_rows: list[np.ndarray] = []
    counts = (("train", n_train), ("dev", n_dev), ("test", n_test))
    index = 0
    for split, count in counts:
        for _ in range(count):
            t_speech = int(rng.integers(speech_frames[0], speech_frames[1] + 1))
            t_text = int(rng.integers(text_frames[0], text_frames[1] + 1))
            speech = rng.standard_normal((t_speech, speech_dim)).astype(np.float32)
            text = rng.standard_normal((t_text, text_dim)).astype(np.float32)
            uid = f"synth-{index:06d}"
            speech_rel = f"features/{uid}.speech.few"
            text_rel = f"features/{uid}.text.few"
            write_features(FeatureSequence(speech_dim, t_speech, speech), out_dir / speech_rel)
            write_features(FeatureSequence(text_dim, t_text, text), out_dir / text_rel)
            records.append(
                UtteranceRecord(
                    id=uid,
                    speaker=f"spk{index % 24:02d}",
                    duration_sec=t_speech * _SYNTH_FRAME_SECONDS,
                    hypothesis=" ".join(f"w{k}" for k in range(t_text)),
                    speech_feat=speech_rel,
                    text_feat=text_rel,
                    split=split,
                )
            )
            pooled = np.concatenate(
                [speech.mean(axis=0, dtype=np.float64), text.mean(axis=0, dtype=np.float64)]
            )
            pooled_rows.append(pooled)
            index += 1

    if records:
        z_raw = np.stack(pooled_rows) @ w_raw
        spread = float(z_raw.std())
        scale = 1.5 / spread if spread > 0 else 1.0
        w = w_raw * scale
        b = -0.6 - float(z_raw.mean()) * scale
        logits = z_raw * scale + b
        clean = 1.0 / (1.0 + np.exp(-logits))
        noisy = clean + rng.normal(0.0, noise_sigma, size=len(records))
        targets = np.clip(noisy, 0.0, 1.0).tolist()
    else:
        w, b, targets = w_raw, 0.0, []

    with open(manifest_path, "w", encoding="utf-8") as fh:
        for record, target in zip(records, targets):
            obj = record_to_json(record)
            obj["wer"] = target
            fh.write(json.dumps(obj) + "\n")
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "w": list(w),
                "b": b,
                "noise_sigma": noise_sigma,
                "speech_dim": speech_dim,
                "text_dim": text_dim,
                "seed": seed,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    return SynthResult(manifest_path, sidecar_path, records, list(targets))
