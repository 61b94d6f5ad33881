"""Run pretrained encoders over audio/hypothesis pairs and write features.

This is the bridge between off-the-shelf speech and text encoders
(anything transformers can load: hub ids or local directories) and the
estimator toolkit's on-disk contract -- one FEW1 feature file per tower
per utterance, plus a JSONL manifest pointing at them. The two packages
share only that contract: the byte layout and the manifest keys are
written here independently, and the round-trip tests read everything
back through the estimator's own loader to keep the two sides honest.

Everything runs in inference mode, so the same inputs and the same model
revision produce identical feature bytes.
"""

from __future__ import annotations

import json
import re
import struct
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from . import audio
from .errors import ExtractionError, SkipRecord

FEATURE_MAGIC = b"FEW1"
_HEADER = struct.Struct("<4sII")

SPLITS = ("train", "dev", "test")

# Record ids double as feature file names, so they must be path-safe.
_ID_OK = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")

DEFAULT_SPEECH_MODEL = "facebook/hubert-large-ll60k"
DEFAULT_TEXT_MODEL = "xlm-roberta-large"


@dataclass(frozen=True)
class ExtractorConfig:
    """What to run and how. Both towers export the same `layer` index.

    `layer` counts hidden states the way the encoders expose them: 0 is
    the pre-transformer embedding output, the depth of the stack is the
    final layer, and negative values index from the end (-1, the
    default, is the final hidden layer whatever the depth).
    """

    speech_model_id: str = DEFAULT_SPEECH_MODEL
    text_model_id: str = DEFAULT_TEXT_MODEL
    layer: int = -1
    device: str = "cpu"
    include_special_tokens: bool = False
    normalize_audio: bool = True
    workers: int = 1

    def __post_init__(self):
        if not self.speech_model_id:
            raise ExtractionError("speech_model_id must be non-empty")
        if not self.text_model_id:
            raise ExtractionError("text_model_id must be non-empty")
        if self.workers < 1:
            raise ExtractionError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class Job:
    """One utterance to extract: where its audio lives and what the ASR said."""

    id: str
    audio: str
    hypothesis: str
    speaker: str = "unknown"
    split: str = "test"
    reference: str | None = None
    token_logprobs: list[float] | None = None


@dataclass
class ExtractionResult:
    rows: list[dict]
    skipped: list[tuple[str, str]]  # (id, reason)
    failed: list[tuple[str, str]]  # (id, reason)
    manifest_path: str


# -- job list --------------------------------------------------------------


def read_jobs(path, default_split: str = "test") -> list[Job]:
    """Parse the extraction job list: JSONL rows naming audio + hypothesis.

    Required keys: id, audio, hypothesis. Optional: speaker, split,
    reference, token_logprobs. Relative audio paths resolve against the
    job file's directory. A malformed job file is a caller mistake and
    fails the whole run, unlike a bad audio file, which only fails its
    own record.
    """
    if default_split not in SPLITS:
        raise ExtractionError(f"default split must be one of {SPLITS}, got {default_split!r}")
    base_dir = Path(path).parent
    jobs: list[Job] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ExtractionError(f"jobs line {line_no}: invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ExtractionError(f"jobs line {line_no}: expected a JSON object")
            jobs.append(_parse_job(obj, line_no, base_dir, default_split, seen))
    return jobs


def _parse_job(obj: dict, line_no: int, base_dir: Path, default_split: str, seen: dict) -> Job:
    for key in ("id", "audio", "hypothesis"):
        if key not in obj:
            raise ExtractionError(f"jobs line {line_no}: missing required key {key!r}")
        if not isinstance(obj[key], str):
            raise ExtractionError(f"jobs line {line_no}: {key!r} must be a string")
    job_id = obj["id"]
    if not _ID_OK.match(job_id):
        raise ExtractionError(
            f"jobs line {line_no}: id {job_id!r} is not a safe file name "
            "(letters, digits, dot, dash, underscore)"
        )
    if job_id in seen:
        raise ExtractionError(
            f"jobs line {line_no}: duplicate id {job_id!r} (first seen on line {seen[job_id]})"
        )
    seen[job_id] = line_no
    speaker = obj.get("speaker", "unknown")
    if not isinstance(speaker, str) or not speaker:
        raise ExtractionError(f"jobs line {line_no}: speaker must be a non-empty string")
    split = obj.get("split", default_split)
    if split not in SPLITS:
        raise ExtractionError(f"jobs line {line_no}: split must be one of {SPLITS}, got {split!r}")
    reference = obj.get("reference")
    if reference is not None and not isinstance(reference, str):
        raise ExtractionError(f"jobs line {line_no}: reference must be a string or null")
    logprobs = obj.get("token_logprobs")
    if logprobs is not None:
        if not isinstance(logprobs, list) or any(
            not isinstance(v, (int, float)) or isinstance(v, bool) for v in logprobs
        ):
            raise ExtractionError(f"jobs line {line_no}: token_logprobs must be a list of numbers")
        logprobs = [float(v) for v in logprobs]
    audio_path = obj["audio"]
    if not Path(audio_path).is_absolute():
        audio_path = str(base_dir / audio_path)
    return Job(
        id=job_id,
        audio=audio_path,
        hypothesis=obj["hypothesis"],
        speaker=speaker,
        split=split,
        reference=reference,
        token_logprobs=logprobs,
    )


# -- feature files ---------------------------------------------------------


def write_few1(values: np.ndarray, path) -> None:
    """Write one frames x dim float32 matrix in the estimator's format.

    A 12-byte header (magic, dim, frames, little-endian u32) followed by
    the row-major float32 payload. Written here from the documented
    layout rather than through the estimator package: the bytes are the
    interface, and an independent writer is what makes reading them back
    with the estimator's loader a meaningful check.
    """
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ExtractionError(
            f"feature matrix must be frames x dim with both >= 1, got shape {tuple(np.shape(values))}"
        )
    if not np.all(np.isfinite(arr)):
        raise ExtractionError("feature matrix contains non-finite values")
    frames, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, dim, frames))
        fh.write(arr.tobytes())


# -- encoders --------------------------------------------------------------


def resolve_layer(layer: int, n_layers: int) -> int:
    """Map a possibly negative layer index onto [0, n_layers].

    Hidden states run from index 0 (embedding output) to n_layers (final
    layer), so a stack of depth L exposes L + 1 export points.
    """
    index = layer if layer >= 0 else n_layers + 1 + layer
    if not 0 <= index <= n_layers:
        raise ExtractionError(f"layer {layer} is out of range for a depth-{n_layers} encoder")
    return index


class Encoders:
    """Both towers loaded, in eval mode, with their export layers resolved."""

    def __init__(self, cfg: ExtractorConfig):
        self.cfg = cfg
        try:
            self.speech_model = AutoModel.from_pretrained(cfg.speech_model_id)
            self.text_model = AutoModel.from_pretrained(cfg.text_model_id)
            self.tokenizer = AutoTokenizer.from_pretrained(cfg.text_model_id)
        except Exception as exc:  # transformers raises a zoo of types here
            raise ExtractionError(f"loading encoders failed: {exc}") from exc
        self.speech_model.eval().to(cfg.device)
        self.text_model.eval().to(cfg.device)
        self.speech_layer = resolve_layer(cfg.layer, self.speech_model.config.num_hidden_layers)
        self.text_layer = resolve_layer(cfg.layer, self.text_model.config.num_hidden_layers)

    def speech_features(self, waveform: np.ndarray) -> np.ndarray:
        """Frame-level embeddings for one waveform, frames x hidden float32."""
        x = torch.from_numpy(np.ascontiguousarray(waveform, dtype=np.float32))
        with torch.inference_mode():
            out = self.speech_model(
                input_values=x.unsqueeze(0).to(self.cfg.device), output_hidden_states=True
            )
        return self._checked(out.hidden_states[self.speech_layer][0], self.speech_model)

    def text_features(self, text: str) -> np.ndarray:
        """Token-level embeddings; special positions dropped unless configured in."""
        enc = self.tokenizer(text, return_tensors="pt", return_special_tokens_mask=True)
        special = enc["special_tokens_mask"][0].bool()
        with torch.inference_mode():
            out = self.text_model(
                input_ids=enc["input_ids"].to(self.cfg.device),
                attention_mask=enc["attention_mask"].to(self.cfg.device),
                output_hidden_states=True,
            )
        h = out.hidden_states[self.text_layer][0]
        if not self.cfg.include_special_tokens:
            h = h[~special]
        if h.shape[0] == 0:
            raise SkipRecord("hypothesis tokenizes to special tokens only")
        return self._checked(h, self.text_model)

    @staticmethod
    def _checked(h: torch.Tensor, model) -> np.ndarray:
        # The header dim is the contract; catch a wrong hidden-state pick here
        # rather than miles downstream in the estimator.
        if h.shape[-1] != model.config.hidden_size:
            raise ExtractionError(
                f"encoder emitted dim {h.shape[-1]}, config promises {model.config.hidden_size}"
            )
        return h.to(torch.float32).cpu().numpy()


# -- the run ---------------------------------------------------------------


def extract(jobs: Sequence[Job], cfg: ExtractorConfig, out_dir, log=None) -> ExtractionResult:
    """Run the encoders over every job; write features, manifest, error log.

    One record's failure (unreadable audio, an encoder error on that
    input) is charged to that record alone and logged; the run fails as
    a whole only when the encoders cannot load or the output directory
    cannot be created. Feature files land under <out_dir>/features/, the
    manifest at <out_dir>/manifest.jsonl with paths relative to itself,
    and per-record failures in <out_dir>/errors.log (written only when
    there are any).

    Workers are threads: torch releases the GIL inside its kernels, and
    processes would each reload the encoders. Each record writes only
    its own two feature files; the manifest and error log are written
    once by the caller's thread after all workers finish, so every file
    has exactly one writer.
    """
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    say = log if log is not None else lambda msg: print(msg, file=sys.stderr)
    enc = Encoders(cfg)
    provenance = {
        "speech_model": cfg.speech_model_id,
        "text_model": cfg.text_model_id,
        "speech_layer": enc.speech_layer,
        "text_layer": enc.text_layer,
    }

    def one(job: Job) -> tuple[str, object]:
        if not job.hypothesis.strip():
            return ("skip", "empty hypothesis")
        try:
            wav = audio.load_wav(job.audio)
            speech = enc.speech_features(audio.normalize(wav) if cfg.normalize_audio else wav)
            text = enc.text_features(job.hypothesis)
            speech_rel = f"features/{job.id}.speech.few"
            text_rel = f"features/{job.id}.text.few"
            write_few1(speech, out / speech_rel)
            write_few1(text, out / text_rel)
        except SkipRecord as exc:
            return ("skip", str(exc))
        except Exception as exc:
            return ("fail", f"{type(exc).__name__}: {exc}")
        row = {
            "id": job.id,
            "speaker": job.speaker,
            "duration_sec": len(wav) / float(audio.TARGET_RATE),
            "hypothesis": job.hypothesis,
            "speech_feat": speech_rel,
            "text_feat": text_rel,
            "split": job.split,
        }
        if job.reference is not None:
            row["reference"] = job.reference
        if job.token_logprobs is not None:
            row["token_logprobs"] = job.token_logprobs
        # The estimator's loader ignores keys it does not know, so provenance
        # rides on every row and survives downstream merging and filtering.
        row["extractor"] = provenance
        return ("ok", row)

    if cfg.workers == 1:
        outcomes = [one(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(one, jobs))

    rows: list[dict] = []
    skipped: list[tuple[str, str]] = []
    failed: list[tuple[str, str]] = []
    for job, (kind, payload) in zip(jobs, outcomes):
        if kind == "ok":
            rows.append(payload)
        elif kind == "skip":
            skipped.append((job.id, payload))
            say(f"warning: {job.id}: skipped ({payload})")
        else:
            failed.append((job.id, payload))
            say(f"error: {job.id}: {payload}")

    manifest_path = out / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    if failed:
        with open(out / "errors.log", "w", encoding="utf-8") as fh:
            for job_id, reason in failed:
                fh.write(f"{job_id}\t{reason}\n")
    return ExtractionResult(rows=rows, skipped=skipped, failed=failed, manifest_path=str(manifest_path))
