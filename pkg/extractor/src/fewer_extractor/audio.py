"""WAV loading, deliberately minimal.

Only uncompressed PCM WAV at 16 kHz mono is accepted: that is what the
speech encoders were trained on, and resampling or format conversion
belongs in whatever produced the audio, not here. The stdlib reader
keeps the dependency surface at zero and fails loudly on anything else.
"""

from __future__ import annotations

import wave

import numpy as np

from .errors import ExtractionError

TARGET_RATE = 16_000

_WIDTH_DTYPES = {1: np.dtype("u1"), 2: np.dtype("<i2"), 4: np.dtype("<i4")}


def load_wav(path) -> np.ndarray:
    """Read a mono 16 kHz PCM WAV into float32 samples in [-1, 1]."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            rate = wf.getframerate()
            width = wf.getsampwidth()
            n_frames = wf.getnframes()
            payload = wf.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise ExtractionError(f"{path}: not a readable WAV file: {exc}") from exc
    if channels != 1:
        raise ExtractionError(f"{path}: expected mono audio, found {channels} channels")
    if rate != TARGET_RATE:
        raise ExtractionError(f"{path}: expected {TARGET_RATE} Hz audio, found {rate}")
    if width not in _WIDTH_DTYPES:
        raise ExtractionError(f"{path}: unsupported sample width ({width} bytes)")
    if n_frames < 1:
        raise ExtractionError(f"{path}: no audio frames")
    raw = np.frombuffer(payload, dtype=_WIDTH_DTYPES[width])
    if width == 1:
        # 8-bit WAV is unsigned with its zero at 128, unlike the wider widths.
        return (raw.astype(np.float32) - 128.0) / 128.0
    return raw.astype(np.float32) / float(2 ** (8 * width - 1))


def normalize(x: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance scaling of one utterance.

    The large speech encoders expect this; their smaller siblings were
    trained on raw waveforms, which is why it is a config switch rather
    than unconditional.
    """
    return ((x - x.mean()) / np.sqrt(x.var() + 1e-7)).astype(np.float32)
