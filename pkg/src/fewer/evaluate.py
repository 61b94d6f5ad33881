"""Estimate-quality reporting: RMSE, PCC, weighted gaps, histograms, speakers.

full_report assembles everything for scored data (targets with
alignment counts). When targets exist without counts, assemble_report
builds the same shape minus the word-weighted columns, which then read
as absent in the JSON and the table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ParameterError
from .training import mean_squared_difference
from .wer import ScoredPair, weighted_estimate_by_duration, weighted_wer_by_words, werr

DEFAULT_BIN_WIDTH = 0.02


@dataclass(frozen=True)
class SpeakerRow:
    speaker: str
    mean_target: float
    mean_estimate: float
    count: int


@dataclass(frozen=True)
class EvalReport:
    rmse: float
    pcc: float
    wer_wrd: float | None
    est_dur: float
    werr: float | None
    bin_width: float
    target_histogram: list[int]
    estimate_histogram: list[int]
    per_speaker: list[SpeakerRow]
    count: int


def rmse(targets: Sequence[float], estimates: Sequence[float]) -> float:
    """Root mean squared difference. No range check: confidence-score
    estimates legitimately exceed 1."""
    return math.sqrt(mean_squared_difference(targets, estimates))


def pcc(targets: Sequence[float], estimates: Sequence[float]) -> float:
    """Pearson correlation from the definition, in float64."""
    if len(targets) != len(estimates):
        raise DataError(f"length mismatch: {len(targets)} vs {len(estimates)}")
    if len(targets) < 2:
        raise DataError("correlation needs at least two pairs")
    t = np.asarray(targets, dtype=np.float64)
    e = np.asarray(estimates, dtype=np.float64)
    tc = t - t.mean()
    ec = e - e.mean()
    denom_sq = float((tc * tc).sum()) * float((ec * ec).sum())
    if denom_sq == 0.0:
        raise DataError("correlation undefined: an argument has zero variance")
    return float((tc * ec).sum() / math.sqrt(denom_sq))


def histogram(values: Sequence[float], bin_width: float = DEFAULT_BIN_WIDTH) -> list[int]:
    """Counts over [k*w, (k+1)*w) bins spanning [0,1], last bin closed."""
    if not 0.0 < bin_width <= 1.0:
        raise ParameterError(f"bin_width must be in (0, 1], got {bin_width}")
    bins = round(1.0 / bin_width)
    if abs(bins * bin_width - 1.0) > 1e-9:
        raise ParameterError(f"bin_width {bin_width} does not evenly divide [0,1]")
    counts = [0] * bins
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise DataError(f"histogram values must lie in [0,1], got {v}")
        counts[min(int(v / bin_width), bins - 1)] += 1
    return counts


def per_speaker_means(rows: Iterable[tuple[str, float, float]]) -> list[SpeakerRow]:
    """Unweighted per-speaker averages of targets and estimates."""
    sums: dict[str, list[float]] = {}
    for speaker, target, estimate in rows:
        entry = sums.setdefault(speaker, [0.0, 0.0, 0])
        entry[0] += target
        entry[1] += estimate
        entry[2] += 1
    if not sums:
        raise DataError("per-speaker means need at least one utterance")
    return [
        SpeakerRow(speaker, t_sum / n, e_sum / n, n)
        for speaker, (t_sum, e_sum, n) in sorted(sums.items())
    ]


def assemble_report(
    targets: Sequence[float],
    estimates: Sequence[float],
    durations: Sequence[float],
    speakers: Sequence[str],
    wer_wrd: float | None = None,
    bin_width: float = DEFAULT_BIN_WIDTH,
) -> EvalReport:
    """Shared assembly for counted and count-free targets.

    The estimate histogram clips into [0,1] so out-of-range estimates
    land in the edge bins; rmse/pcc/weighting always use raw values.
    """
    n = len(targets)
    if not (n == len(estimates) == len(durations) == len(speakers)):
        raise DataError("targets, estimates, durations, and speakers must align")
    est_dur = weighted_estimate_by_duration(zip(estimates, durations))
    return EvalReport(
        rmse=rmse(targets, estimates),
        pcc=pcc(targets, estimates),
        wer_wrd=wer_wrd,
        est_dur=est_dur,
        werr=None if wer_wrd is None else werr(wer_wrd, est_dur),
        bin_width=bin_width,
        target_histogram=histogram(targets, bin_width),
        estimate_histogram=histogram([min(1.0, max(0.0, e)) for e in estimates], bin_width),
        per_speaker=per_speaker_means(zip(speakers, targets, estimates)),
        count=n,
    )


def full_report(
    scored: Sequence[ScoredPair], estimates: Sequence[float], bin_width: float = DEFAULT_BIN_WIDTH
) -> EvalReport:
    """All metrics for aligned scored pairs and their estimates."""
    if len(scored) != len(estimates):
        raise DataError(f"scored pairs ({len(scored)}) and estimates ({len(estimates)}) must align")
    if not scored:
        raise DataError("cannot evaluate an empty dataset")
    return assemble_report(
        targets=[p.wer for p in scored],
        estimates=list(estimates),
        durations=[p.record.duration_sec for p in scored],
        speakers=[p.record.speaker for p in scored],
        wer_wrd=weighted_wer_by_words(scored),
        bin_width=bin_width,
    )


# -- renderings ------------------------------------------------------------


def _pct(value: float | None) -> str:
    return "-" if value is None else f"{100 * value:.2f}"


def report_json(report: EvalReport) -> dict:
    return {
        "count": report.count,
        "rmse": report.rmse,
        "pcc": report.pcc,
        "wer_wrd": report.wer_wrd,
        "est_dur": report.est_dur,
        "werr": report.werr,
        "bin_width": report.bin_width,
        "target_histogram": report.target_histogram,
        "estimate_histogram": report.estimate_histogram,
        "per_speaker": [
            {
                "speaker": row.speaker,
                "mean_target": row.mean_target,
                "mean_estimate": row.mean_estimate,
                "count": row.count,
            }
            for row in report.per_speaker
        ],
    }


def report_table(report: EvalReport) -> str:
    headers = ["RMSE", "PCC", "WER_wrd (%)", "EstWER_dur (%)", "WERR (%)"]
    values = [
        f"{report.rmse:.4f}",
        f"{report.pcc:.4f}",
        _pct(report.wer_wrd),
        _pct(report.est_dur),
        _pct(report.werr),
    ]
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    head = "  ".join(f"{h:>{w}}" for h, w in zip(headers, widths))
    row = "  ".join(f"{v:>{w}}" for v, w in zip(values, widths))
    return head + "\n" + row


def histogram_csv(report: EvalReport) -> str:
    lines = ["bin_low,bin_high,targets,estimates"]
    for k, (t, e) in enumerate(zip(report.target_histogram, report.estimate_histogram)):
        low = k * report.bin_width
        high = (k + 1) * report.bin_width
        lines.append(f"{low:.4f},{high:.4f},{t},{e}")
    return "\n".join(lines) + "\n"


def per_speaker_csv(report: EvalReport) -> str:
    lines = ["speaker,mean_target,mean_estimate,count"]
    for row in report.per_speaker:
        lines.append(f"{row.speaker},{row.mean_target!r},{row.mean_estimate!r},{row.count}")
    return "\n".join(lines) + "\n"


def _svg_header(width: int, height: int) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]


def histogram_svg(report: EvalReport, width: int = 640, height: int = 320) -> str:
    """Static grouped bars: targets filled, estimates outlined."""
    margin = 40
    plot_w = width - 2 * margin
    plot_h = height - 2 * margin
    bins = len(report.target_histogram)
    peak = max(1, *report.target_histogram, *report.estimate_histogram)
    bar_w = plot_w / bins
    parts = _svg_header(width, height)
    for k, (t, e) in enumerate(zip(report.target_histogram, report.estimate_histogram)):
        x = margin + k * bar_w
        for value, style in ((t, 'fill="steelblue" fill-opacity="0.7"'), (e, 'fill="none" stroke="darkorange"')):
            h = plot_h * value / peak
            y = margin + plot_h - h
            parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" height="{h:.2f}" {style}/>')
    parts.append(
        f'<line x1="{margin}" y1="{margin + plot_h}" x2="{margin + plot_w}" y2="{margin + plot_h}" stroke="black"/>'
    )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = margin + plot_w * frac
        parts.append(
            f'<text x="{x:.2f}" y="{height - 12}" font-size="11" text-anchor="middle">{frac:.2f}</text>'
        )
    parts.append(
        f'<text x="{margin}" y="{margin - 10}" font-size="11">counts, peak {peak} '
        f"(filled: targets, outline: estimates)</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def per_speaker_svg(report: EvalReport, width: int = 640, height: int = 320) -> str:
    """Paired bars per speaker: mean target beside mean estimate."""
    margin = 40
    plot_w = width - 2 * margin
    plot_h = height - 2 * margin
    rows = report.per_speaker
    group_w = plot_w / max(1, len(rows))
    bar_w = group_w * 0.4
    peak = max(0.01, *(r.mean_target for r in rows), *(r.mean_estimate for r in rows))
    parts = _svg_header(width, height)
    for i, row in enumerate(rows):
        x0 = margin + i * group_w
        for j, (value, colour) in enumerate(((row.mean_target, "steelblue"), (row.mean_estimate, "darkorange"))):
            h = plot_h * value / peak
            y = margin + plot_h - h
            parts.append(
                f'<rect x="{x0 + j * bar_w:.2f}" y="{y:.2f}" width="{bar_w:.2f}" '
                f'height="{h:.2f}" fill="{colour}"/>'
            )
    parts.append(
        f'<line x1="{margin}" y1="{margin + plot_h}" x2="{margin + plot_w}" y2="{margin + plot_h}" stroke="black"/>'
    )
    parts.append(
        f'<text x="{margin}" y="{margin - 10}" font-size="11">mean WER per speaker, peak '
        f"{peak:.3f} (blue: target, orange: estimate)</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
