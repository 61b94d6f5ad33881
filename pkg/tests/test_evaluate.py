"""Tests for the reporting metrics and the assembled evaluation report."""

import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewer.errors import DataError, ParameterError
from fewer.evaluate import (
    EvalReport,
    assemble_report,
    full_report,
    histogram,
    histogram_csv,
    histogram_svg,
    pcc,
    per_speaker_csv,
    per_speaker_means,
    per_speaker_svg,
    report_json,
    report_table,
    rmse,
)
from fewer.training import mse_loss
from fewer.wer import ErrorCounts, ScoredPair

from oracles import pearson


def pair_with(wer, words, errors, duration=1.0, speaker="spk"):
    counts = ErrorCounts(
        substitutions=errors, insertions=0, deletions=0, reference_words=words
    )
    record = SimpleNamespace(
        id=f"u{speaker}{words}{errors}", speaker=speaker, duration_sec=duration
    )
    return ScoredPair(record=record, counts=counts, wer=wer)


class TestRmse:
    def test_identical_is_zero(self):
        assert rmse([0.1, 0.5, 0.9], [0.1, 0.5, 0.9]) == 0.0

    def test_opposite_corners(self):
        assert rmse([0.0, 1.0], [1.0, 0.0]) == 1.0

    def test_single_pair(self):
        assert rmse([0.2], [0.5]) == pytest.approx(0.3, rel=1e-12)

    def test_matches_loss_definition(self):
        targets = [0.1, 0.4, 0.8, 0.0, 1.0]
        estimates = [0.2, 0.3, 0.9, 0.1, 0.7]
        assert rmse(targets, estimates) == math.sqrt(mse_loss(estimates, targets))

    def test_accepts_out_of_range_estimates(self):
        # confidence scores run past 1; RMSE must not reject them
        assert rmse([0.5], [1.5]) == pytest.approx(1.0, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            rmse([0.1], [0.1, 0.2])

    def test_empty(self):
        with pytest.raises(DataError):
            rmse([], [])


class TestPcc:
    def test_perfect_positive(self):
        assert pcc([0.0, 0.5, 1.0], [0.0, 0.5, 1.0]) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_negative(self):
        assert pcc([0.0, 0.5, 1.0], [1.0, 0.5, 0.0]) == pytest.approx(-1.0, abs=1e-12)

    def test_known_value(self):
        assert pcc([0.0, 1.0, 2.0], [0.0, 2.0, 3.0]) == pytest.approx(0.9820, abs=1e-4)

    def test_matches_reference_formula(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(2, 40))
            xs = rng.normal(size=n).tolist()
            ys = (0.3 * np.asarray(xs) + rng.normal(size=n)).tolist()
            assert pcc(xs, ys) == pytest.approx(pearson(xs, ys), rel=1e-12)

    def test_affine_invariance(self):
        xs = [0.1, 0.7, 0.3, 0.9, 0.2]
        ys = [0.2, 0.5, 0.1, 0.8, 0.4]
        base = pcc(xs, ys)
        shifted = pcc([3.0 * x + 1.0 for x in xs], [0.5 * y - 2.0 for y in ys])
        assert shifted == pytest.approx(base, abs=1e-12)

    def test_zero_variance(self):
        with pytest.raises(DataError, match="variance"):
            pcc([0.5, 0.5, 0.5], [0.1, 0.2, 0.3])
        with pytest.raises(DataError, match="variance"):
            pcc([0.1, 0.2, 0.3], [0.5, 0.5, 0.5])

    def test_too_short(self):
        with pytest.raises(DataError):
            pcc([0.5], [0.5])

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            pcc([0.1, 0.2], [0.1])


class TestHistogram:
    def test_all_zero(self):
        counts = histogram([0.0] * 7)
        assert counts[0] == 7 and sum(counts) == 7 and len(counts) == 50

    def test_boundary_goes_up(self):
        # 0.02 is the *lower* edge of bin 1
        assert histogram([0.02])[1] == 1
        assert histogram([0.019999])[0] == 1

    def test_one_lands_in_last_bin(self):
        assert histogram([1.0])[-1] == 1

    def test_counts_sum_to_n(self):
        rng = np.random.default_rng(3)
        values = rng.uniform(0.0, 1.0, size=500).tolist()
        assert sum(histogram(values)) == 500

    def test_custom_width(self):
        counts = histogram([0.05, 0.15, 0.95], bin_width=0.1)
        assert len(counts) == 10
        assert counts[0] == 1 and counts[1] == 1 and counts[9] == 1

    def test_out_of_range(self):
        with pytest.raises(DataError):
            histogram([1.0001])
        with pytest.raises(DataError):
            histogram([-0.0001])

    def test_bad_width(self):
        with pytest.raises(ParameterError):
            histogram([0.5], bin_width=0.0)
        with pytest.raises(ParameterError):
            histogram([0.5], bin_width=0.03)

    @given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=60))
    @settings(max_examples=40, deadline=None)
    def test_permutation_invariant(self, values):
        assert histogram(values) == histogram(list(reversed(values)))


class TestPerSpeaker:
    def test_single_speaker_mean(self):
        rows = per_speaker_means([("a", 0.1, 0.2), ("a", 0.3, 0.4)])
        assert len(rows) == 1
        assert rows[0].mean_target == pytest.approx(0.2)
        assert rows[0].mean_estimate == pytest.approx(0.3)
        assert rows[0].count == 2

    def test_sorted_by_speaker(self):
        rows = per_speaker_means([("z", 0.1, 0.1), ("a", 0.2, 0.2), ("m", 0.3, 0.3)])
        assert [r.speaker for r in rows] == ["a", "m", "z"]

    def test_counts_cover_input(self):
        triples = [(f"s{i % 3}", 0.1, 0.1) for i in range(11)]
        rows = per_speaker_means(triples)
        assert sum(r.count for r in rows) == 11

    def test_empty(self):
        with pytest.raises(DataError):
            per_speaker_means([])


class TestFullReport:
    def test_weighted_gap_fixture(self):
        # corpus rate 1088/10000, estimates averaging 0.1039 by duration
        scored = [
            pair_with(0.2, words=5000, errors=1000, duration=1.0, speaker="a"),
            pair_with(0.0176, words=5000, errors=88, duration=1.0, speaker="b"),
        ]
        report = full_report(scored, [0.15, 0.0578])
        assert report.wer_wrd == pytest.approx(0.1088, rel=1e-12)
        assert report.est_dur == pytest.approx(0.1039, rel=1e-12)
        assert report.werr == pytest.approx(abs(0.1088 - 0.1039) / 0.1088, rel=1e-9)
        assert report.werr == pytest.approx(0.0450, abs=1e-4)

    def test_perfect_estimates(self):
        scored = [
            pair_with(0.2, words=10, errors=2, duration=10.0, speaker="a"),
            pair_with(0.0, words=10, errors=0, duration=30.0, speaker="b"),
        ]
        report = full_report(scored, [0.2, 0.0])
        assert report.rmse == 0.0
        assert report.pcc == pytest.approx(1.0, abs=1e-12)
        assert report.wer_wrd == pytest.approx(0.1)
        assert report.est_dur == pytest.approx(0.05)
        assert report.werr == pytest.approx(0.5)
        assert report.count == 2

    def test_estimate_histogram_clips(self):
        scored = [
            pair_with(0.1, words=10, errors=1, speaker="a"),
            pair_with(0.5, words=10, errors=5, speaker="b"),
        ]
        report = full_report(scored, [1.37, -0.2])
        assert report.estimate_histogram[-1] == 1
        assert report.estimate_histogram[0] == 1
        # raw values still feed the error metric
        assert report.rmse == pytest.approx(rmse([0.1, 0.5], [1.37, -0.2]), rel=1e-12)

    def test_target_histogram_counts(self):
        scored = [pair_with(0.0, words=10, errors=0, speaker=f"s{i}") for i in range(4)]
        scored.append(pair_with(0.5, words=10, errors=5, speaker="x"))
        report = full_report(scored, [0.0, 0.1, 0.2, 0.3, 0.4])
        assert report.target_histogram[0] == 4
        assert report.target_histogram[25] == 1
        assert sum(report.target_histogram) == 5

    def test_empty(self):
        with pytest.raises(DataError):
            full_report([], [])

    def test_misaligned(self):
        scored = [pair_with(0.1, words=10, errors=1)]
        with pytest.raises(DataError):
            full_report(scored, [0.1, 0.2])

    def test_count_free_assembly_has_no_word_columns(self):
        report = assemble_report(
            targets=[0.1, 0.3],
            estimates=[0.2, 0.25],
            durations=[2.0, 3.0],
            speakers=["a", "b"],
        )
        assert report.wer_wrd is None
        assert report.werr is None
        assert report.est_dur == pytest.approx((0.2 * 2 + 0.25 * 3) / 5)


def small_report() -> EvalReport:
    scored = [
        pair_with(0.2, words=10, errors=2, duration=2.0, speaker="b"),
        pair_with(0.1, words=10, errors=1, duration=4.0, speaker="a"),
        pair_with(0.0, words=10, errors=0, duration=1.0, speaker="a"),
    ]
    return full_report(scored, [0.25, 0.05, 0.02])


class TestRenderings:
    def test_json_round_trips_fields(self):
        report = small_report()
        payload = report_json(report)
        assert payload["count"] == 3
        assert payload["rmse"] == report.rmse
        assert payload["werr"] == report.werr
        assert len(payload["target_histogram"]) == 50
        assert payload["per_speaker"][0]["speaker"] == "a"
        assert payload["per_speaker"][0]["count"] == 2

    def test_json_none_for_count_free(self):
        report = assemble_report([0.1, 0.3], [0.2, 0.25], [1.0, 1.0], ["a", "b"])
        payload = report_json(report)
        assert payload["wer_wrd"] is None and payload["werr"] is None

    def test_table_layout(self):
        table = report_table(small_report())
        head, row = table.split("\n")
        assert len(head) == len(row)
        for column in ("RMSE", "PCC", "WER_wrd (%)", "EstWER_dur (%)", "WERR (%)"):
            assert column in head

    def test_table_percent_scaling(self):
        report = small_report()
        row = report_table(report).split("\n")[1]
        assert f"{100 * report.wer_wrd:.2f}" in row

    def test_table_dashes_without_counts(self):
        report = assemble_report([0.1, 0.3], [0.2, 0.25], [1.0, 1.0], ["a", "b"])
        assert "-" in report_table(report).split("\n")[1]

    def test_histogram_csv_shape(self):
        lines = histogram_csv(small_report()).strip().split("\n")
        assert lines[0] == "bin_low,bin_high,targets,estimates"
        assert len(lines) == 51
        assert lines[1].startswith("0.0000,0.0200,")
        assert lines[-1].startswith("0.9800,1.0000,")

    def test_per_speaker_csv_shape(self):
        lines = per_speaker_csv(small_report()).strip().split("\n")
        assert lines[0] == "speaker,mean_target,mean_estimate,count"
        assert lines[1].startswith("a,")
        assert lines[2].startswith("b,")

    def test_svgs_are_well_formed(self):
        report = small_report()
        for text in (histogram_svg(report), per_speaker_svg(report)):
            assert text.startswith("<svg ")
            assert text.rstrip().endswith("</svg>")
            assert text.count("<rect") >= 2

    def test_histogram_svg_bar_count(self):
        report = small_report()
        # background + 2 bars per bin
        assert histogram_svg(report).count("<rect") == 1 + 2 * 50
