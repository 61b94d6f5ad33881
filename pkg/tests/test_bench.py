"""Tests for the timing harness: RTF arithmetic, staging, comparisons."""

import numpy as np
import pytest

from fewer.bench import (
    Comparison,
    TimingReport,
    bench_estimator,
    compare,
    comparison_table,
    dataset_fingerprint,
    real_time_factor,
    timing_json,
    timing_table,
    _aggregate,
    _feedforward,
)
from fewer.dataset import FeatureSequence, UtteranceRecord, write_features
from fewer.errors import DataError, ParameterError
from fewer.model import estimate, init_model


def make_dataset(tmp_path, n=3, speech_dim=6, text_dim=4, seed=0):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        speech = FeatureSequence(
            speech_dim, 8 + i, rng.normal(size=(8 + i, speech_dim)).astype(np.float32)
        )
        text = FeatureSequence(
            text_dim, 3 + i, rng.normal(size=(3 + i, text_dim)).astype(np.float32)
        )
        s_path = tmp_path / f"u{i}.speech.few"
        t_path = tmp_path / f"u{i}.text.few"
        write_features(speech, s_path)
        write_features(text, t_path)
        records.append(
            UtteranceRecord(
                id=f"u{i}",
                speaker=f"s{i % 2}",
                duration_sec=2.0 + i,
                hypothesis="a b c",
                speech_feat=str(s_path),
                text_feat=str(t_path),
                split="test",
            )
        )
    return records


def report_with(total, load=0.0, agg=0.0, ff=0.0, audio=5223.0, tag="h", name="avg_pool"):
    return TimingReport(
        aggregator=name,
        n_utterances=10,
        stage_seconds={"feature_load": load, "aggregation": agg, "feedforward": ff},
        total_seconds=total,
        audio_total_seconds=audio,
        rtf=total / audio,
        dataset_hash=tag,
        warmup=2,
    )


class TestRealTimeFactor:
    def test_pooled_total(self):
        assert real_time_factor(5.42, 5223.0) == pytest.approx(0.001038, abs=1e-6)

    def test_recurrent_total(self):
        assert real_time_factor(18.64, 5223.0) == pytest.approx(0.003569, abs=1e-6)

    def test_zero_audio(self):
        with pytest.raises(DataError):
            real_time_factor(1.0, 0.0)

    def test_negative_compute(self):
        with pytest.raises(DataError):
            real_time_factor(-0.1, 10.0)


class TestFingerprint:
    def test_stable(self, tmp_path):
        records = make_dataset(tmp_path)
        assert dataset_fingerprint(records) == dataset_fingerprint(records)

    def test_sensitive_to_ids(self, tmp_path):
        records = make_dataset(tmp_path)
        renamed = [
            UtteranceRecord(
                id="other",
                speaker=r.speaker,
                duration_sec=r.duration_sec,
                hypothesis=r.hypothesis,
                speech_feat=r.speech_feat,
                text_feat=r.text_feat,
                split=r.split,
            )
            for r in records
        ]
        assert dataset_fingerprint(records) != dataset_fingerprint(renamed)

    def test_sensitive_to_file_size(self, tmp_path):
        records = make_dataset(tmp_path)
        before = dataset_fingerprint(records)
        extra = FeatureSequence(6, 30, np.zeros((30, 6), dtype=np.float32))
        write_features(extra, records[0].speech_feat)
        assert dataset_fingerprint(records) != before


class TestBenchEstimator:
    def test_report_shape(self, tmp_path):
        records = make_dataset(tmp_path)
        model = init_model("avg_pool", 6, 4, seed=1)
        report = bench_estimator(model, records, warmup=1)
        assert report.n_utterances == 3
        assert report.aggregator == "avg_pool"
        assert set(report.stage_seconds) == {"feature_load", "aggregation", "feedforward"}
        assert all(v >= 0.0 for v in report.stage_seconds.values())
        assert report.total_seconds >= sum(report.stage_seconds.values()) - 1e-9
        assert report.audio_total_seconds == pytest.approx(2.0 + 3.0 + 4.0)
        assert report.rtf == report.total_seconds / report.audio_total_seconds
        assert report.estimator_seconds == pytest.approx(
            report.stage_seconds["aggregation"] + report.stage_seconds["feedforward"]
        )

    def test_bilstm_runs(self, tmp_path):
        records = make_dataset(tmp_path)
        model = init_model("bilstm", 6, 4, seed=1)
        report = bench_estimator(model, records, warmup=0)
        assert report.aggregator == "bilstm"
        assert report.total_seconds > 0

    def test_empty_dataset(self):
        model = init_model("avg_pool", 6, 4, seed=1)
        with pytest.raises(DataError):
            bench_estimator(model, [], warmup=0)

    def test_negative_warmup(self, tmp_path):
        records = make_dataset(tmp_path)
        model = init_model("avg_pool", 6, 4, seed=1)
        with pytest.raises(ParameterError):
            bench_estimator(model, records, warmup=-1)

    def test_batching_not_supported(self, tmp_path):
        records = make_dataset(tmp_path)
        model = init_model("avg_pool", 6, 4, seed=1)
        with pytest.raises(ParameterError):
            bench_estimator(model, records, batch_size=2)

    @pytest.mark.parametrize("agg", ["avg_pool", "bilstm"])
    def test_staged_pipeline_matches_estimator(self, tmp_path, agg):
        # the benchmark must time the real computation, not a lookalike
        records = make_dataset(tmp_path)
        model = init_model(agg, 6, 4, seed=7)
        from fewer.dataset import load_features_for

        for r in records:
            speech, text = load_features_for(r)
            staged = _feedforward(model, _aggregate(model, speech, text))
            assert staged == pytest.approx(estimate(model, speech, text), rel=1e-12)


class TestCompare:
    def test_identical_reports(self):
        a = report_with(5.42, load=1.0, agg=0.5, ff=3.0)
        assert compare(a, a).total_ratio == pytest.approx(1.0)
        assert compare(a, a).total_reduction == pytest.approx(0.0)

    def test_published_speedup(self):
        slow = report_with(18.64, agg=5.28, ff=3.0, name="bilstm")
        fast = report_with(5.42, agg=0.5, ff=3.0)
        cmp = compare(slow, fast)
        assert cmp.total_ratio == pytest.approx(18.64 / 5.42, rel=1e-12)
        assert cmp.total_ratio == pytest.approx(3.44, abs=0.005)
        assert cmp.total_reduction == pytest.approx(0.7092, abs=5e-4)

    def test_near_zero_denominator_reports_lower_bound(self):
        slow = report_with(18.64, agg=5.28, ff=3.0, name="bilstm")
        fast = report_with(5.42, agg=0.0, ff=3.0)
        cmp = compare(slow, fast)
        assert isinstance(cmp.stage_ratios["aggregation"], str)
        assert cmp.stage_ratios["aggregation"].startswith(">")
        assert float(cmp.stage_ratios["aggregation"][1:]) > 1e6
        # stages with real denominators still come back numeric
        assert cmp.stage_ratios["feedforward"] == pytest.approx(1.0)

    def test_dataset_mismatch(self):
        a = report_with(5.0, tag="aaaa")
        b = report_with(4.0, tag="bbbb")
        with pytest.raises(DataError, match="datasets"):
            compare(a, b)

    def test_estimator_ratio_excludes_feature_load(self):
        slow = report_with(20.0, load=10.0, agg=6.0, ff=2.0, name="bilstm")
        fast = report_with(14.0, load=10.0, agg=1.0, ff=1.0)
        assert compare(slow, fast).estimator_ratio == pytest.approx(4.0)


class TestRenderings:
    def test_json_keys(self):
        payload = timing_json(report_with(5.42, load=1.0, agg=0.5, ff=3.0))
        for key in (
            "aggregator",
            "n_utterances",
            "warmup",
            "stage_seconds",
            "estimator_seconds",
            "total_seconds",
            "audio_total_seconds",
            "rtf",
            "dataset_hash",
        ):
            assert key in payload
        assert payload["rtf"] == pytest.approx(5.42 / 5223.0)

    def test_timing_table_aligned(self):
        lines = timing_table(report_with(5.42, load=1.0, agg=0.5, ff=3.0)).split("\n")
        assert len({len(line) for line in lines}) == 1
        assert lines[0].strip() == "avg_pool"
        assert any(line.startswith("feature load") for line in lines)
        assert any(line.startswith("RTF") for line in lines)

    def test_comparison_table_content(self):
        slow = report_with(18.64, agg=5.28, ff=3.0, name="bilstm")
        fast = report_with(5.42, agg=0.0, ff=3.0)
        table = comparison_table(slow, fast)
        assert "bilstm" in table and "avg_pool" in table
        assert "3.44x" in table
        assert ">" in table
        assert "reduction: 70.92%" in table
