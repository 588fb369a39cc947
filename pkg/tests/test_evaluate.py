"""Evaluation reports: row scoring, aggregate math, inactive probing, and
the report files on disk."""

import json

import numpy as np
import pytest
import torch

from conftest import small_model_config
from tsekit import metrics
from tsekit.classifier import SoundEventClassifier
from tsekit.errors import ConfigError
from tsekit.evaluate import EvalReport, run_eval, summarize_rows
from tsekit.extractor import TargetSoundModel


def _row(example_id, active, sdri=None, atten=-5.0, labels=(0,), **extra):
    row = {
        "example_id": example_id, "role": "target", "labels": list(labels),
        "active": active, "atten_mix_db": atten, "detection_score": atten,
        "si_sdr_db": sdri, "sdri_db": sdri, "atten_src_db": None,
    }
    row.update(extra)
    return row


class TestSummarizeRows:
    def test_aggregates_by_hand(self):
        rows = [
            _row(0, True, sdri=4.0, atten=-2.0, labels=[0]),
            _row(1, True, sdri=8.0, atten=-3.0, labels=[1]),
            _row(2, False, atten=-25.0, labels=[2]),
            _row(3, False, atten=-35.0, labels=[0]),
        ]
        summary = summarize_rows(rows, {"tag": "x"})
        assert summary["meta"] == {"tag": "x"}
        assert summary["num_rows"] == 4
        assert summary["num_active"] == 2
        assert summary["num_inactive"] == 2
        assert summary["mean_sdri_db"] == pytest.approx(6.0)
        assert summary["per_class_sdri_db"] == {"0": 4.0, "1": 8.0}
        assert summary["mean_atten_mix_inactive_db"] == pytest.approx(-30.0)
        # inactive scores (-25, -35) all below active (-2, -3): perfect ranking
        assert summary["inactive_auc"] == pytest.approx(1.0)

    def test_multi_label_rows_count_for_each_class(self):
        rows = [_row(0, True, sdri=10.0, labels=[0, 1])]
        summary = summarize_rows(rows)
        assert summary["per_class_sdri_db"] == {"0": 10.0, "1": 10.0}

    def test_auc_needs_both_populations(self):
        assert "inactive_auc" not in summarize_rows([_row(0, True, sdri=1.0)])
        assert "inactive_auc" not in summarize_rows([_row(0, False)])

    def test_map_only_with_posteriors(self):
        plain = summarize_rows([_row(0, True, sdri=1.0)])
        assert "map" not in plain
        rows = [
            _row(0, True, sdri=1.0, labels=[0], posteriors=[0.9, 0.2]),
            _row(1, True, sdri=1.0, labels=[1], posteriors=[0.1, 0.8]),
        ]
        assert summarize_rows(rows)["map"] == pytest.approx(1.0)


class TestRunEval:
    def _model(self, clue_mode="class"):
        torch.manual_seed(0)
        model = TargetSoundModel(small_model_config(4, clue_mode))
        return model

    def test_row_population_and_probes(self, tiny_dataset):
        manifest = tiny_dataset["manifests"]["test"]
        report = run_eval(manifest, self._model(), "class",
                          vocabulary=tiny_dataset["vocabulary"], seed=1)
        targets = [r for r in report.rows if r["role"] == "target"]
        probes = [r for r in report.rows if r["role"] == "inactive_probe"]
        assert len(targets) == len(manifest)
        active_records = [r for r in manifest if not r.target_spec.inactive]
        assert len(probes) == len(active_records)  # 4 classes, 2 events: always an absent class
        for row, record in zip(targets, manifest):
            assert row["active"] == (not record.target_spec.inactive)
            assert row["labels"] == list(record.target_spec.labels)
            if row["active"]:
                assert row["si_sdr_db"] is not None and row["sdri_db"] is not None
                assert row["atten_src_db"] is not None
            else:
                assert row["si_sdr_db"] is None
            assert row["detection_score"] == row["atten_mix_db"]
        by_id = {r.mixture_path: r for r in manifest}
        for probe in probes:
            record = manifest.records[probe["example_id"]]
            assert not probe["active"]
            assert probe["labels"][0] not in record.active_classes

    def test_summary_recomputable_from_rows(self, tiny_dataset):
        report = run_eval(tiny_dataset["manifests"]["test"], self._model(), "class", seed=0)
        assert report.recompute_summary() == report.summary

    def test_meta_echo(self, tiny_dataset):
        report = run_eval(tiny_dataset["manifests"]["test"], self._model(), "class",
                          vocabulary=tiny_dataset["vocabulary"], seed=7,
                          meta={"checkpoint": "x.pt"})
        meta = report.summary["meta"]
        assert meta["clue_mode"] == "class"
        assert meta["seed"] == 7
        assert meta["num_records"] == len(tiny_dataset["manifests"]["test"])
        assert meta["checkpoint"] == "x.pt"
        assert meta["vocabulary"] == list(tiny_dataset["vocabulary"].names)

    def test_probe_rows_can_be_disabled(self, tiny_dataset):
        manifest = tiny_dataset["manifests"]["test"]
        report = run_eval(manifest, self._model(), "class", probe_inactive=False)
        assert len(report.rows) == len(manifest)

    def test_enroll_clue_mode(self, tiny_dataset):
        report = run_eval(tiny_dataset["manifests"]["test"], self._model("enroll"),
                          "enroll", seed=0)
        assert report.summary["num_rows"] > 0

    def test_mixed_clue_mode_rejected(self, tiny_dataset):
        with pytest.raises(ConfigError, match="class or enroll"):
            run_eval(tiny_dataset["manifests"]["test"], self._model("mixed"), "mixed")

    def test_classifier_adds_posteriors_and_map(self, tiny_dataset):
        torch.manual_seed(1)
        clf = SoundEventClassifier(4, channels=8)
        report = run_eval(tiny_dataset["manifests"]["test"], self._model(), "class",
                          classifier=clf, seed=0)
        active = [r for r in report.rows if r["active"]]
        assert all(len(r["posteriors"]) == 4 for r in active)
        assert "map" in report.summary

    def test_deterministic_given_seed(self, tiny_dataset):
        a = run_eval(tiny_dataset["manifests"]["test"], self._model(), "class", seed=3)
        b = run_eval(tiny_dataset["manifests"]["test"], self._model(), "class", seed=3)
        assert a.rows == b.rows


class TestReportFiles:
    def test_save_round_trip(self, tiny_dataset, tmp_path):
        torch.manual_seed(0)
        model = TargetSoundModel(small_model_config(4, "class"))
        report = run_eval(tiny_dataset["manifests"]["valid"], model, "class",
                          report_prefix=tmp_path / "run", write_csv=True)
        rows_path = tmp_path / "run.jsonl"
        summary_path = tmp_path / "run.summary.json"
        csv_path = tmp_path / "run.csv"
        assert rows_path.exists() and summary_path.exists() and csv_path.exists()
        rows = [json.loads(line) for line in rows_path.read_text().splitlines()]
        assert rows == report.rows
        assert json.loads(summary_path.read_text()) == report.summary
        header = csv_path.read_text().splitlines()[0]
        assert header.split(",")[:3] == ["example_id", "role", "labels"]
        assert len(csv_path.read_text().splitlines()) == len(report.rows) + 1

    def test_mean_aggregates_match_metric_functions(self, tiny_dataset):
        # the summary must agree with direct metric computation on the rows
        torch.manual_seed(0)
        model = TargetSoundModel(small_model_config(4, "class"))
        report = run_eval(tiny_dataset["manifests"]["valid"], model, "class", seed=0)
        active = [r for r in report.rows if r["active"]]
        inactive = [r for r in report.rows if not r["active"]]
        assert report.summary["mean_sdri_db"] == pytest.approx(
            float(np.mean([r["sdri_db"] for r in active])))
        if inactive:
            auc, _ = metrics.inactive_detection_auc(
                [r["detection_score"] for r in report.rows],
                [not r["active"] for r in report.rows],
            )
            assert report.summary["inactive_auc"] == pytest.approx(auc)


class TestEvalReport:
    def test_recompute_summary_uses_meta(self):
        report = EvalReport(rows=[_row(0, True, sdri=2.0)])
        report.summary = summarize_rows(report.rows, {"k": 1})
        again = report.recompute_summary()
        assert again == report.summary
