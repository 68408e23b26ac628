import json

import numpy as np
import pytest
from sklearn.metrics import f1_score

from ..turntaking.evaluation import (ConfusionMatrix, EvalReport, confusion_from_labels,
                                     distribution_metrics, evaluate, evaluate_oracle,
                                     parse_combos, run_ablation)
from ..turntaking.models import Action, ConfigError, DataError, ModalityMask
from ..turntaking.numeric import make_rng
from ..turntaking.reporting import (format_markdown, format_table, read_reports, reports_frame,
                                    write_reports)
from .conftest import make_sample


def zero_heads(bundle):
    """Bundle whose every prediction head outputs zero logits (uniform, argmax KEEP)."""
    return bundle.with_arrays({k: np.zeros_like(v) for k, v in bundle.arrays().items()
                               if ".head." in k or k.startswith("fusion.head.")})


class TestConfusionMatrix:

    def test_worked_example(self):
        cm = ConfusionMatrix(np.array([[2, 0, 0], [1, 1, 0], [0, 0, 1]]))
        assert cm.total == 5
        assert cm.accuracy == pytest.approx(0.8)
        assert cm.f1(Action.KEEP) == pytest.approx(0.8)
        assert cm.f1(Action.TURN) == pytest.approx(2.0 / 3.0)
        assert cm.f1(Action.BACKCHANNEL) == pytest.approx(1.0)

    def test_perfect_predictions(self):
        cm = confusion_from_labels([0, 1, 2, 0], [0, 1, 2, 0])
        assert cm.metrics() == {"accuracy": 1.0, "f1_keep": 1.0, "f1_turn": 1.0,
                                "f1_bc": 1.0, "macro_f1": 1.0}

    def test_absent_class_scores_zero(self):
        cm = confusion_from_labels([0, 0, 1], [0, 0, 1])
        assert cm.f1(Action.BACKCHANNEL) == 0.0

    def test_matches_sklearn(self):
        rng = make_rng(0)
        y_true = rng.integers(0, 3, size=200)
        y_pred = rng.integers(0, 3, size=200)
        cm = confusion_from_labels(y_true, y_pred)
        expected = f1_score(y_true, y_pred, labels=[0, 1, 2], average=None, zero_division=0)
        assert np.allclose([cm.f1(a) for a in Action], expected)

    def test_invariant_to_sample_order(self):
        rng = make_rng(1)
        y_true = rng.integers(0, 3, size=50)
        y_pred = rng.integers(0, 3, size=50)
        order = rng.permutation(50)
        a = confusion_from_labels(y_true, y_pred)
        b = confusion_from_labels(y_true[order], y_pred[order])
        assert np.array_equal(a.counts, b.counts)

    def test_validation(self):
        with pytest.raises(DataError):
            ConfusionMatrix(np.zeros((2, 2)))
        with pytest.raises(DataError):
            confusion_from_labels([0, 1], [0])

    def test_epoch_metrics_from_probabilities(self):
        metrics = distribution_metrics([0, 1], [np.array([0.9, 0.05, 0.05]), np.array([0.6, 0.3, 0.1])])
        assert metrics["accuracy"] == 0.5


class TestEvaluate:

    def test_empty_dataset(self, tiny_bundle):
        with pytest.raises(DataError):
            evaluate(tiny_bundle, [], ModalityMask.full())

    def test_unlabeled_sample(self, tiny_bundle):
        sample = make_sample(make_rng(2), label=None)
        with pytest.raises(DataError):
            evaluate(tiny_bundle, [sample], ModalityMask.full())

    def test_uniform_model_predicts_keep(self, tiny_bundle):
        rng = make_rng(3)
        labels = [Action.KEEP, Action.KEEP, Action.TURN, Action.BACKCHANNEL]
        samples = [make_sample(rng, label=lab) for lab in labels]
        model = zero_heads(tiny_bundle)
        for mask in ModalityMask.all_nonempty():
            report = evaluate(model, samples, mask)
            assert report.accuracy == pytest.approx(0.5)
            assert report.f1_turn == 0.0 and report.f1_bc == 0.0
            assert report.samples == 4

    def test_missing_modalities_are_counted(self, tiny_bundle):
        rng = make_rng(4)
        samples = [make_sample(rng), make_sample(rng, video=False)]
        report = evaluate(tiny_bundle, samples, ModalityMask.full(), "ckpt")
        assert report.dropped == 1
        assert report.checkpoint_id == "ckpt"

    def test_sample_without_requested_modality(self, tiny_bundle):
        sample = make_sample(make_rng(5), audio=False)
        with pytest.raises(DataError):
            evaluate(tiny_bundle, [sample], ModalityMask.of("A"))

    def test_report_record_is_json_ready(self, tiny_bundle, tiny_sample):
        record = evaluate(tiny_bundle, [tiny_sample], ModalityMask.of("TA"), "c1").to_record()
        assert json.loads(json.dumps(record)) == record
        assert record["label"] == "Text+Audio"
        assert record["macro_f1"] == pytest.approx((record["f1_keep"] + record["f1_turn"] + record["f1_bc"]) / 3)


class TestAblation:

    def test_all_seven_rows_from_one_model(self, synth_bundle, synth_samples):
        samples = synth_samples[:60]
        reports = run_ablation(synth_bundle, samples, parse_combos("all"), "m")
        assert [r.modalities.code for r in reports] == ["T", "A", "V", "TA", "TV", "AV", "TAV"]
        for r in reports:
            single = evaluate(synth_bundle, samples, r.modalities, "m")
            assert single.to_record() == r.to_record()

    def test_empty_combination_list(self, tiny_bundle, tiny_sample):
        with pytest.raises(DataError):
            run_ablation(tiny_bundle, [tiny_sample], [])

    def test_parse_combos(self):
        assert [m.code for m in parse_combos("T, ta,TAV")] == ["T", "TA", "TAV"]
        assert len(parse_combos(None)) == 7
        with pytest.raises(ConfigError):
            parse_combos("TX")

    def test_oracle_report(self, synth_cfg, synth_samples):
        report = evaluate_oracle(synth_samples, ModalityMask.full(), synth_cfg)
        assert report.checkpoint_id == "bayes-oracle"
        assert 0.0 <= report.accuracy <= 1.0
        assert report.samples == len(synth_samples)


class TestReporting:

    def setup_method(self):
        cm = ConfusionMatrix(np.array([[2, 0, 0], [1, 1, 0], [0, 0, 1]]))
        self.reports = [EvalReport.from_confusion(m, cm, "model") for m in ModalityMask.all_nonempty()]

    def test_frame_columns(self):
        frame = reports_frame(self.reports)
        assert list(frame.columns) == ["Modalities", "Accuracy", "F1 Keep", "F1 Turn", "F1 BC",
                                       "Macro F1", "Samples"]
        assert frame["Modalities"].tolist()[-1] == "Text+Audio+Video"

    def test_checkpoint_column_when_mixed(self):
        other = EvalReport.from_confusion(ModalityMask.full(), self.reports[0].confusion, "other")
        assert "Checkpoint" in reports_frame(self.reports + [other]).columns

    def test_table_text(self):
        text = format_table(self.reports, title="Ablation")
        assert text.splitlines()[0] == "Ablation"
        assert "0.800" in text and "Audio+Video" in text

    def test_markdown(self):
        text = format_markdown(self.reports)
        assert "**Checkpoint:** model" in text
        assert text.count("\n| ") == 8

    def test_write_and_read(self, tmp_path):
        path = str(tmp_path / "report.jsonl")
        table = write_reports(path, self.reports)
        assert table == str(tmp_path / "report.txt")
        records = read_reports(path)
        assert [r["modalities"] for r in records] == ["T", "A", "V", "TA", "TV", "AV", "TAV"]
        assert "Text+Audio+Video" in open(table).read()
