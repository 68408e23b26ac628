import io
import json
from unittest.mock import patch

import pytest

from ..turntaking import cli
from ..turntaking.checkpoint import load_checkpoint
from ..turntaking.models import NumericError
from ..turntaking.reporting import read_reports


def run(argv, env=None, stdin=""):
    out, err = io.StringIO(), io.StringIO()
    code = cli.run_command(argv, io.StringIO(stdin), out, err, env or {})
    return code, out.getvalue(), err.getvalue()


def error_record(err):
    lines = [line for line in err.splitlines() if line.startswith("{")]
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture
def manifest(tmp_path):
    path = str(tmp_path / "data.jsonl")
    code, _, _ = run(["gen", "--out", path, "--n-words", "150", "--n", "4", "--seed", "3"])
    assert code == 0
    return path


@pytest.fixture
def trained(tmp_path, manifest):
    uni = str(tmp_path / "uni.json")
    joint = str(tmp_path / "joint.json")
    code, _, err = run(["train-uni", "--manifest", manifest, "--checkpoint", uni, "--epochs", "1",
                        "--split", "train", "--test-fraction", "0.25"])
    assert code == 0, err
    code, _, err = run(["train-joint", "--manifest", manifest, "--init", uni, "--checkpoint", joint,
                        "--epochs", "1", "--split", "train", "--test-fraction", "0.25"])
    assert code == 0, err
    return uni, joint


class TestGen:

    def test_same_seed_is_byte_identical(self, tmp_path):
        paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
        for p in paths:
            code, out, _ = run(["gen", "--out", str(p), "--n-words", "100", "--seed", "5"])
            assert code == 0
            assert json.loads(out)["word_frames"] >= 100
        assert paths[0].read_bytes() == paths[1].read_bytes()
        assert (tmp_path / "a.hidden.jsonl").exists()

    def test_output_path_from_environment(self, tmp_path):
        target = tmp_path / "env.jsonl"
        code, _, _ = run(["gen", "--n-words", "50"], env={"MMF2F_OUT": str(target)})
        assert code == 0
        assert target.exists()

    def test_flag_beats_config_file(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"n_words": 40, "seed": 2}))
        _, from_file, _ = run(["gen", "--out", str(tmp_path / "a.jsonl"), "--config", str(config)])
        _, from_flag, _ = run(["gen", "--out", str(tmp_path / "b.jsonl"), "--config", str(config),
                               "--n-words", "80"])
        assert 40 <= json.loads(from_file)["word_frames"] < 80
        assert json.loads(from_flag)["word_frames"] >= 80

    def test_missing_out(self):
        code, _, err = run(["gen"])
        assert code == 2
        assert error_record(err)["error"] == "usage"


class TestErrors:

    def test_unknown_flag(self):
        code, _, err = run(["gen", "--bogus"])
        assert code == 2
        assert error_record(err)["error"] == "usage"

    def test_unknown_command(self):
        assert run(["fly"])[0] == 2

    def test_missing_manifest(self, tmp_path):
        code, _, err = run(["stats", "--manifest", str(tmp_path / "absent.jsonl")])
        assert code == 3
        assert error_record(err)["error"] == "missing_path"

    def test_unsupported_schema(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps({"schema_version": 7}) + "\n")
        code, _, err = run(["stats", "--manifest", str(path)])
        assert code == 3
        assert error_record(err)["error"] == "SchemaVersionError"

    def test_joint_without_stage_one(self, tmp_path, manifest):
        code, _, err = run(["train-joint", "--manifest", manifest, "--checkpoint", str(tmp_path / "j.json")])
        assert code == 3
        assert error_record(err)["error"] == "config"

    def test_numeric_failure(self, tmp_path, manifest):
        with patch.object(cli, "train_joint", side_effect=NumericError("loss is nan")):
            code, _, err = run(["train-joint", "--manifest", manifest, "--from-scratch",
                                "--checkpoint", str(tmp_path / "j.json"), "--epochs", "1"])
        assert code == 4
        assert error_record(err) == {"error": "numeric", "message": "loss is nan"}
        assert not (tmp_path / "j.json").exists()


class TestLabelAndStats:

    def test_label_leaves_input_untouched(self, tmp_path, manifest):
        before = open(manifest, "rb").read()
        target = str(tmp_path / "labeled.jsonl")
        code, out, _ = run(["label", "--manifest", manifest, "--out", target])
        assert code == 0
        assert open(manifest, "rb").read() == before
        assert "word_frames" in out

    def test_label_reproduces_generated_labels(self, tmp_path, manifest):
        target = str(tmp_path / "labeled.jsonl")
        code, _, err = run(["label", "--manifest", manifest, "--out", target])
        assert code == 0, err
        generated = [json.loads(line) for line in open(manifest, encoding="utf-8")]
        relabeled = [json.loads(line) for line in open(target, encoding="utf-8")]
        assert relabeled == generated
        assert any(w["label"] == "BACKCHANNEL" for rec in generated[1:] for w in rec["words"])

    def test_label_refuses_in_place(self, manifest):
        assert run(["label", "--manifest", manifest, "--out", manifest])[0] == 3

    def test_stats(self, manifest):
        code, out, _ = run(["stats", "--manifest", manifest])
        assert code == 0
        assert "conversations" in out


class TestPipeline:

    def test_stage_flags_in_checkpoints(self, trained):
        uni, joint = trained
        assert load_checkpoint(uni).stages["unimodal"] == ["T", "A", "V"]
        stages = load_checkpoint(joint).stages
        assert stages["joint"] is True and stages["dropout_p"] == 0.1

    def test_ablation_matches_single_evaluations(self, tmp_path, manifest, trained):
        _, joint = trained
        report = str(tmp_path / "ablation.jsonl")
        code, out, err = run(["ablate", "--manifest", manifest, "--checkpoint", joint, "--split", "test",
                              "--test-fraction", "0.25", "--combos", "all", "--report", report])
        assert code == 0, err
        rows = read_reports(report)
        assert [r["modalities"] for r in rows] == ["T", "A", "V", "TA", "TV", "AV", "TAV"]
        assert (tmp_path / "ablation.txt").exists()
        assert "Text+Audio+Video" in out
        for code_ in ("T", "TA"):
            single = str(tmp_path / f"eval_{code_}.jsonl")
            rc, _, _ = run(["eval", "--manifest", manifest, "--checkpoint", joint, "--split", "test",
                            "--test-fraction", "0.25", "--modalities", code_, "--report", single])
            assert rc == 0
            (record,) = read_reports(single)
            assert record == next(r for r in rows if r["modalities"] == code_)

    def test_oracle_rows(self, tmp_path, manifest, trained):
        _, joint = trained
        report = str(tmp_path / "eval.jsonl")
        code, _, _ = run(["eval", "--manifest", manifest, "--checkpoint", joint, "--oracle",
                          "--report", report])
        assert code == 0
        assert [r["checkpoint_id"] for r in read_reports(report)] == ["joint", "bayes-oracle"]

    def test_joint_training_is_deterministic(self, tmp_path, manifest, trained):
        uni, joint = trained
        again = str(tmp_path / "joint2.json")
        code, _, err = run(["train-joint", "--manifest", manifest, "--init", uni, "--checkpoint", again,
                            "--epochs", "1", "--split", "train", "--test-fraction", "0.25"])
        assert code == 0, err
        assert open(joint, "rb").read() == open(again, "rb").read()

    def test_evaluation_report_is_deterministic(self, tmp_path, manifest, trained):
        _, joint = trained
        outputs = []
        for i in range(2):
            report = tmp_path / f"eval{i}.jsonl"
            code, out, err = run(["eval", "--manifest", manifest, "--checkpoint", joint, "--split", "test",
                                  "--test-fraction", "0.25", "--report", str(report), "--oracle"])
            assert code == 0, err
            outputs.append((out, report.read_bytes(), (tmp_path / f"eval{i}.txt").read_bytes()))
        assert outputs[0] == outputs[1]

    def test_markdown_table(self, tmp_path, manifest, trained):
        _, joint = trained
        markdown = tmp_path / "ablation.md"
        code, _, err = run(["ablate", "--manifest", manifest, "--checkpoint", joint, "--combos", "T,TAV",
                            "--markdown", str(markdown)])
        assert code == 0, err
        lines = markdown.read_text().splitlines()
        assert lines[0] == "## Modality ablation"
        assert "**Checkpoint:** joint" in lines
        rows = [line for line in lines if line.startswith("| Text")]
        assert [row.split(" | ")[0] for row in rows] == ["| Text", "| Text+Audio+Video"]

    def test_markdown_path_from_environment(self, tmp_path, manifest, trained):
        _, joint = trained
        markdown = tmp_path / "env.md"
        code, _, _ = run(["eval", "--manifest", manifest, "--checkpoint", joint],
                         env={"MMF2F_MARKDOWN": str(markdown)})
        assert code == 0
        assert "Text+Audio+Video" in markdown.read_text()

    def test_joint_rejects_single_modality(self, tmp_path, manifest, trained):
        uni, _ = trained
        code, _, err = run(["train-joint", "--manifest", manifest, "--init", uni, "--modalities", "A",
                            "--checkpoint", str(tmp_path / "j.json"), "--epochs", "1"])
        assert code == 3
        assert error_record(err)["error"] == "config"
        assert not (tmp_path / "j.json").exists()

    def test_training_is_deterministic(self, tmp_path, manifest, trained):
        uni, _ = trained
        again = str(tmp_path / "uni2.json")
        code, _, _ = run(["train-uni", "--manifest", manifest, "--checkpoint", again, "--epochs", "1",
                          "--split", "train", "--test-fraction", "0.25"])
        assert code == 0
        assert open(uni, "rb").read() == open(again, "rb").read()

    def test_metrics_log(self, tmp_path, manifest):
        metrics = tmp_path / "metrics.jsonl"
        code, _, _ = run(["train-uni", "--manifest", manifest, "--checkpoint", str(tmp_path / "u.json"),
                          "--epochs", "2", "--modalities", "T", "--metrics", str(metrics)])
        assert code == 0
        events = [json.loads(line) for line in metrics.read_text().splitlines()]
        assert [e["event_type"] for e in events] == ["EPOCH", "EPOCH", "CHECKPOINT_SAVED"]

    def test_predict_text_only_frame(self, trained):
        _, joint = trained
        frames = json.dumps({"token": "w03"}) + "\n" + json.dumps({"reset": True}) + "\n"
        code, out, err = run(["predict", "--checkpoint", joint], stdin=frames)
        assert code == 0, err
        (line,) = out.splitlines()
        record = json.loads(line)
        assert abs(record["p_keep"] + record["p_turn"] + record["p_bc"] - 1.0) < 1e-9
        assert record["modalities"] == "T"

    def test_predict_rejects_bad_stream(self, trained):
        _, joint = trained
        code, _, err = run(["predict", "--checkpoint", joint], stdin="{oops\n")
        assert code == 3
        assert error_record(err)["error"] == "DataError"
