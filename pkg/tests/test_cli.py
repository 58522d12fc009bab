import json
from pathlib import Path

import pytest

from propdetect.cli import main
from propdetect.corpus import parse_tc_labels
from propdetect.runs import MANIFEST, Stage, locked, verify_manifest
from propdetect.synth import experiment_yaml

ROOT = Path(__file__).resolve().parents[1]

# small enough that a full train/predict cycle takes seconds
FAST = [
    "--set", "encoder.hidden_dim=16", "--set", "encoder.layers=1", "--set", "train.epochs=2",
    "--set", "pretrain.total_steps=20", "--set", "pretrain.batch_size=4",
]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth") / "data"
    assert main(["synth", "--out", str(out), "--n-articles", "30", "--seed", "4"]) == 0
    return out


@pytest.fixture
def ws(tmp_path):
    return tmp_path / "ws"


def prepare(capsys, corpus, ws, *extra):
    return run(capsys, "prepare", "--config", corpus / "config.yaml", "--workspace", ws, *FAST, *extra)


class TestSynth:
    def test_outputs(self, corpus):
        names = {p.name for p in corpus.iterdir()}
        assert {"articles", "labels-si.tsv", "labels-tc.tsv", "triggers.tsv", "config.yaml"} <= names
        assert len(list((corpus / "articles").glob("article*.txt"))) == 30

    def test_refuses_non_empty(self, capsys, corpus):
        code, _, err = run(capsys, "synth", "--out", corpus, "--n-articles", "3")
        assert code == 2 and "--force" in err

    def test_shipped_config_matches_generator(self):
        assert (ROOT / "configs" / "synthetic.yaml").read_text() == experiment_yaml("../data/synth/")


class TestPrepare:
    def test_outputs_and_determinism(self, capsys, corpus, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert prepare(capsys, corpus, a)[0] == 0
        code, out, _ = prepare(capsys, corpus, b)
        assert code == 0 and "train_articles=24" in out and "dev_articles=6" in out
        ma = json.loads((a / "prepare" / MANIFEST).read_text())
        mb = json.loads((b / "prepare" / MANIFEST).read_text())
        assert ma["outputs"] == mb["outputs"]
        assert {"split.json", "vocab.txt", "config.yaml", "segments.jsonl", "samples.jsonl",
                "gold-train-si.tsv", "gold-dev-tc.tsv"} <= set(ma["outputs"])
        assert verify_manifest(a / "prepare") == []

    def test_segments_fit(self, capsys, corpus, ws):
        prepare(capsys, corpus, ws)
        for line in (ws / "prepare" / "segments.jsonl").read_text().splitlines():
            seg = json.loads(line)
            assert 1 <= len(seg["tokens"]) <= 128
            assert len(seg["labels"]) == len(seg["tokens"])

    def test_exact_span_needs_tc_labels(self, capsys, corpus, ws):
        code, _, err = prepare(capsys, corpus, ws, "--set", "split_strategy=exact_span", "--set", "data.tc_labels=null")
        assert code == 2 and "exact_span" in err
        assert not (ws / "prepare").exists()

    def test_si_derived_from_tc(self, capsys, corpus, ws):
        assert prepare(capsys, corpus, ws, "--set", "data.si_labels=null")[0] == 0
        assert (ws / "prepare" / "gold-dev-si.tsv").read_text()

    def test_unknown_key(self, capsys, corpus, ws):
        code, _, err = prepare(capsys, corpus, ws, "--set", "train.epochz=3")
        assert code == 2 and "epochz" in err


class TestPrerequisites:
    @pytest.mark.parametrize("argv,hint", [
        (["train-si"], "propdetect prepare"),
        (["pretrain"], "propdetect prepare"),
        (["score", "--subtask", "SI"], "propdetect predict --subtask SI"),
        (["report"], "propdetect score --subtask TC"),
    ])
    def test_missing_stage_names_command(self, capsys, ws, argv, hint):
        code, _, err = run(capsys, *argv, "--workspace", ws)
        assert code == 2
        assert err.startswith("error: ") and hint in err

    def test_predict_needs_training(self, capsys, corpus, ws):
        prepare(capsys, corpus, ws)
        code, _, err = run(capsys, "predict", "--subtask", "TC", "--workspace", ws)
        assert code == 2 and "propdetect train-tc" in err


class TestScoring:
    def test_self_score(self, capsys, corpus, ws):
        gold = corpus / "labels-si.tsv"
        code, out, _ = run(capsys, "score", "--subtask", "SI", "--pred", gold, "--gold", gold, "--workspace", ws)
        assert code == 0
        assert "precision=100.000\nrecall=100.000\nf1=100.000\n" in out
        code, out, _ = run(capsys, "score", "--subtask", "TC", "--pred", corpus / "labels-tc.tsv",
                           "--gold", corpus / "labels-tc.tsv", "--workspace", ws)
        assert code == 0 and "micro_f1=100.000" in out

    def test_tc_key_mismatch_is_an_error(self, capsys, corpus, ws, tmp_path):
        partial = tmp_path / "p.tsv"
        partial.write_text("".join((corpus / "labels-tc.tsv").read_text().splitlines(keepends=True)[1:]))
        code, _, err = run(capsys, "score", "--subtask", "TC", "--pred", partial,
                           "--gold", corpus / "labels-tc.tsv", "--workspace", ws)
        assert code == 2 and "error:" in err

    def test_report_on_empty_predictions(self, capsys, corpus, ws, tmp_path):
        empty = tmp_path / "empty.tsv"
        empty.write_text("")
        code, out, _ = run(capsys, "report", "--pred", empty, "--gold", corpus / "labels-tc.tsv", "--workspace", ws)
        assert code == 0
        rows = out.splitlines()[2:16]
        assert len(rows) == 14
        assert all(r.split()[-1] == "0.00" for r in rows)  # f1 is the last column
        assert out.splitlines()[-1].split()[-1] == "0.00"


class TestRuns:
    def test_manifest_detects_mutation(self, capsys, corpus, ws):
        prepare(capsys, corpus, ws)
        target = ws / "prepare" / "vocab.txt"
        target.write_text(target.read_text() + "extra\n")
        assert verify_manifest(ws / "prepare") == ["vocab.txt"]
        (ws / "prepare" / "stray.txt").write_text("x")
        assert verify_manifest(ws / "prepare") == ["stray.txt", "vocab.txt"]

    def test_busy_workspace(self, capsys, corpus, ws):
        with locked(ws):
            code, _, err = prepare(capsys, corpus, ws)
        assert code == 2 and "locked" in err
        assert prepare(capsys, corpus, ws)[0] == 0

    def test_failed_stage_leaves_previous_result(self, tmp_path):
        with Stage(tmp_path, "s", "cmd", {}) as st:
            (st.dir / "out.txt").write_text("first")
        with pytest.raises(RuntimeError):
            with Stage(tmp_path, "s", "cmd", {}) as st:
                (st.dir / "out.txt").write_text("partial")
                raise RuntimeError("boom")
        assert (tmp_path / "s" / "out.txt").read_text() == "first"
        assert [p.name for p in tmp_path.iterdir()] == ["s"]
        assert verify_manifest(tmp_path / "s") == []


def test_full_cycle(capsys, corpus, ws):
    assert prepare(capsys, corpus, ws)[0] == 0
    code, out, _ = run(capsys, "train-si", "--workspace", ws)
    assert code == 0 and "epochs=2" in out
    assert run(capsys, "predict", "--subtask", "SI", "--workspace", ws)[0] == 0
    code, out, _ = run(capsys, "score", "--subtask", "SI", "--workspace", ws)
    assert code == 0 and out.startswith("subtask=SI\nprecision=")

    assert run(capsys, "pretrain", "--workspace", ws)[0] == 0
    steps = sorted(int(p.stem.split("-")[1]) for p in (ws / "pretrain").glob("ckpt-*.bin"))
    assert steps == [4, 8, 12, 15, 20]  # 20 * (0.175, 0.4, 0.6, 0.75, 1), rounded

    assert run(capsys, "train-tc", "--workspace", ws, "--set", "train.init_checkpoint=last")[0] == 0
    assert run(capsys, "predict", "--subtask", "TC", "--workspace", ws)[0] == 0
    code, out, _ = run(capsys, "score", "--subtask", "TC", "--workspace", ws)
    assert code == 0 and "micro_f1=" in out
    code, out, _ = run(capsys, "report", "--workspace", ws)
    assert code == 0 and "Loaded Language" in out

    code, out, _ = run(capsys, "train-tc", "--ensemble", "--workspace", ws, "--set", "ensemble.fractions=[0.4,1.0]")
    assert code == 0 and out.count("member=") == 2
    code, _, _ = run(capsys, "predict", "--subtask", "TC", "--ensemble", "--workspace", ws, "--out", ws / "ens.tsv")
    assert code == 0
    meta = json.loads((ws / "ens.meta.json").read_text())
    assert meta["member_seeds"] == [13, 14] and meta["member_step_fractions"] == [0.4, 1.0]
    gold = parse_tc_labels((ws / "prepare" / "gold-dev-tc.tsv").read_text())
    pred = parse_tc_labels((ws / "ens.tsv").read_text())
    assert sorted((l.article_id, l.span) for l in pred) == sorted((l.article_id, l.span) for l in gold)
