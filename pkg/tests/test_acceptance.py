"""The ten acceptance criteria at their stated tolerances.

Each test records a one-line detail; the terminal summary prints one
PASS/FAIL line per criterion (see conftest.py).  Criteria 5, 6 and 9 share
one workspace built from the shipped synthetic corpus through the CLI.
"""

import json
import re
import time
from collections import Counter

import numpy as np
import pytest
import torch

from oracles import (
    brute_log_partition, brute_viterbi, composite_check, five_point_difference, random_instance, random_predictions,
    rel_error, resolution_violations,
)
from propdetect import crf
from propdetect.cli import main
from propdetect.corpus import (
    Article, ClassifiedSample, SiLabel, Span, TcLabel, Technique, emit_si_predictions, emit_tc_predictions,
    oversample_classes, parse_si_labels, parse_tc_labels, technique_histogram, undersample_negatives,
)
from propdetect.metrics import si_score
from propdetect.neural.checkpoint import encode, init_checkpoint, load_checkpoint, save_checkpoint
from propdetect.neural.encoder import EncoderConfig
from propdetect.neural.heads import TcHead
from propdetect.pipelines.tc import Ensemble, TcModel, predict_tc, resolve_overlaps
from propdetect.segmenter import RuleTokenizer, Token, Vocabulary, cut_long, split_paragraphs, tokenize
from propdetect.synth import SynthConfig, generate

TOK = RuleTokenizer()


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    assert code == 0, out.err
    return out.out


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Shipped synthetic corpus written and prepared through the CLI."""
    base = tmp_path_factory.mktemp("acceptance")
    data, ws = base / "data", base / "ws"
    assert main(["synth", "--out", str(data)]) == 0
    t0 = time.perf_counter()
    assert main(["prepare", "--config", str(data / "config.yaml"), "--workspace", str(ws)]) == 0
    return {"data": data, "ws": ws, "prepare_seconds": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def pretrained(workspace):
    t0 = time.perf_counter()
    assert main(["pretrain", "--workspace", str(workspace["ws"])]) == 0
    return time.perf_counter() - t0


def test_criterion_1_crf_oracle(record_property):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst, agree = 0.0, 0
    for _ in range(200):
        T, L = int(rng.integers(1, 9)), int(rng.choice([2, 3]))
        e, p = random_instance(rng, T, L)
        worst = max(worst, abs(crf.log_partition(e, p) - brute_log_partition(e, p)))
        agree += crf.viterbi(e, p) == brute_viterbi(e, p)
    seconds = time.perf_counter() - t0
    record_property("detail", f"max |logZ - brute| = {worst:.2e}, viterbi {agree}/200, {seconds:.1f} s")
    assert worst <= 1e-9
    assert agree == 200
    assert seconds < 10


def test_criterion_2_gradients(record_property):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    crf_worst = 0.0
    for _ in range(50):
        T, L = int(rng.integers(1, 9)), int(rng.choice([2, 3]))
        e, p = random_instance(rng, T, L)
        y = rng.integers(0, L, size=T)
        _, g = crf.nll_and_grad(e, p, y)

        def f():
            return crf.nll_and_grad(e, p, y)[0]

        for analytic, x in ((g.emissions, e), (g.transitions, p.transitions),
                            (g.start_scores, p.start_scores), (g.end_scores, p.end_scores)):
            crf_worst = max(crf_worst, rel_error(analytic, five_point_difference(f, x)))
    desk = EncoderConfig(vocab_size=2000, hidden_dim=64, layers=2, heads=2, max_seq_len=130)
    comp_worst = max(composite_check(desk, seed) for seed in range(50))
    seconds = time.perf_counter() - t0
    record_property("detail", f"CRF max rel err {crf_worst:.1e}, composite {comp_worst:.1e}, {seconds:.1f} s")
    assert crf_worst < 1e-4
    assert comp_worst < 1e-3
    assert seconds < 60


def test_criterion_3_scorer(record_property):
    def si(*spans):
        return [SiLabel(1, Span(a, b)) for a, b in spans]

    cases = [
        (si_score(si((0, 10)), si((0, 10))), (1.0, 1.0, 1.0)),
        (si_score(si((0, 10)), si((5, 20))), (0.5, 1 / 3, 0.4)),
        (si_score(si((0, 5)), si((0, 10))), (1.0, 0.5, 2 / 3)),
        (si_score([], si((0, 10))), (0.0, 0.0, 0.0)),
    ]
    golden = all(
        got.precision == pytest.approx(p, abs=1e-15) and got.recall == pytest.approx(r, abs=1e-15)
        and got.f1 == pytest.approx(f, abs=1e-15)
        for got, (p, r, f) in cases
    )
    rng = np.random.default_rng(3)

    def random_set():
        out = []
        for _ in range(int(rng.integers(0, 8))):
            a = int(rng.integers(0, 80))
            out.append(SiLabel(int(rng.integers(1, 4)), Span(a, a + int(rng.integers(1, 25)))))
        return out

    dual = 0
    for _ in range(1000):
        s, t = random_set(), random_set()
        dual += si_score(s, t).precision == si_score(t, s).recall
    record_property("detail", f"golden cases {'exact' if golden else 'WRONG'}, duality {dual}/1000")
    assert golden
    assert dual == 1000


def _tokens(words):
    out, pos = [], 0
    for w in words:
        out.append(Token(w, pos, pos + len(w)))
        pos += len(w) + 1
    return out


def test_criterion_4_splitting(record_property):
    backtrack = [[t.surface for t in p] for p in cut_long(_tokens(list("abcd,efg.")), 5)]
    hard = [[t.surface for t in p] for p in cut_long(_tokens(list("abcdef")), 5)]
    examples_ok = backtrack == [list("abcd,"), list("efg.")] and hard == [list("abcde"), ["f"]]

    corpora = [generate(SynthConfig()).articles, generate(SynthConfig(n_articles=400, seed=7)).articles]
    rng = np.random.default_rng(4)
    alphabet = list("abcXYZ019 ,.!?;-\n\r\té")
    # plus random text with long unpunctuated runs
    corpora.append([
        Article(i + 1, "".join(rng.choice(alphabet, size=int(rng.integers(0, 3000))))) for i in range(200)
    ])
    longest, bad_offsets, n_articles = 0, 0, 0
    for articles in corpora:
        for art in articles:
            n_articles += 1
            segs = split_paragraphs(art, TOK)
            if [t for s in segs for t in s.tokens] != tokenize(art.text):
                bad_offsets += 1
            for seg in segs:
                longest = max(longest, len(seg))
                bad_offsets += not (seg.start == seg.tokens[0].start and seg.end == seg.tokens[-1].end)
                bad_offsets += sum(art.text[t.start : t.end].lower() != t.surface for t in seg.tokens)
    record_property(
        "detail", f"longest segment {longest} tokens over {n_articles} articles, "
        f"offset faults {bad_offsets}, examples {'exact' if examples_ok else 'WRONG'}",
    )
    assert longest <= 128
    assert bad_offsets == 0
    assert examples_ok


def test_criterion_5_synthetic_si(record_property, capsys, workspace):
    ws = workspace["ws"]
    t0 = time.perf_counter()
    cli(capsys, "train-si", "--workspace", ws)
    cli(capsys, "predict", "--subtask", "SI", "--workspace", ws)
    out = cli(capsys, "score", "--subtask", "SI", "--workspace", ws)
    seconds = time.perf_counter() - t0 + workspace["prepare_seconds"]
    f1 = float(re.search(r"^f1=([\d.]+)$", out, re.M).group(1)) / 100
    record_property("detail", f"span F1 {100 * f1:.3f}, prepare..score {seconds:.0f} s")
    assert f1 >= 0.95
    assert seconds <= 300


def test_criterion_6_synthetic_tc(record_property, capsys, workspace, pretrained):
    ws = workspace["ws"]
    cli(capsys, "train-tc", "--workspace", ws)
    cli(capsys, "predict", "--subtask", "TC", "--workspace", ws)
    out = cli(capsys, "score", "--subtask", "TC", "--workspace", ws)
    micro = float(re.search(r"^micro_f1=([\d.]+)$", out, re.M).group(1)) / 100

    cli(capsys, "train-tc", "--ensemble", "--workspace", ws)
    files = sorted((ws / "tc").glob("member-*.bin"), key=lambda p: int(p.stem.split("-")[1]))
    ensemble = Ensemble([TcModel.from_bytes(p.read_bytes()) for p in files])

    probe_corpus = generate(SynthConfig(n_articles=400))
    texts = {a.id: a.text for a in probe_corpus.articles[200:]}
    probe = [
        ClassifiedSample(l.article_id, l.span, texts[l.article_id][l.span.start : l.span.end])
        for l in probe_corpus.tc_labels if l.article_id in texts
    ][:500]
    majority, sound = 0, 0
    for p in predict_tc(ensemble, probe):
        cls, votes = Counter(p.member_probs.argmax(axis=1).tolist()).most_common(1)[0]
        if votes >= 3:
            majority += 1
            sound += int(p.technique) == cls
    record_property(
        "detail", f"single-model micro-F1 {100 * micro:.3f}, {len(ensemble)} members, "
        f"majority sound {sound}/{majority} on {len(probe)} probe samples",
    )
    assert micro >= 0.95
    assert len(ensemble) == 5 and len(probe) == 500
    assert sound == majority


def test_criterion_7_ensemble_and_overlaps(record_property):
    vocab = Vocabulary.build(["alpha beta gamma delta, epsilon."], TOK, 50)
    cfg = EncoderConfig(vocab_size=len(vocab), hidden_dim=16, layers=1, heads=2, max_seq_len=20)
    torch.manual_seed(0)
    model = TcModel(init_checkpoint(cfg, 0, vocab.surfaces).build(), TcHead(16), vocab).eval()
    samples = [ClassifiedSample(1, Span(i, i + 5), s) for i, s in enumerate(
        ["alpha beta", "gamma", "delta , epsilon", "unknown words here", "beta beta beta"])]
    single = predict_tc(model, samples)
    collapse = True
    for k in (2, 3, 5):
        many = predict_tc(Ensemble([model] * k), samples)
        collapse &= [p.technique for p in many] == [p.technique for p in single]
        collapse &= all(np.array_equal(a.member_probs, np.tile(b.member_probs, (k, 1))) for a, b in zip(many, single))
        collapse &= all(np.allclose(a.aggregate, b.aggregate, rtol=0, atol=1e-15) for a, b in zip(many, single))

    rng = np.random.default_rng(7)
    violations, overlapping_sets = 0, 0
    for _ in range(1000):
        preds = random_predictions(rng, int(rng.integers(0, 30)))
        labels = resolve_overlaps(preds)
        overlapping_sets += any(
            p.article_id == q.article_id and p.span.overlaps(q.span) for i, p in enumerate(preds) for q in preds[i + 1 :]
        )
        violations += bool(resolution_violations(preds, labels))
    record_property(
        "detail", f"identical-member collapse {'exact' if collapse else 'BROKEN'}, "
        f"{violations} violating sets of 1000 ({overlapping_sets} with overlaps)",
    )
    assert collapse
    assert violations == 0


def test_criterion_8_rebalancing(record_property):
    rng = np.random.default_rng(8)
    under_ok = over_ok = 0
    for trial in range(500):
        n_pos, n_neg = int(rng.integers(1, 80)), int(rng.integers(0, 160))
        segs = [(i, True) for i in range(n_pos)] + [(n_pos + i, False) for i in range(n_neg)]
        out = undersample_negatives(segs, trial)
        pos = sorted(s for s in out if s[1])
        neg = [s for s in out if not s[1]]
        under_ok += pos == segs[:n_pos] and len(neg) == min(n_pos, n_neg) and len(set(neg)) == len(neg)

        counts = rng.integers(0, 30, size=14)
        counts[rng.integers(0, 14)] += 1
        samples = [
            ClassifiedSample(1, Span(i, i + 1), "x", Technique(t)) for t, n in enumerate(counts) for i in range(n)
        ]
        hist = technique_histogram(oversample_classes(samples, trial))
        present = {Technique(t) for t, n in enumerate(counts) if n}
        over_ok += set(hist) == present and set(hist.values()) == {int(counts.max())}
    record_property("detail", f"undersample exact {under_ok}/500, oversample flat {over_ok}/500")
    assert under_ok == 500
    assert over_ok == 500


def test_criterion_9_checkpoints(record_property, workspace, pretrained):
    pre = workspace["ws"] / "pretrain"
    steps = sorted(int(p.stem.split("-")[1]) for p in pre.glob("ckpt-*.bin"))
    losses = json.loads((pre / "losses.json").read_text())
    first, last = losses["initial"]["train_loss"], losses["checkpoints"][-1]["train_loss"]

    ck = load_checkpoint((pre / "ckpt-2000.bin").read_bytes())
    again = load_checkpoint(save_checkpoint(ck))
    ids = list(range(5, 60))
    bit_exact = encode(ck, ids).tobytes() == encode(again, ids).tobytes()
    bit_exact &= save_checkpoint(again) == (pre / "ckpt-2000.bin").read_bytes()
    record_property(
        "detail", f"steps {steps}, train loss {first:.3f} -> {last:.3f}, "
        f"round trip {'bit-exact' if bit_exact else 'DIFFERS'}, pretrain {pretrained:.0f} s",
    )
    assert steps == [350, 800, 1200, 1500, 2000]
    assert last < first
    assert bit_exact


def test_criterion_10_formats(record_property, capsys, workspace):
    rng = np.random.default_rng(10)
    si_ok = tc_ok = 0
    for _ in range(1000):
        n = int(rng.integers(0, 20))
        starts = rng.integers(0, 100_000, size=n)
        ends = starts + rng.integers(1, 500, size=n)
        ids = rng.integers(1, 10**9, size=n)
        techniques = rng.integers(0, 14, size=n)
        si = [SiLabel(int(i), Span(int(a), int(b))) for i, a, b in zip(ids, starts, ends)]
        tc = [TcLabel(int(i), Technique(int(t)), Span(int(a), int(b))) for i, t, a, b in zip(ids, techniques, starts, ends)]
        si_text, tc_text = emit_si_predictions(si), emit_tc_predictions(tc)
        si_ok += parse_si_labels(si_text) == si and emit_si_predictions(parse_si_labels(si_text)) == si_text
        tc_ok += parse_tc_labels(tc_text) == tc and emit_tc_predictions(parse_tc_labels(tc_text)) == tc_text
    gold = workspace["data"] / "labels-si.tsv"
    out = cli(capsys, "score", "--subtask", "SI", "--pred", gold, "--gold", gold, "--workspace", workspace["ws"])
    self_score = out.split("\n", 1)[1]
    record_property("detail", f"SI {si_ok}/1000, TC {tc_ok}/1000 round trips, self score "
                              + "/".join(l.split("=")[1] for l in self_score.split()))
    assert si_ok == 1000 and tc_ok == 1000
    assert self_score == "precision=100.000\nrecall=100.000\nf1=100.000\n"
