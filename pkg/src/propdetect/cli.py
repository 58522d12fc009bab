"""Command-line entry point: ``propdetect <command> [options]``.

Every command except ``synth`` works inside a workspace directory (``--workspace``,
else ``$PROPDETECT_WORKSPACE``, else ``./workspace``) and writes one stage
directory there::

    prepare/      split.json, vocab.txt, caches, gold TSVs of the split, config.yaml
    pretrain/     ckpt-<step>.bin, losses.json
    si/           model.bin, history.json
    tc/           model.bin or member-<i>.bin, history.json
    predict-si/   predictions.tsv, predictions.meta.json
    predict-tc/   predictions.tsv, predictions.meta.json
    score-si/     score.txt        score-tc/  score.txt
    report/       report.txt

Each stage directory carries a ``manifest.json`` (command, config, timings,
SHA-256 of every output).  Outputs are staged and only moved into place when
the command succeeds, so a failed run leaves no partial stage behind.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import torch

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .corpus import (
    Article, FormatError, SiLabel, TcLabel, Technique, emit_si_predictions, emit_tc_predictions,
    group_by_article, load_article, load_articles, parse_si_labels, parse_tc_labels, train_dev_split,
    validate_against,
)
from .metrics import format_report, format_si, per_class_report, si_score, tc_micro_f1
from .neural.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .neural.mlm import pretrain_mlm
from .pipelines.si import SiModel, predict_si_many, segment_article, train_si
from .pipelines.tc import (
    Ensemble, TcModel, build_ensemble, predict_tc, resolve_overlaps, train_tc,
)
from .runs import Stage, WorkspaceBusy, locked, workspace_root
from .segmenter import RuleTokenizer, SpanBoundsError, Vocabulary, extract_exact_spans, project_labels
from .synth import SynthConfig, experiment_yaml, generate

log = logging.getLogger("propdetect")


class CommandError(Exception):
    """Expected failure: printed as ``error: ...`` with exit code 2."""


def _require(root: Path, stage: str, command: str) -> Path:
    path = root / stage
    if not (path / "manifest.json").is_file():
        raise CommandError(f"{path} is missing; run `propdetect {command}` first")
    return path


def _read_labels(path: str | None, parse, what: str):
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise CommandError(f"{what} file {p} does not exist")
    try:
        return parse(p.read_text(encoding="utf-8"))
    except FormatError as exc:
        raise CommandError(f"{p}: {exc}") from None


def _articles(directory: str | None) -> list[Article]:
    if directory is None:
        raise CommandError("no articles directory configured (data.articles_dir)")
    if not Path(directory).is_dir():
        raise CommandError(f"articles directory {directory} does not exist")
    articles = load_articles(directory)
    if not articles:
        raise CommandError(f"no article<ID>.txt files in {directory}")
    return articles


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- workspace state ---------------------------------------------------------


class Prepared:
    """Everything ``prepare`` fixed: config, split, vocabulary, gold labels."""

    def __init__(self, root: Path, overrides: Sequence[str] = ()):
        self.dir = _require(root, "prepare", "prepare")
        try:
            self.cfg = load_config(self.dir / "config.yaml", list(overrides))
        except ConfigError as exc:
            raise CommandError(str(exc)) from None
        split = json.loads((self.dir / "split.json").read_text())
        self.by_id = {a.id: a for a in _articles(self.cfg.data.articles_dir)}
        self.train = [self.by_id[i] for i in split["train"]]
        self.dev = [self.by_id[i] for i in split["dev"]]
        self.vocab = Vocabulary.load(self.dir / "vocab.txt")
        self.tokenizer = RuleTokenizer()

    def gold(self, split: str, subtask: str):
        path = self.dir / f"gold-{split}-{subtask.lower()}.tsv"
        if not path.is_file():
            raise CommandError(f"no {subtask} labels were prepared; set data.tc_labels and rerun `propdetect prepare`")
        parse = parse_si_labels if subtask == "SI" else parse_tc_labels
        return parse(path.read_text(encoding="utf-8"))

    def samples(self, split: str):
        articles = self.train if split == "train" else self.dev
        gold = group_by_article(self.gold(split, "TC"))
        return [s for a in articles for s in extract_exact_spans(a, gold.get(a.id, ()))]


def _pretrained(root: Path) -> list:
    path = _require(root, "pretrain", "pretrain")
    files = sorted(path.glob("ckpt-*.bin"), key=lambda p: int(p.stem.split("-")[1]))
    return [load_checkpoint(p.read_bytes()) for p in files]


def _init_checkpoint(root: Path, cfg: ExperimentConfig, vocab: Vocabulary):
    choice = cfg.train.init_checkpoint
    if choice in (None, "none"):
        return None
    if choice == "last":
        ck = _pretrained(root)[-1]
    else:
        p = Path(choice)
        if not p.is_file():
            raise CommandError(f"checkpoint {p} does not exist")
        ck = load_checkpoint(p.read_bytes())
    if ck.config.vocab_size != len(vocab):
        raise CommandError(
            f"checkpoint vocabulary size {ck.config.vocab_size} does not match the prepared vocabulary ({len(vocab)})"
        )
    return ck


# -- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = SynthConfig(n_articles=args.n_articles, seed=args.seed)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CommandError(f"{out} is not empty; pass --force to overwrite")
    staging = out.with_name(f".{out.name}.partial")
    shutil.rmtree(staging, ignore_errors=True)
    try:
        corpus = generate(cfg)
        corpus.write(staging)
        (staging / "config.yaml").write_text(experiment_yaml(), encoding="utf-8")
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    staging.rename(out)
    print(f"articles={len(corpus.articles)}")
    print(f"spans={len(corpus.si_labels)}")
    print(f"config={out / 'config.yaml'}")
    return 0


def _load_config(args) -> ExperimentConfig:
    try:
        return load_config(args.config, args.set)
    except ConfigError as exc:
        raise CommandError(str(exc)) from None


def cmd_prepare(args) -> int:
    cfg = _load_config(args)
    articles = _articles(cfg.data.articles_dir)
    si = _read_labels(cfg.data.si_labels, parse_si_labels, "SI label")
    tc = _read_labels(cfg.data.tc_labels, parse_tc_labels, "TC label")
    if cfg.split_strategy == "exact_span" and tc is None:
        raise CommandError("split_strategy exact_span needs technique labels; set data.tc_labels")
    if si is None and tc is None:
        raise CommandError("no labels configured; set data.si_labels and/or data.tc_labels")
    if si is None:
        si = sorted({SiLabel(l.article_id, l.span) for l in tc}, key=lambda l: (l.article_id, l.span))
    for path in (cfg.data.vocab, cfg.data.embeddings, cfg.data.pretrain_corpus):
        if path is not None and not Path(path).exists():
            raise CommandError(f"configured path {path} does not exist")
    by_id = {a.id: a for a in articles}
    try:
        validate_against(si, by_id)
        if tc is not None:
            validate_against(tc, by_id)
    except ValueError as exc:
        raise CommandError(str(exc)) from None

    root = workspace_root(args.workspace)
    with locked(root), Stage(root, "prepare", "prepare", cfg.to_dict()) as stage:
        out = stage.dir
        train, dev = train_dev_split(articles, cfg.seed)
        _write_json(out / "split.json", {
            "seed": cfg.seed, "n_train": len(train), "n_dev": len(dev),
            "train": [a.id for a in train], "dev": [a.id for a in dev],
        })
        tok = RuleTokenizer()
        if cfg.data.vocab:
            vocab = Vocabulary.load(cfg.data.vocab)
        else:
            vocab = Vocabulary.build((a.text for a in train), tok, cfg.vocab_size)
        vocab.save(out / "vocab.txt")
        (out / "config.yaml").write_text(cfg.dumps(), encoding="utf-8")

        train_ids = {a.id for a in train}
        for split, ids in (("train", train_ids), ("dev", {a.id for a in dev})):
            (out / f"gold-{split}-si.tsv").write_text(
                emit_si_predictions(l for l in si if l.article_id in ids), encoding="utf-8")
            if tc is not None:
                (out / f"gold-{split}-tc.tsv").write_text(
                    emit_tc_predictions(l for l in tc if l.article_id in ids), encoding="utf-8")

        # segment cache: token offsets and projected labels, one line per segment
        strategy = cfg.train_config("SI", len(vocab)).split_strategy
        max_tokens = min(128, cfg.encoder.max_seq_len - 2)
        gold_si = group_by_article(si)
        with stage.timed("segment"), open(out / "segments.jsonl", "w", encoding="utf-8") as fh:
            for a in articles:
                spans = [l.span for l in gold_si.get(a.id, ())]
                for seg in segment_article(a, tok, strategy, max_tokens):
                    fh.write(json.dumps({
                        "article_id": a.id, "split": "train" if a.id in train_ids else "dev",
                        "start": seg.start, "end": seg.end,
                        "tokens": [[t.start, t.end] for t in seg.tokens],
                        "labels": project_labels(seg, spans),
                    }) + "\n")
        if tc is not None:
            gold_tc = group_by_article(tc)
            with open(out / "samples.jsonl", "w", encoding="utf-8") as fh:
                for a in articles:
                    try:
                        samples = extract_exact_spans(a, gold_tc.get(a.id, ()))
                    except SpanBoundsError as exc:
                        raise CommandError(str(exc)) from None
                    for s in samples:
                        fh.write(json.dumps({
                            "article_id": s.article_id, "split": "train" if a.id in train_ids else "dev",
                            "start": s.span.start, "end": s.span.end, "technique": s.technique.label,
                        }) + "\n")
    print(f"train_articles={len(train)}")
    print(f"dev_articles={len(dev)}")
    print(f"vocab_size={len(vocab)}")
    return 0


def _pretrain_corpus(prep: Prepared) -> list[Article]:
    directory = prep.cfg.data.pretrain_corpus
    if directory is None:
        return prep.train
    files = sorted(Path(directory).glob("*.txt"))
    if not files:
        raise CommandError(f"no .txt files in pre-training corpus {directory}")
    # any file name is accepted here; ids only need to be distinct
    return [load_article(f"article{i + 1}.txt", f.read_bytes()) for i, f in enumerate(files)]


def cmd_pretrain(args) -> int:
    root = workspace_root(args.workspace)
    with locked(root):
        prep = Prepared(root, args.set)
        cfg = prep.cfg
        p = cfg.pretrain
        with Stage(root, "pretrain", "pretrain", cfg.to_dict()) as stage:
            with stage.timed("train"):
                checkpoints = pretrain_mlm(
                    _pretrain_corpus(prep), cfg.encoder_config(len(prep.vocab)), p.total_steps, prep.tokenizer,
                    prep.vocab, p.checkpoint_fractions, cfg.seed, p.batch_size, p.window, p.lr,
                )
            losses = []
            for ck in checkpoints:
                (stage.dir / f"ckpt-{ck.step}.bin").write_bytes(save_checkpoint(ck))
                losses.append({"step": ck.step, **{k: ck.meta[k] for k in ("train_loss", "eval_loss")}})
            initial = checkpoints[0].meta["initial"]
            _write_json(stage.dir / "losses.json", {"initial": initial, "checkpoints": losses})
    for row in losses:
        print(f"step={row['step']} train_loss={row['train_loss']:.4f} eval_loss={row['eval_loss']:.4f}")
    return 0


def cmd_train_si(args) -> int:
    root = workspace_root(args.workspace)
    with locked(root):
        prep = Prepared(root, args.set)
        cfg = prep.cfg
        init = _init_checkpoint(root, cfg, prep.vocab)
        with Stage(root, "si", "train-si", cfg.to_dict()) as stage:
            with stage.timed("train"):
                model = train_si(
                    prep.train, prep.gold("train", "SI"), prep.dev, prep.gold("dev", "SI"),
                    cfg.train_config("SI", len(prep.vocab)), init, prep.vocab, prep.tokenizer,
                )
            (stage.dir / "model.bin").write_bytes(model.to_bytes())
            _write_json(stage.dir / "history.json", model.history)
    best = max((h["dev_f1"] for h in model.history), default=0.0)
    print(f"epochs={len(model.history)}")
    print(f"best_dev_f1={100 * best:.3f}")
    return 0


def cmd_train_tc(args) -> int:
    root = workspace_root(args.workspace)
    overrides = list(args.set) + (["ensemble.enabled=true"] if args.ensemble else [])
    with locked(root):
        prep = Prepared(root, overrides)
        cfg = prep.cfg
        tcfg = cfg.train_config("TC", len(prep.vocab))
        train, dev = prep.samples("train"), prep.samples("dev")
        if cfg.ensemble.enabled:
            checkpoints = _pretrained(root)
            if cfg.ensemble.fractions is not None:
                wanted = [float(f) for f in cfg.ensemble.fractions]
                checkpoints = [ck for ck in checkpoints if any(abs(ck.step_fraction - f) < 1e-9 for f in wanted)]
            if len(checkpoints) < 2:
                raise CommandError(f"an ensemble needs at least 2 pre-training checkpoints, found {len(checkpoints)}")
        else:
            init = _init_checkpoint(root, cfg, prep.vocab)
        with Stage(root, "tc", "train-tc", cfg.to_dict()) as stage:
            with stage.timed("train"):
                if cfg.ensemble.enabled:
                    members = build_ensemble(checkpoints, train, dev, tcfg, prep.vocab, prep.tokenizer).members
                else:
                    members = [train_tc(train, dev, tcfg, init, prep.vocab, prep.tokenizer)]
            if cfg.ensemble.enabled:
                for i, m in enumerate(members):
                    (stage.dir / f"member-{i}.bin").write_bytes(m.to_bytes())
            else:
                (stage.dir / "model.bin").write_bytes(members[0].to_bytes())
            _write_json(stage.dir / "history.json", [
                {"step_fraction": m.step_fraction, "warnings": m.warnings, "epochs": m.history} for m in members
            ])
    for i, m in enumerate(members):
        best = max((h["dev_micro_f1"] for h in m.history), default=0.0)
        print(f"member={i} step_fraction={m.step_fraction:.3f} best_dev_micro_f1={100 * best:.3f}")
    return 0


def _predict_articles(args, prep: Prepared) -> list[Article]:
    return _articles(args.articles) if args.articles else prep.dev


def cmd_predict(args) -> int:
    root = workspace_root(args.workspace)
    subtask = args.subtask
    with locked(root):
        prep = Prepared(root)
        articles = _predict_articles(args, prep)
        meta = {"subtask": subtask, "seed": prep.cfg.seed, "toolkit_version": __version__,
                "articles": "dev split" if not args.articles else str(Path(args.articles).resolve())}
        if subtask == "SI":
            model = SiModel.from_bytes((_require(root, "si", "train-si") / "model.bin").read_bytes())
            stage_cfg = {"subtask": subtask, "articles": meta["articles"]}
            with Stage(root, "predict-si", "predict", stage_cfg) as stage:
                labels = predict_si_many(model, articles)
                text = emit_si_predictions(labels)
                (stage.dir / "predictions.tsv").write_text(text, encoding="utf-8")
                _write_json(stage.dir / "predictions.meta.json", meta)
        else:
            tc_dir = _require(root, "tc", "train-tc")
            if args.ensemble:
                files = sorted(tc_dir.glob("member-*.bin"), key=lambda p: int(p.stem.split("-")[1]))
                if not files:
                    raise CommandError(f"{tc_dir} holds no ensemble members; run `propdetect train-tc --ensemble` first")
                model = Ensemble([TcModel.from_bytes(p.read_bytes()) for p in files])
                meta["member_seeds"] = [prep.cfg.seed + i for i in range(len(files))]
                meta["member_step_fractions"] = [m.step_fraction for m in model.members]
            else:
                if not (tc_dir / "model.bin").is_file():
                    raise CommandError(f"{tc_dir} holds ensemble members only; pass --ensemble")
                model = TcModel.from_bytes((tc_dir / "model.bin").read_bytes())
            if args.spans:
                spans_text = Path(args.spans).read_text(encoding="utf-8") if Path(args.spans).is_file() else None
                if spans_text is None:
                    raise CommandError(f"span file {args.spans} does not exist")
                try:
                    first = next((l for l in spans_text.splitlines() if l.strip()), "")
                    keys = (
                        [SiLabel(l.article_id, l.span) for l in parse_tc_labels(spans_text)]
                        if first.count("\t") == 3 else parse_si_labels(spans_text)
                    )
                except FormatError as exc:
                    raise CommandError(f"{args.spans}: {exc}") from None
            elif args.articles:
                raise CommandError("TC prediction on --articles needs --spans")
            else:
                keys = [SiLabel(l.article_id, l.span) for l in prep.gold("dev", "TC")]
            by_id = {a.id: a for a in articles}
            try:
                validate_against(keys, by_id)
            except ValueError as exc:
                raise CommandError(str(exc)) from None
            placeholder = Technique(0)
            samples = []
            for k in keys:
                sample = extract_exact_spans(by_id[k.article_id], [TcLabel(k.article_id, placeholder, k.span)])[0]
                samples.append(replace(sample, technique=None))
            meta["resolve_overlaps"] = not args.no_resolve_overlaps
            stage_cfg = {"subtask": subtask, "articles": meta["articles"], "ensemble": bool(args.ensemble),
                         "spans": str(Path(args.spans).resolve()) if args.spans else "dev gold",
                         "resolve_overlaps": meta["resolve_overlaps"]}
            with Stage(root, "predict-tc", "predict", stage_cfg) as stage:
                preds = predict_tc(model, samples)
                if args.no_resolve_overlaps:
                    labels = [TcLabel(p.article_id, p.technique, p.span) for p in preds]
                else:
                    labels = resolve_overlaps(preds)
                text = emit_tc_predictions(labels)
                (stage.dir / "predictions.tsv").write_text(text, encoding="utf-8")
                _write_json(stage.dir / "predictions.meta.json", meta)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        Path(args.out).with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"predictions={len(labels)}")
    return 0


def _default_pair(root: Path, subtask: str, pred: str | None, gold: str | None) -> tuple[Path, Path]:
    low = subtask.lower()
    if pred is None:
        pred = str(_require(root, f"predict-{low}", f"predict --subtask {subtask}") / "predictions.tsv")
    if gold is None:
        gold = str(_require(root, "prepare", "prepare") / f"gold-dev-{low}.tsv")
    for p in (pred, gold):
        if not Path(p).is_file():
            raise CommandError(f"{p} does not exist")
    return Path(pred).resolve(), Path(gold).resolve()


def _score_text(subtask: str, pred_path: Path, gold_path: Path) -> str:
    if subtask == "SI":
        pred = _read_labels(str(pred_path), parse_si_labels, "prediction")
        gold = _read_labels(str(gold_path), parse_si_labels, "gold")
        return f"subtask=SI\n{format_si(si_score(pred, gold))}"
    pred = _read_labels(str(pred_path), parse_tc_labels, "prediction")
    gold = _read_labels(str(gold_path), parse_tc_labels, "gold")
    try:
        micro = tc_micro_f1(pred, gold)
        report = per_class_report(pred, gold)
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    return f"subtask=TC\nmicro_f1={100 * micro:.3f}\n\n{format_report(report)}"


def cmd_score(args) -> int:
    root = workspace_root(args.workspace)
    with locked(root):
        pred, gold = _default_pair(root, args.subtask, args.pred, args.gold)
        text = _score_text(args.subtask, pred, gold)
        stage_cfg = {"subtask": args.subtask, "pred": str(pred), "gold": str(gold)}
        with Stage(root, f"score-{args.subtask.lower()}", "score", stage_cfg) as stage:
            (stage.dir / "score.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    """Per-technique table for a scored TC run.  Unlike ``score``, a partial
    or empty prediction file is accepted: unpredicted spans count as misses."""
    root = workspace_root(args.workspace)
    with locked(root):
        if args.pred is None or args.gold is None:
            scored = _require(root, "score-tc", "score --subtask TC")
            recorded = json.loads((scored / "manifest.json").read_text())["config"]
            pred_path = Path(args.pred or recorded["pred"])
            gold_path = Path(args.gold or recorded["gold"])
        else:
            pred_path, gold_path = Path(args.pred), Path(args.gold)
        pred = _read_labels(str(pred_path), parse_tc_labels, "prediction")
        gold = _read_labels(str(gold_path), parse_tc_labels, "gold")
        report = per_class_report(pred, gold, allow_missing=True)
        text = format_report(report)
        stage_cfg = {"pred": str(pred_path.resolve()), "gold": str(gold_path.resolve())}
        with Stage(root, "report", "report", stage_cfg) as stage:
            (stage.dir / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="propdetect", description="Propaganda span identification and technique classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def workspace(p):
        p.add_argument("--workspace", help="run directory (default: $PROPDETECT_WORKSPACE or ./workspace)")

    def overrides(p):
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. --set train.epochs=5 (repeatable)")

    p = sub.add_parser("synth", help="write the seeded synthetic corpus and its experiment config")
    p.add_argument("--out", required=True)
    p.add_argument("--n-articles", type=int, default=SynthConfig.n_articles)
    p.add_argument("--seed", type=int, default=SynthConfig.seed)
    p.add_argument("--force", action="store_true", help="replace a non-empty output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="split, build the vocabulary and cache segments")
    p.add_argument("--config", required=True)
    overrides(p)
    workspace(p)
    p.set_defaults(func=cmd_prepare)

    for name, func, text in (
        ("pretrain", cmd_pretrain, "masked-LM pre-training with checkpoint snapshots"),
        ("train-si", cmd_train_si, "fine-tune the span identifier"),
        ("train-tc", cmd_train_tc, "fine-tune the technique classifier"),
    ):
        p = sub.add_parser(name, help=text)
        overrides(p)
        workspace(p)
        if name == "train-tc":
            p.add_argument("--ensemble", action="store_true", help="one member per pre-training checkpoint")
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="write predictions in the shared-task TSV format")
    p.add_argument("--subtask", choices=("SI", "TC"), required=True)
    p.add_argument("--articles", help="directory of articles to label (default: the dev split)")
    p.add_argument("--spans", help="TC: TSV of spans to classify (default: dev gold spans)")
    p.add_argument("--ensemble", action="store_true", help="TC: vote over the trained ensemble members")
    p.add_argument("--no-resolve-overlaps", action="store_true",
                   help="TC: keep the voted technique even when overlapping spans share it")
    p.add_argument("--out", help="also copy the predictions to this file")
    workspace(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="score a prediction TSV against gold")
    p.add_argument("--subtask", choices=("SI", "TC"), required=True)
    p.add_argument("--pred", help="default: the last predict run")
    p.add_argument("--gold", help="default: the dev gold labels from prepare")
    workspace(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="per-technique F1 and support table")
    p.add_argument("--pred", help="default: the file scored by the last TC score run")
    p.add_argument("--gold")
    workspace(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except (CommandError, WorkspaceBusy, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
