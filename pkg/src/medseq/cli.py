"""Single entry point driving every pipeline stage from flags and config files.

Subcommands: synth-gen, build-data, train, eval, ablate, probe, saliency,
serve. A config file is flat ``section.key = value`` lines (# comments);
flags override file values, and every run echoes its fully resolved
configuration into the output directory so artifacts are reproducible.

Exit codes: 0 ok, 1 I/O or data error, 2 usage error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

import numpy as np

from . import evalmetrics as em
from . import numerics as nm
from . import probe as probe_mod
from . import synthcohort as sc
from . import timeline as tl
from . import training as tr
from .baselines import LstmConfig, LstmLM, boc_featurize, train_boc
from .model import VARIANT_NAMES, ModelConfig, TransformerLM, variant_config

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


# ---------------------------------------------------------------------------
# config files: flat "section.key = value" lines, flags override
# ---------------------------------------------------------------------------

def load_config(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


class Settings:
    """Merged file + flag configuration with resolved-value echo."""

    def __init__(self, config_path: str | None):
        self.file_values = load_config(config_path) if config_path else {}
        self.resolved: dict[str, str] = {}

    def get(self, key: str, flag_value, default, cast):
        if flag_value is not None:
            value = flag_value
        elif key in self.file_values:
            value = cast(self.file_values[key])
        else:
            value = default
        self.resolved[key] = str(value)
        return value

    def echo(self, out_dir) -> None:
        path = pathlib.Path(out_dir) / "config.txt"
        lines = [f"{k} = {self.resolved[k]}" for k in sorted(self.resolved)]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _bool(s: str) -> bool:
    return s.strip().lower() in ("1", "true", "yes", "on")


# ---------------------------------------------------------------------------
# shared data loading
# ---------------------------------------------------------------------------

def load_dataset(data_dir):
    data_dir = pathlib.Path(data_dir)
    vocab = tl.Vocab.load(data_dir / "vocab.tsv")
    timelines = tl.load_timelines(data_dir / "timelines.jsonl", vocab)
    split = tl.CohortSplit.load(data_dir / "split.json")
    by_id = {t.patient_id: t for t in timelines}
    pick = lambda ids: [by_id[p] for p in ids if p in by_id]
    return vocab, split, pick(split.train), pick(split.validation), pick(split.test)


def build_model_config(settings: Settings, args, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        n_layers=settings.get("model.n_layers", args.n_layers, 6, int),
        n_heads=settings.get("model.n_heads", args.n_heads, 2, int),
        d_model=settings.get("model.d_model", args.d_model, 300, int),
        max_seq=settings.get("model.max_seq", args.max_seq, 50, int),
        dropout=settings.get("model.dropout", args.dropout, 0.0, float),
        init_embeddings=settings.get("model.init_embeddings", args.embeddings,
                                     None, str),
    )


def build_train_config(settings: Settings, args) -> tr.TrainConfig:
    return tr.TrainConfig(
        learning_rate=settings.get("train.lr", args.lr, 4.46e-5, float),
        weight_decay=settings.get("train.weight_decay", args.weight_decay,
                                  0.14, float),
        batch_size=settings.get("train.batch_size", args.batch_size, 32, int),
        warmup_steps=settings.get("train.warmup_steps", args.warmup_steps, 15, int),
        max_steps=settings.get("train.max_steps", args.max_steps, None,
                               lambda s: int(s)),
        max_epochs=settings.get("train.max_epochs", args.max_epochs, 10, int),
        seed=settings.get("train.seed", args.seed, 0, int),
        eval_every=settings.get("train.eval_every", args.eval_every, 100, int),
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth_gen(args) -> int:
    settings = Settings(args.config)
    cfg = sc.GeneratorConfig(
        n_concepts=settings.get("synth.concepts", args.concepts, 50, int),
        n_patients=settings.get("synth.patients", args.patients, 1000, int),
        seed=settings.get("synth.seed", args.seed, 0, int),
        order=settings.get("synth.order", args.order, 2, int),
        determinism=settings.get("synth.determinism", args.determinism, 0.9,
                                 float),
    )
    records, model = sc.generate_cohort(cfg)
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tl.save_records(records, out)
    model_out = args.model_out or str(out) + ".generator.json"
    model.save(model_out)
    print(f"wrote {len(records)} patients to {out}")
    print(f"wrote generator model to {model_out}")
    return EXIT_OK


def cmd_build_data(args) -> int:
    settings = Settings(args.config)
    min_freq = settings.get("data.min_freq", args.min_freq, 5, int)
    min_conf = settings.get("data.min_confirmations", args.min_confirmations, 2, int)
    max_tokens = settings.get("data.max_tokens", args.max_tokens, 50, int)
    min_tokens = settings.get("data.min_tokens", args.min_tokens, 5, int)
    seed = settings.get("data.seed", args.seed, 42, int)

    records = tl.load_records(args.infile)
    filtered = [tl.filter_events(r) for r in records]
    vocab = tl.build_vocab(filtered, min_frequency=min_freq,
                           min_confirmations=min_conf)
    timelines = []
    for rec in filtered:
        built = tl.build_timeline(rec, vocab, min_confirmations=min_conf,
                                  max_tokens=max_tokens, min_tokens=min_tokens)
        if built is not None:
            timelines.append(built)
    if len(timelines) < 3:
        print(f"error: only {len(timelines)} usable timelines", file=sys.stderr)
        return EXIT_DATA
    split = tl.split_cohort([t.patient_id for t in timelines], seed=seed)

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.tsv")
    tl.save_timelines(timelines, vocab, out / "timelines.jsonl")
    split.save(out / "split.json")
    settings.echo(out)
    print(f"wrote {len(timelines)} timelines, vocab of {len(vocab)}, "
          f"split {len(split.train)}/{len(split.validation)}/{len(split.test)} "
          f"to {out}")
    return EXIT_OK


def _train_one(family: str, variant: str | None, settings, args,
               vocab, train_tl, val_tl, out_dir: pathlib.Path) -> tr.Checkpoint:
    train_cfg = build_train_config(settings, args)
    if family == "transformer":
        base = build_model_config(settings, args, len(vocab))
        if variant:
            base = variant_config(variant, base, embeddings_path=args.embeddings)
        model = TransformerLM(base, seed=train_cfg.seed, vocab=vocab)
    elif family == "lstm":
        cfg = LstmConfig(
            vocab_size=len(vocab),
            hidden_size=settings.get("lstm.hidden_size", args.hidden_size, 300, int),
            embed_dim=settings.get("lstm.embed_dim", args.d_model, 300, int),
            max_seq=settings.get("model.max_seq", args.max_seq, 50, int))
        model = LstmLM(cfg, seed=train_cfg.seed, vocab=vocab)
    else:
        raise ValueError(f"unknown family {family!r}")
    out_dir.mkdir(parents=True, exist_ok=True)
    result = tr.train(model, train_tl, val_tl, train_cfg, vocab,
                      log_path=out_dir / "train_log.jsonl")
    if result.diverged:
        raise nm.NonFiniteError("training", "loss (aborted with last good "
                                "checkpoint)")
    tr.save_checkpoint(result.checkpoint, out_dir / "checkpoint")
    return result.checkpoint


def cmd_train(args) -> int:
    settings = Settings(args.config)
    vocab, split, train_tl, val_tl, _ = load_dataset(args.data)
    out_dir = pathlib.Path(args.out)
    family = settings.get("model.family", args.family, "transformer", str)
    variant = settings.get("model.variant", args.variant, None, str)
    ckpt = _train_one(family, variant, settings, args, vocab, train_tl, val_tl,
                      out_dir)
    settings.echo(out_dir)
    print(f"best step {ckpt.step}, validation loss "
          f"{ckpt.val_loss if ckpt.val_loss is not None else 'n/a'}")
    print(f"checkpoint written to {out_dir / 'checkpoint'}")
    return EXIT_OK


def _scorer_for(ckpt: tr.Checkpoint, vocab):
    model = tr.model_from_checkpoint(ckpt, vocab=vocab)
    if ckpt.family == "boc":
        return em.BocScorer(model, vocab)
    return model


def cmd_eval(args) -> int:
    settings = Settings(args.config)
    vocab, split, _, _, test_tl = load_dataset(args.data)
    points = em.enumerate_eval_points(test_tl)
    if args.min_context_concepts:
        points = em.filter_points(points, args.min_context_concepts)
    report = em.EvalReport(seed=split.seed, split_hash=split.content_hash(),
                           vocab_hash=vocab.content_hash())
    for spec in args.checkpoint:
        name, _, path = spec.rpartition("=")
        ckpt = tr.load_checkpoint(path, expect_vocab_hash=vocab.content_hash())
        report.add_model(name or ckpt.family, _scorer_for(ckpt, vocab), points)
    if args.generator:
        gen = sc.GeneratorModel.load(args.generator)
        oracle_points = em.filter_points(points, gen.order)
        report.add_model("oracle", sc.OracleScorer(gen, vocab), oracle_points)
        records = (tl.load_records(args.cohort) if args.cohort else None)
        if records:
            by_id = {r.patient_id: r for r in records}
            test_records = [by_id[t.patient_id] for t in test_tl
                            if t.patient_id in by_id]
            report.extras["boc_ceiling"] = sc.boc_ceiling(gen, test_records)
    report.save_json(args.out)
    if args.emit_csv:
        report.save_csv(args.emit_csv)
    print(report.text_table())
    return EXIT_OK


def cmd_ablate(args) -> int:
    settings = Settings(args.config)
    vocab, split, train_tl, val_tl, test_tl = load_dataset(args.data)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in VARIANT_NAMES:
            print(f"error: unknown variant {v!r} (choose from {VARIANT_NAMES})",
                  file=sys.stderr)
            return EXIT_USAGE
    points = em.enumerate_eval_points(test_tl)
    report = em.EvalReport(seed=split.seed, split_hash=split.content_hash(),
                           vocab_hash=vocab.content_hash())
    out_dir = pathlib.Path(args.out).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in variants:
        ckpt = _train_one("transformer", name, settings, args, vocab, train_tl,
                          val_tl, out_dir / f"variant-{name.replace('+', '_')}")
        report.add_model(name, _scorer_for(ckpt, vocab), points)
        print(f"[{name}] done", file=sys.stderr)
    report.save_json(args.out)
    if args.emit_csv:
        report.save_csv(args.emit_csv)
    print(report.text_table())
    return EXIT_OK


def _load_model(checkpoint_path, vocab):
    ckpt = tr.load_checkpoint(checkpoint_path,
                              expect_vocab_hash=vocab.content_hash())
    return tr.model_from_checkpoint(ckpt, vocab=vocab)


def cmd_probe(args) -> int:
    vocab = tl.Vocab.load(args.vocab)
    model = _load_model(args.checkpoint, vocab)
    cases = probe_mod.load_mcq_cases(args.cases, vocab)
    results = []
    for case in cases:
        ranked = probe_mod.mcq_rank(model, case, vocab)
        results.append({"history": [{"kind": t.kind,
                                     "value": vocab.entry(t.id).value}
                                    for t in case.history],
                        "ranking": [{"option": o, "probability": p}
                                    for o, p in ranked],
                        "label": case.label})
    with open(args.out, "w", encoding="utf-8") as fh:
        for row in results:
            fh.write(json.dumps(row) + "\n")
    print(f"wrote {len(results)} rankings to {args.out}")
    return EXIT_OK


def cmd_saliency(args) -> int:
    vocab = tl.Vocab.load(args.vocab)
    model = _load_model(args.checkpoint, vocab)
    out_rows = []
    with open(args.cases, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            context = probe_mod.tokens_from_json(d["history"], vocab)
            result = probe_mod.saliency(model, context, vocab,
                                        target=d.get("target", "argmax"),
                                        method=args.method)
            out_rows.append(result.to_json(vocab))
    with open(args.out, "w", encoding="utf-8") as fh:
        for row in out_rows:
            fh.write(json.dumps(row) + "\n")
    print(f"wrote {len(out_rows)} saliency rows to {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import ServiceConfig, run_service
    config = ServiceConfig(checkpoint_path=args.checkpoint,
                           vocab_path=args.vocab, host=args.host,
                           port=args.port, labels_path=args.labels,
                           ui_dir=args.ui)
    return run_service(config)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medseq",
        description="Forecast the next disorder in patient concept timelines.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="flat key=value config file")

    p = sub.add_parser("synth-gen", help="generate a synthetic cohort")
    add_config(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--patients", type=int)
    p.add_argument("--concepts", type=int)
    p.add_argument("--order", type=int, choices=(1, 2))
    p.add_argument("--determinism", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--model-out")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("build-data", help="records -> timelines/vocab/split")
    add_config(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--min-freq", type=int)
    p.add_argument("--min-confirmations", type=int)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--min-tokens", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_data)

    def add_train_flags(p):
        add_config(p)
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--warmup-steps", type=int)
        p.add_argument("--max-steps", type=int)
        p.add_argument("--max-epochs", type=int)
        p.add_argument("--eval-every", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--n-layers", type=int)
        p.add_argument("--n-heads", type=int)
        p.add_argument("--d-model", type=int)
        p.add_argument("--max-seq", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--hidden-size", type=int)
        p.add_argument("--embeddings", help="pretrained embedding tsv")

    p = sub.add_parser("train", help="train one model")
    add_train_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--family", choices=("transformer", "lstm"))
    p.add_argument("--variant", choices=VARIANT_NAMES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score checkpoints on the test split")
    add_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", action="append", required=True,
                   metavar="[NAME=]PATH")
    p.add_argument("--generator", help="generator model json for oracle rows")
    p.add_argument("--cohort", help="cohort jsonl (for the bag ceiling)")
    p.add_argument("--min-context-concepts", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train + evaluate a variant list")
    add_train_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--variants", required=True,
                   help="comma-separated variant names")
    p.add_argument("--out", required=True)
    p.add_argument("--emit-csv")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("probe", help="rank multiple-choice cases")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--cases", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("saliency", help="token attribution for forecasts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--cases", required=True)
    p.add_argument("--method", choices=("grad_l2", "grad_x_input"),
                   default="grad_l2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("serve", help="run the inference HTTP service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8077)
    p.add_argument("--labels", help="concept code -> display label tsv")
    p.add_argument("--ui", help="static frontend directory to mount at /")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing input file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_DATA
    except nm.NonFiniteError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (tr.TrainingError, tr.CheckpointError, tl.TimelineError,
            sc.CohortError, em.EvalError, probe_mod.ProbeError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
