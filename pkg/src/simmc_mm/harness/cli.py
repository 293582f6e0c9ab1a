"""``simmc-mm`` command line.

Exit codes: 0 ok, 1 usage error, 2 data or config error, 3 training abort.
Set ``SIMMC_MM_QUIET=1`` to silence progress lines.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from simmc_mm.errors import ConfigError, DataError, SimmcError, TrainingAbort

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ABORT = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _say(msg: str) -> None:
    if os.environ.get("SIMMC_MM_QUIET") != "1":
        print(msg, file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="simmc-mm", description="Multimodal dialogue pipeline on a synthetic SIMMC 2.0-shaped corpus.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, corpus=True):
        sp.add_argument("--seed", type=int, default=7)
        if corpus:
            sp.add_argument("--corpus", required=True, help="corpus JSON from gen-data")
        return sp

    g = common(sub.add_parser("gen-data", help="write the synthetic corpus"), corpus=False)
    g.add_argument("--out", required=True)
    g.add_argument("--scenes", type=int, default=200)
    g.add_argument("--dialogs-per-scene", type=int, default=2)

    for name in ("pretrain-itm", "pretrain-btm"):
        sp = common(sub.add_parser(name, help=f"{name[9:].upper()} matching pretraining"))
        sp.add_argument("--out", required=True)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--loss", choices=["bce", "ce"], default="bce")
        sp.add_argument("--k-neg", type=int, default=1)

    sp = common(sub.add_parser("train-disambiguation", help="subtask 1 classifier"))
    sp.add_argument("--itm", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)

    sp = common(sub.add_parser("train-coref", help="subtask 2 matcher (+M by default)"))
    sp.add_argument("--itm", required=True)
    sp.add_argument("--btm")
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--no-mention-inform", action="store_true", help="train the -M model")
    sp.add_argument("--no-itm-init", action="store_true", help="ablation -ITM: random init")
    sp.add_argument("--no-btm", action="store_true", help="ablation -BTM: object encoder reads the background")
    sp.add_argument("--no-augmentation", action="store_true", help="ablation -D: no system-utterance examples")
    sp.add_argument("--no-utterance-head", action="store_true", help="ablation -U")
    sp.add_argument("--no-system-head", action="store_true", help="ablation -S")

    sp = common(sub.add_parser("train-generator", help="subtask 4 response generator"))
    sp.add_argument("--itm", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--no-objects", action="store_true", help="ablation -O")
    sp.add_argument("--no-meta", action="store_true", help="ablation -M")
    sp.add_argument("--no-augmentation", action="store_true", help="ablation -D: no user-utterance targets")

    sp = common(sub.add_parser("evaluate", help="score a trained model on a split"))
    sp.add_argument("--task", required=True, choices=["itm", "btm", "disambiguation", "coref", "generation"])
    sp.add_argument("--model", help="checkpoint (the +M model for coref)")
    sp.add_argument("--minus-model", help="coref -M checkpoint (needed for Combined)")
    sp.add_argument("--variant", choices=["OursPlusM", "OursMinusM", "OnlyS", "Combined"])
    sp.add_argument("--split", default="test", choices=["train", "dev", "test"])
    sp.add_argument("--predictions", help="write per-item JSON lines here")
    sp.add_argument("--report", help="write the MetricReport JSON here")

    sp = common(sub.add_parser("generate", help="greedy responses for a split"))
    sp.add_argument("--model", required=True)
    sp.add_argument("--split", default="test", choices=["train", "dev", "test"])
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-new-tokens", type=int, default=32)

    sp = sub.add_parser("repro-all", help="full pipeline with summary.json")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out-dir", default="repro_out")
    return p


# -- commands -------------------------------------------------------------------------

def _corpus(rc):
    from simmc_mm.corpus import load_corpus
    return load_corpus(rc.corpus)


def _matching(path, tag):
    from simmc_mm.harness import checkpoint as ck
    return ck.matching_from_checkpoint(ck.load_checkpoint(path, tag))


def cmd_gen_data(a, rc):
    from simmc_mm.corpus import CorpusConfig, generate_corpus, save_corpus
    corpus = generate_corpus(CorpusConfig(seed=rc.seed, n_scenes=a.scenes, dialogs_per_scene=a.dialogs_per_scene))
    save_corpus(corpus, rc.out)
    _say(f"wrote {len(corpus.dialogs)} dialogs over {len(corpus.scenes)} scenes to {rc.out}")


def cmd_pretrain(a, rc):
    from simmc_mm.harness import checkpoint as ck
    from simmc_mm.harness.pipeline import PRETRAIN_EPOCHS, pretrain
    objective = a.command[len("pretrain-"):]
    corpus = _corpus(rc)
    run, report = pretrain(corpus, objective, rc.seed, rc.optim(PRETRAIN_EPOCHS, 1e-3), loss=a.loss, k_neg=a.k_neg)
    for row in run.log:
        _say(json.dumps(row))
    ck.save_checkpoint(ck.matching_checkpoint(run.model, corpus.vocab), rc.out)
    print(json.dumps(report.to_dict()))


def cmd_train_disambiguation(a, rc):
    from simmc_mm.disambiguation import DisambiguationConfig, train_subtask1
    from simmc_mm.harness import checkpoint as ck
    corpus = _corpus(rc)
    base = DisambiguationConfig(seed=rc.seed)
    run = train_subtask1(corpus, _matching(rc.checkpoints["itm"], "itm"),
                         replace(base, optim=rc.optim(base.optim.epochs, base.optim.lr)))
    for row in run.log:
        _say(json.dumps(row))
    ck.save_checkpoint(ck.disambiguation_checkpoint(run.model, corpus.vocab), rc.out)


def cmd_train_coref(a, rc):
    from simmc_mm.coref import CorefConfig, train_coref
    from simmc_mm.harness import checkpoint as ck
    corpus = _corpus(rc)
    base = CorefConfig(seed=rc.seed, **rc.flags)
    cfg = replace(base, optim=rc.optim(base.optim.epochs, base.optim.lr))
    btm = _matching(rc.checkpoints["btm"], "btm") if "btm" in rc.checkpoints else None
    if cfg.use_btm_encoder and btm is None:
        raise ConfigError("train-coref needs --btm unless --no-btm is given")
    run = train_coref(corpus, _matching(rc.checkpoints["itm"], "itm"), btm, cfg)
    for row in run.log:
        _say(json.dumps(row))
    ck.save_checkpoint(ck.coref_checkpoint(run.model, cfg.flags(), corpus.vocab), rc.out)


def cmd_train_generator(a, rc):
    from simmc_mm.generation import GeneratorConfig, train_generator
    from simmc_mm.harness import checkpoint as ck
    from simmc_mm.harness.pipeline import generator_flags
    corpus = _corpus(rc)
    base = GeneratorConfig(seed=rc.seed, **rc.flags)
    cfg = replace(base, optim=rc.optim(base.optim.epochs, base.optim.lr))
    run = train_generator(corpus, _matching(rc.checkpoints["itm"], "itm"), cfg)
    for row in run.log:
        _say(json.dumps(row))
    ck.save_checkpoint(ck.generator_checkpoint(run.model, generator_flags(cfg), corpus.vocab), rc.out)


def cmd_evaluate(a, rc):
    from simmc_mm.coref import Variant
    from simmc_mm.harness import checkpoint as ck
    from simmc_mm.harness import pipeline as pl
    from simmc_mm.metrics import MetricReport
    from simmc_mm.pretrain import PretrainConfig, evaluate_matching
    if "model" not in rc.checkpoints:
        raise ConfigError(f"evaluate --task {a.task} needs --model")
    corpus = _corpus(rc)
    rows = None
    if a.task in ("itm", "btm"):
        model = _matching(rc.checkpoints["model"], a.task)
        _, acc = evaluate_matching(model, corpus, a.split, PretrainConfig(objective=a.task, seed=rc.seed))
        report = MetricReport(f"{a.task}_pair_accuracy", acc, a.split)
    elif a.task == "disambiguation":
        model = ck.disambiguation_from_checkpoint(ck.load_checkpoint(rc.checkpoints["model"], "subtask1"))
        rows, report = pl.disambiguation_predictions(model, corpus, a.split)
    elif a.task == "coref":
        first = ck.coref_from_checkpoint(ck.load_checkpoint(rc.checkpoints["model"], ("coref+M", "coref-M")))
        models = {first.variant: first}
        if "minus_model" in rc.checkpoints:
            second = ck.coref_from_checkpoint(ck.load_checkpoint(rc.checkpoints["minus_model"], "coref-M"))
            models[second.variant] = second
        variant = a.variant or (Variant.COMBINED.value if len(models) == 2 else first.variant.value)
        rows, report = pl.coref_predictions(models, variant, corpus, a.split)
    else:
        c = ck.load_checkpoint(rc.checkpoints["model"], "generator")
        model = ck.generator_from_checkpoint(c)
        rows, report = pl.generation_predictions(model, corpus, a.split,
                                                 pl.generator_config_from_flags(c.config["flags"], rc.seed))
    if a.predictions and rows is not None:
        pl.write_jsonl(Path(a.predictions), rows)
    if a.report:
        Path(a.report).write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    print(json.dumps(report.to_dict()))


def cmd_generate(a, rc):
    from simmc_mm.generation import generate_split
    from simmc_mm.harness import checkpoint as ck
    from simmc_mm.harness import pipeline as pl
    c = ck.load_checkpoint(rc.checkpoints["model"], "generator")
    model = ck.generator_from_checkpoint(c)
    corpus = _corpus(rc)
    rows = generate_split(model, corpus, a.split, pl.generator_config_from_flags(c.config["flags"], rc.seed),
                          max_new_tokens=a.max_new_tokens)
    pl.write_jsonl(rc.out, [{"dialog_id": e.dialog_id, "turn": e.turn, "generated": " ".join(g),
                             "reference": " ".join(r)} for e, g, r in rows])


def cmd_repro_all(a, rc):
    from simmc_mm.harness.pipeline import repro_all
    summary = repro_all(rc.seed, rc.out, progress=_say)
    for key, rep in summary["reports"].items():
        print(f"{key}: {rep['value']:.4f}")


COMMANDS = {
    "gen-data": cmd_gen_data, "pretrain-itm": cmd_pretrain, "pretrain-btm": cmd_pretrain,
    "train-disambiguation": cmd_train_disambiguation, "train-coref": cmd_train_coref,
    "train-generator": cmd_train_generator, "evaluate": cmd_evaluate, "generate": cmd_generate,
    "repro-all": cmd_repro_all,
}


def run_config(a):
    from simmc_mm.harness.pipeline import RunConfig
    ckpts = {k: getattr(a, k) for k in ("itm", "btm", "model", "minus_model") if getattr(a, k, None)}
    flags = {}
    if a.command == "train-coref":
        flags = {"use_mention_inform": not a.no_mention_inform, "use_itm_init": not a.no_itm_init,
                 "use_btm_encoder": not a.no_btm, "use_system_augmentation": not a.no_augmentation,
                 "use_utterance_head": not a.no_utterance_head, "use_system_head": not a.no_system_head}
    elif a.command == "train-generator":
        flags = {"use_objects": not a.no_objects, "use_meta": not a.no_meta,
                 "use_user_utterance_augmentation": not a.no_augmentation}
    out = getattr(a, "out", None) or getattr(a, "out_dir", None)
    return RunConfig(a.command, a.seed, getattr(a, "corpus", None), ckpts, out,
                     getattr(a, "epochs", None), getattr(a, "lr", None), flags)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = run_config(args)
        rc.require_inputs()
        COMMANDS[args.command](args, rc)
    except TrainingAbort as exc:
        print(f"simmc-mm: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (DataError, ConfigError, SimmcError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"simmc-mm: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
