"""Task runners shared by the CLI subcommands and ``repro-all``."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from simmc_mm.coref import CorefConfig, Variant, evaluate_coref, predict_split, train_coref
from simmc_mm.corpus import Corpus, CorpusConfig, generate_corpus, load_corpus, save_corpus
from simmc_mm.disambiguation import DisambiguationConfig, labeled_turns, predict_turns, train_subtask1
from simmc_mm.errors import ConfigError
from simmc_mm.generation import GeneratorConfig, generate_split, train_generator
from simmc_mm.harness import checkpoint as ck
from simmc_mm.metrics import MetricReport, accuracy_report, bleu_report, f1_report
from simmc_mm.pretrain import PretrainConfig, evaluate_matching, train_matching
from simmc_mm.training import OptimConfig

PRETRAIN_EPOCHS = 10
FINETUNE_EPOCHS = 5
EVAL_SPLIT = "test"


@dataclass
class RunConfig:
    """Everything one command needs. Paths are resolved up front so a typo
    fails before any training starts."""

    command: str
    seed: int
    corpus: Path | None = None
    checkpoints: dict[str, Path] = field(default_factory=dict)
    out: Path | None = None
    epochs: int | None = None
    lr: float | None = None
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("a seed is required")
        self.seed = int(self.seed)
        self.corpus = Path(self.corpus).resolve() if self.corpus is not None else None
        self.out = Path(self.out).resolve() if self.out is not None else None
        self.checkpoints = {k: Path(v).resolve() for k, v in self.checkpoints.items() if v is not None}

    def require_inputs(self) -> None:
        for name, path in [("corpus", self.corpus), *self.checkpoints.items()]:
            if path is not None and not path.is_file():
                raise ConfigError(f"{name} file not found: {path}")

    def optim(self, default_epochs: int, default_lr: float) -> OptimConfig:
        return OptimConfig(epochs=default_epochs if self.epochs is None else self.epochs,
                           lr=default_lr if self.lr is None else self.lr)


def write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


# -- pretraining ----------------------------------------------------------------

def pretrain(corpus: Corpus, objective: str, seed: int, optim: OptimConfig | None = None, **kw):
    cfg = PretrainConfig(objective=objective, seed=seed, **kw)
    if optim is not None:
        cfg = replace(cfg, optim=optim)
    run = train_matching(corpus, cfg)
    _, acc = evaluate_matching(run.model, corpus, EVAL_SPLIT, cfg)
    report = MetricReport(f"{objective}_pair_accuracy", acc, EVAL_SPLIT,
                          {"epochs": cfg.optim.epochs, "dev_curve": [r["accuracy"] for r in run.log
                                                                      if r["split"] == "dev"]})
    return run, report


# -- subtask runners --------------------------------------------------------------

def disambiguation_predictions(model, corpus: Corpus, split: str):
    items = labeled_turns(corpus, corpus.split(split))
    preds, probs = predict_turns(model, items)
    rows = [{"dialog_id": x.dialog_id, "turn": x.turn, "label": bool(p), "prob": float(q)}
            for x, p, q in zip(items, preds, probs)]
    return rows, accuracy_report(preds, [x.label for x in items], split)


def coref_predictions(models: dict, variant, corpus: Corpus, split: str):
    results = predict_split(models, variant, corpus, split)
    rows = []
    for e, decisions in results:
        for d in decisions:
            rows.append({"dialog_id": e.dialog_id, "turn": e.turn, "object_id": d.object_id,
                         "category": d.category.value, "score": d.score, "matched": d.matched})
    preds = [{d.object_id for d in ds if d.matched} for _, ds in results]
    report = f1_report(preds, [e.gold for e, _ in results], split)
    report.name = f"coref_f1[{Variant(variant).value}]"
    return rows, report


def generation_predictions(model, corpus: Corpus, split: str, cfg: GeneratorConfig):
    rows = generate_split(model, corpus, split, cfg)
    out = [{"dialog_id": e.dialog_id, "turn": e.turn, "generated": " ".join(g), "reference": " ".join(r)}
           for e, g, r in rows]
    return out, bleu_report([g for _, g, _ in rows], [r for _, _, r in rows], split)


def generator_flags(cfg: GeneratorConfig) -> dict:
    return {"use_objects": cfg.use_objects, "use_meta": cfg.use_meta,
            "use_user_utterance_augmentation": cfg.use_user_utterance_augmentation}


def generator_config_from_flags(flags: dict, seed: int = 7) -> GeneratorConfig:
    return GeneratorConfig(seed=seed, use_objects=flags.get("use_objects", True),
                           use_meta=flags.get("use_meta", True),
                           use_user_utterance_augmentation=flags.get("use_user_utterance_augmentation", True))


# -- end to end -------------------------------------------------------------------

def repro_all(seed: int, out_dir, corpus_config: CorpusConfig | None = None,
              progress=print) -> dict:
    """Corpus, both pretraining runs, every subtask model and its ablations,
    evaluated on the test split. Writes checkpoints, prediction files,
    ``summary.json`` (metrics only, so it is comparable across runs) and
    ``timings.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    reports: dict[str, dict] = {}

    def step(name):
        progress(f"[repro-all] {name}")
        return time.perf_counter()

    t = step("corpus")
    cc = replace(corpus_config or CorpusConfig(), seed=seed)
    corpus = generate_corpus(cc)
    save_corpus(corpus, out / "corpus.json")
    corpus = load_corpus(out / "corpus.json")
    timings["corpus"] = time.perf_counter() - t

    for objective in ("itm", "btm"):
        t = step(f"pretrain {objective}")
        run, rep = pretrain(corpus, objective, seed)
        ck.save_checkpoint(ck.matching_checkpoint(run.model, corpus.vocab), out / f"{objective}.ckpt")
        reports[objective] = rep.to_dict()
        timings[objective] = time.perf_counter() - t
    itm = ck.matching_from_checkpoint(ck.load_checkpoint(out / "itm.ckpt", "itm"))
    btm = ck.matching_from_checkpoint(ck.load_checkpoint(out / "btm.ckpt", "btm"))

    t = step("disambiguation")
    drun = train_subtask1(corpus, itm, DisambiguationConfig(seed=seed), eval_split="dev")
    ck.save_checkpoint(ck.disambiguation_checkpoint(drun.model, corpus.vocab), out / "disambiguation.ckpt")
    rows, rep = disambiguation_predictions(drun.model, corpus, EVAL_SPLIT)
    write_jsonl(out / "disambiguation.jsonl", rows)
    reports["disambiguation"] = rep.to_dict()
    timings["disambiguation"] = time.perf_counter() - t

    coref_models = {}
    for label, mention in (("plus_m", True), ("minus_m", False)):
        t = step(f"coref {label}")
        cfg = CorefConfig(seed=seed, use_mention_inform=mention)
        crun = train_coref(corpus, itm, btm, cfg)
        ck.save_checkpoint(ck.coref_checkpoint(crun.model, cfg.flags(), corpus.vocab), out / f"coref_{label}.ckpt")
        coref_models[cfg.variant] = crun.model
        timings[f"coref_{label}"] = time.perf_counter() - t
    for variant in Variant:
        rows, rep = coref_predictions(coref_models, variant, corpus, EVAL_SPLIT)
        write_jsonl(out / f"coref_{variant.value}.jsonl", rows)
        reports[f"coref/{variant.value}"] = rep.to_dict()

    t = step("coref -ITM")
    cfg = CorefConfig(seed=seed, use_mention_inform=True, use_itm_init=False)
    nrun = train_coref(corpus, itm, btm, cfg)
    ck.save_checkpoint(ck.coref_checkpoint(nrun.model, cfg.flags(), corpus.vocab), out / "coref_plus_m_no_itm.ckpt")
    rows, rep = coref_predictions({Variant.PLUS_M: nrun.model}, Variant.PLUS_M, corpus, EVAL_SPLIT)
    write_jsonl(out / "coref_OursPlusM_no_itm.jsonl", rows)
    reports["coref_no_itm/OursPlusM"] = rep.to_dict()
    timings["coref_no_itm"] = time.perf_counter() - t

    for label, use_meta in (("generation", True), ("generation_no_meta", False)):
        t = step(label)
        gcfg = GeneratorConfig(seed=seed, use_meta=use_meta)
        grun = train_generator(corpus, itm, gcfg)
        ck.save_checkpoint(ck.generator_checkpoint(grun.model, generator_flags(gcfg), corpus.vocab),
                           out / f"{label}.ckpt")
        rows, rep = generation_predictions(grun.model, corpus, EVAL_SPLIT, gcfg)
        write_jsonl(out / f"{label}.jsonl", rows)
        reports[label] = rep.to_dict()
        timings[label] = time.perf_counter() - t

    summary = {"seed": seed, "split": EVAL_SPLIT, "reports": reports}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    (out / "timings.json").write_text(json.dumps(timings, indent=1, sort_keys=True) + "\n")
    return summary
