"""Run orchestration shared by the command line and the acceptance suite.

A run owns one output directory.  It holds checkpoints, metric CSVs,
the retained-edge list and a ``manifest.json`` that points at all of them.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field

from . import checkpoint
from .baselines import TwoStepResult, two_step_baseline
from .config import Config, parse_config
from .corpus import distant_supervision_labels
from .data import Dataset, fingerprint, load_dataset
from .errors import ConfigError, DataError
from .evaluation import EvalResult, evaluate_queries, write_path_report, write_report
from .extractor import Extractor
from .graph import KnowledgeGraph, Triple, load_queries
from .reasoner import Reasoner
from .rng import stream
from .trainer import TrainResult, pretrain_extractor, pretrain_reasoner, train

# ablation variants: CPL1 drops adaptive sampling and freezes the extractor,
# CPL2 drops adaptive sampling only, reasoner-only never sees the corpus
VARIANTS = {
    "cpl": {},
    "frozen-extractor": {"freeze_extractor": True, "e_a": 0},
    "no-adaptive": {"e_a": 0},
    "reasoner-only": {},
}

MANIFEST = "manifest.json"
# query splits derived from a bare graph file never depend on the training seed
DATA_SPLIT_SEED = 0


def variant_config(cfg: Config, mode: str) -> Config:
    if mode not in VARIANTS:
        raise ConfigError(f"unknown mode {mode!r}; choose from {sorted(VARIANTS)}")
    return cfg.replace(**VARIANTS[mode])


@dataclass
class RunManifest:
    command: str
    seed: int
    mode: str
    config: str
    config_hash: str
    data: dict[str, str] = field(default_factory=dict)
    fingerprints: dict[str, str] = field(default_factory=dict)
    checkpoints: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, str] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    ratio: float = 1.0
    started: str = ""
    finished: str = ""

    def write(self, out_dir: str) -> str:
        path = os.path.join(out_dir, MANIFEST)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def read(cls, path: str) -> "RunManifest":
        if os.path.isdir(path):
            path = os.path.join(path, MANIFEST)
        if not os.path.exists(path):
            raise DataError(f"manifest not found: {path}")
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def cfg(self) -> Config:
        return parse_config(self.config)


def timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime())


def new_manifest(command: str, cfg: Config, seed: int, mode: str, data: Dataset,
                 ratio: float = 1.0) -> RunManifest:
    return RunManifest(command=command, seed=seed, mode=mode, config=cfg.dump(), config_hash=cfg.full_hash(),
                       data=dict(data.files), ratio=ratio,
                       fingerprints={k: fingerprint(p) for k, p in sorted(data.files.items())},
                       started=timestamp())


def open_dataset(cfg: Config, data_dir: str | None = None, kg_path: str | None = None,
                 corpus_path: str | None = None, ratio: float = 1.0, seed: int = DATA_SPLIT_SEED) -> Dataset:
    return load_dataset(data_dir, kg_path, corpus_path, inverse=True, inverse_extracted=cfg.inverse_extracted,
                        max_sentence_len=cfg.max_sentence_len, eval_relations=cfg.eval_relation_names(),
                        ratio=ratio, seed=seed)


def dataset_from_manifest(man: RunManifest) -> Dataset:
    """Reload exactly the files a run used, refusing silently changed inputs."""
    cfg = man.cfg()
    for name, path in man.data.items():
        if not os.path.exists(path):
            raise DataError(f"{name} file from manifest is missing: {path}")
        if fingerprint(path) != man.fingerprints.get(name):
            raise DataError(f"{name} file changed since the run: {path}")
    graph = man.data.get("graph")
    data_dir = os.path.dirname(graph) if graph else None
    return load_dataset(data_dir, graph, man.data.get("corpus"), True, cfg.inverse_extracted,
                        cfg.max_sentence_len, cfg.eval_relation_names(), man.ratio, DATA_SPLIT_SEED)


# ----------------------------------------------------------------------
# models


def build_reasoner(cfg: Config, kg: KnowledgeGraph, seed: int) -> Reasoner:
    return Reasoner(kg.n_entities, kg.n_relations, cfg.reasoner_config(), stream(seed, "reasoner-init"))


def build_extractor(cfg: Config, data: Dataset, kg: KnowledgeGraph, seed: int) -> Extractor:
    if data.corpus is None:
        raise DataError("this command needs a corpus")
    return Extractor(data.corpus, kg, cfg.extractor_config(), stream(seed, "extractor-init"))


def pretrained_reasoner(cfg: Config, data: Dataset, seed: int) -> tuple[Reasoner, list[float]]:
    r = build_reasoner(cfg, data.kg, seed)
    rates = pretrain_reasoner(r, data.kg, data.queries["train"], cfg.pretrain_reasoner_epochs, cfg,
                              stream(seed, "pretrain-reasoner"))
    return r, rates


def pretrained_extractor(cfg: Config, data: Dataset, seed: int) -> tuple[Extractor, list[float]]:
    x = build_extractor(cfg, data, data.kg, seed)
    labels = distant_supervision_labels(data.corpus, data.kg)
    curve = pretrain_extractor(x, labels, cfg.pretrain_extractor_epochs, cfg, stream(seed, "pretrain-extractor"))
    return x, curve


@dataclass
class Pretrained:
    """Serialized pre-trained stores so several variants can start from the same point."""

    reasoner: bytes
    extractor: bytes | None


def pretrain_both(cfg: Config, data: Dataset, seed: int, with_extractor: bool = True) -> Pretrained:
    r, _ = pretrained_reasoner(cfg, data, seed)
    xb = None
    if with_extractor and data.corpus is not None:
        x, _ = pretrained_extractor(cfg, data, seed)
        xb = checkpoint.encode(x.store, "extractor", cfg.model_hash("extractor"))
    return Pretrained(checkpoint.encode(r.store, "reasoner", cfg.model_hash("reasoner")), xb)


@dataclass
class RunOutput:
    mode: str
    seed: int
    cfg: Config
    kg: KnowledgeGraph
    reasoner: Reasoner
    extractor: Extractor | None
    result: TrainResult


def run_variant(cfg: Config, data: Dataset, mode: str, seed: int, pre: Pretrained | None = None,
                metrics_path: str | None = None) -> RunOutput:
    """Pre-train (or load ``pre``) and jointly train one variant on a private copy of the graph."""
    vcfg = variant_config(cfg, mode).replace(seed=seed)
    if pre is None:
        pre = pretrain_both(vcfg, data, seed, with_extractor=mode != "reasoner-only")
    kg = data.kg.copy()
    reasoner = build_reasoner(vcfg, kg, seed)
    checkpoint.load_bytes_into(pre.reasoner, reasoner.store, "reasoner", vcfg.model_hash("reasoner"))
    extractor = None
    if mode != "reasoner-only":
        if pre.extractor is None:
            raise DataError(f"mode {mode!r} needs a corpus")
        extractor = build_extractor(vcfg, data, kg, seed)
        checkpoint.load_bytes_into(pre.extractor, extractor.store, "extractor", vcfg.model_hash("extractor"))
    result = train(vcfg, kg, reasoner, extractor, data.queries["train"], data.queries["valid"], metrics_path,
                   stream(seed, "train"))
    return RunOutput(mode, seed, vcfg, kg, reasoner, extractor, result)


def evaluate_split(run: RunOutput, queries: list[Triple], beam_width: int | None = None) -> EvalResult:
    cfg = run.cfg
    return evaluate_queries(queries, run.kg, run.reasoner, run.extractor, beam_width or cfg.beam_width, cfg.T,
                            cfg.k_suggestions, keep_beams=True)


# ----------------------------------------------------------------------
# persistence of a trained run


def save_run(out_dir: str, run: RunOutput, man: RunManifest) -> RunManifest:
    os.makedirs(out_dir, exist_ok=True)
    rpath = os.path.join(out_dir, "reasoner.ckpt")
    checkpoint.save(rpath, run.reasoner.store, "reasoner", run.cfg.model_hash("reasoner"))
    man.checkpoints["reasoner"] = rpath
    if run.extractor is not None:
        xpath = os.path.join(out_dir, "extractor.ckpt")
        checkpoint.save(xpath, run.extractor.store, "extractor", run.cfg.model_hash("extractor"))
        man.checkpoints["extractor"] = xpath
    kept = os.path.join(out_dir, "retained.tsv")
    with open(kept, "w", encoding="utf-8") as fh:
        fh.writelines(run.kg.describe(t) + "\n" for t in run.result.retained)
    man.artifacts["retained"] = kept
    man.config = run.cfg.dump()
    man.config_hash = run.cfg.full_hash()
    return man


def load_run(man: RunManifest, data: Dataset | None = None) -> RunOutput:
    """Rebuild a trained run (models plus graph with retained edges) from its manifest."""
    cfg = man.cfg()
    data = data or dataset_from_manifest(man)
    kg = data.kg.copy()
    kept = man.artifacts.get("retained")
    if kept:
        if not os.path.exists(kept):
            raise DataError(f"retained-edge file missing: {kept}")
        for t, _ in load_queries(kept, kg):
            kg.add_retained(t)
    reasoner = build_reasoner(cfg, kg, man.seed)
    checkpoint.load_into(man.checkpoints["reasoner"], reasoner.store, "reasoner", cfg.model_hash("reasoner"))
    extractor = None
    if "extractor" in man.checkpoints:
        extractor = build_extractor(cfg, data, kg, man.seed)
        checkpoint.load_into(man.checkpoints["extractor"], extractor.store, "extractor",
                             cfg.model_hash("extractor"))
    return RunOutput(man.mode, man.seed, cfg, kg, reasoner, extractor, TrainResult())


def evaluate_runs(manifests: list[RunManifest], out_dir: str, split: str = "test",
                  beam_width: int | None = None) -> tuple[list[dict], str]:
    """Evaluate trained runs; writes ``report.csv`` plus one path report per seed."""
    os.makedirs(out_dir, exist_ok=True)
    per_seed = {}
    data = None
    inclusive = False
    for man in manifests:
        data = dataset_from_manifest(man)
        run = load_run(man, data)
        inclusive = run.cfg.hits_inclusive
        queries = data.queries[split]
        if not queries:
            raise DataError(f"no {split} queries to evaluate")
        ev = evaluate_split(run, queries, beam_width)
        per_seed[man.seed] = (queries, ev.ranks)
        write_path_report(os.path.join(out_dir, f"paths_seed{man.seed}.txt"), queries, ev.beams, run.kg,
                          data.corpus)
    path = os.path.join(out_dir, "report.csv")
    rows = write_report(path, data.kg, per_seed, inclusive)
    return rows, path


def run_two_step(cfg: Config, data: Dataset, seed: int, thresholds: list[float]) -> TwoStepResult:
    """Two-Step baseline from a freshly pre-trained extractor."""
    extractor, _ = pretrained_extractor(cfg, data, seed)
    rcfg = cfg.replace(seed=seed)

    def fit(aug: KnowledgeGraph) -> Reasoner:
        r = build_reasoner(rcfg, aug, seed)
        pretrain_reasoner(r, aug, data.queries["train"], rcfg.pretrain_reasoner_epochs, rcfg,
                          stream(seed, "pretrain-reasoner"))
        train(rcfg, aug, r, None, data.queries["train"], data.queries["valid"], None, stream(seed, "train"))
        return r

    return two_step_baseline(rcfg, data.kg, extractor, thresholds, data.queries["valid"], fit)
