"""Command-line entry point: ``cpl <command> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 failed check.
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import sys

from . import checkpoint
from .config import Config, load_config
from .errors import ConfigError, CPLError, DataError, GenerationError
from .evaluation import REPORT_FIELDS
from .pipeline import (VARIANTS, Pretrained, RunManifest, build_extractor, build_reasoner, evaluate_runs,
                       new_manifest, open_dataset, pretrained_extractor, pretrained_reasoner, run_two_step,
                       run_variant, save_run, timestamp)
from .synthetic import PatternSpec, generate, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("cpl")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _common(p: argparse.ArgumentParser, data: bool = True, seeds: bool = False) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    if seeds:
        p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds, one run each")
    if data:
        p.add_argument("--data", help="dataset directory (graph.txt, corpus.jsonl, split files)")
        p.add_argument("--kg", help="graph triple file")
        p.add_argument("--corpus", help="JSON-lines corpus file")
        p.add_argument("--ratio", type=float, default=1.0, help="fraction of graph triples to keep")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpl", description="Collaborative graph reasoning and fact extraction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a planted-pattern dataset")
    _common(p, data=False)
    p.add_argument("--entities", type=int, default=200)
    p.add_argument("--corpus-fraction", type=float, default=0.5)
    p.add_argument("--horizon", type=int, default=3)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("pretrain-reasoner", help="REINFORCE on the base graph")
    _common(p)
    p.set_defaults(func=cmd_pretrain, agent="reasoner")

    p = sub.add_parser("pretrain-extractor", help="supervised training on distant-supervision labels")
    _common(p)
    p.set_defaults(func=cmd_pretrain, agent="extractor")

    for name, modes, default in (("train", sorted(VARIANTS), "cpl"),
                                 ("ablate", sorted(set(VARIANTS) - {"cpl"}), None)):
        p = sub.add_parser(name, help="joint training" if name == "train" else "ablation variant")
        _common(p, seeds=True)
        p.add_argument("--mode", choices=modes, default=default, required=default is None)
        p.add_argument("--checkpoint", action="append", default=[],
                       help="pre-trained checkpoint file or directory (repeatable)")
        p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="beam-search evaluation of trained runs")
    _common(p, data=False, seeds=True)
    p.add_argument("--checkpoint", action="append", required=True,
                   help="run directory or manifest written by train/ablate (repeatable)")
    p.add_argument("--beam-width", type=int)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline-two-step", help="static augmentation baseline")
    _common(p, seeds=True)
    p.add_argument("--threshold", type=float, action="append",
                   help="confidence threshold (repeatable; default: the config's list)")
    p.add_argument("--beam-width", type=int)
    p.set_defaults(func=cmd_two_step)

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    p.add_argument("--out", help="optional directory for the result table")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_grad_check)
    return parser


# ----------------------------------------------------------------------
# helpers


def _config(args) -> Config:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "beam_width", None) is not None:
        overrides["beam_width"] = args.beam_width
    return load_config(args.config, **overrides)


def _seeds(args, cfg: Config) -> list[int]:
    if getattr(args, "seeds", None):
        return args.seeds
    return [cfg.seed]


def _dataset(args, cfg: Config):
    if not (args.data or args.kg):
        raise ConfigError("give --data or --kg")
    return open_dataset(cfg, args.data, args.kg, args.corpus, args.ratio)


def _finish(man: RunManifest, out_dir: str) -> str:
    man.finished = timestamp()
    return man.write(out_dir)


# ----------------------------------------------------------------------
# commands


def cmd_gen_synthetic(args) -> int:
    cfg = _config(args)
    seed = args.seed if args.seed is not None else 0
    spec = PatternSpec(n_entities=args.entities, corpus_fraction=args.corpus_fraction, T=args.horizon, seed=seed)
    try:
        ds = generate(spec)
    except GenerationError as exc:
        raise ConfigError(str(exc)) from None
    paths = write_dataset(ds, args.out)
    man = RunManifest(command="gen-synthetic", seed=seed, mode="", config=cfg.dump(),
                      config_hash=cfg.full_hash(), artifacts=dict(paths), started=timestamp())
    _finish(man, args.out)
    with open(paths["meta"], encoding="utf-8") as fh:
        meta = json.load(fh)
    print(json.dumps(meta["queries"], sort_keys=True))
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    data = _dataset(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    man = new_manifest(f"pretrain-{args.agent}", cfg, cfg.seed, "", data, args.ratio)
    if args.agent == "reasoner":
        model, curve = pretrained_reasoner(cfg, data, cfg.seed)
        column = "success_rate"
    else:
        model, curve = pretrained_extractor(cfg, data, cfg.seed)
        column = "loss"
    ck = os.path.join(args.out, f"{args.agent}.ckpt")
    checkpoint.save(ck, model.store, args.agent, cfg.model_hash(args.agent))
    curve_path = os.path.join(args.out, f"pretrain_{args.agent}.csv")
    with open(curve_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", column])
        w.writerows([i, f"{v:.6f}"] for i, v in enumerate(curve))
    man.checkpoints[args.agent] = ck
    man.metrics[f"pretrain_{args.agent}"] = curve_path
    _finish(man, args.out)
    print(f"{args.agent} checkpoint: {ck}")
    return EXIT_OK


def _pretrained_from(paths: list[str], cfg: Config, data, seed: int, mode: str) -> Pretrained | None:
    """Collect pre-trained stores from checkpoint files or directories, if any were given."""
    if not paths:
        return None
    found: dict[str, bytes] = {}
    for p in paths:
        files = sorted(glob.glob(os.path.join(p, "*.ckpt"))) if os.path.isdir(p) else [p]
        for f in files:
            if not os.path.exists(f):
                raise DataError(f"checkpoint not found: {f}")
            with open(f, "rb") as fh:
                raw = fh.read()
            agent, _, _, _ = checkpoint.decode(raw, f)
            found[agent] = raw
    # validate against freshly built models before training starts
    if "reasoner" not in found:
        raise DataError("no reasoner checkpoint among --checkpoint paths")
    checkpoint.load_bytes_into(found["reasoner"], build_reasoner(cfg, data.kg, seed).store, "reasoner",
                               cfg.model_hash("reasoner"))
    if mode != "reasoner-only":
        if "extractor" not in found:
            raise DataError("no extractor checkpoint among --checkpoint paths")
        checkpoint.load_bytes_into(found["extractor"], build_extractor(cfg, data, data.kg, seed).store,
                                   "extractor", cfg.model_hash("extractor"))
    return Pretrained(found["reasoner"], found.get("extractor") if mode != "reasoner-only" else None)


def cmd_train(args) -> int:
    cfg = _config(args)
    data = _dataset(args, cfg)
    for seed in _seeds(args, cfg):
        scfg = cfg.replace(seed=seed)
        out = os.path.join(args.out, f"seed_{seed}")
        os.makedirs(out, exist_ok=True)
        pre = _pretrained_from(args.checkpoint, scfg, data, seed, args.mode)
        man = new_manifest(args.command, scfg, seed, args.mode, data, args.ratio)
        metrics = os.path.join(out, "metrics.csv")
        run = run_variant(scfg, data, args.mode, seed, pre, metrics)
        man.metrics["train"] = metrics
        save_run(out, run, man)
        _finish(man, out)
        print(f"seed {seed}: best valid mrr {run.result.best_mrr:.4f} at epoch {run.result.best_epoch}, "
              f"{len(run.result.retained)} retained edges -> {out}")
    return EXIT_OK


def _manifests(args) -> list[RunManifest]:
    found = []
    for p in args.checkpoint:
        if os.path.isfile(p) or os.path.exists(os.path.join(p, "manifest.json")):
            found.append(RunManifest.read(p))
        else:
            subs = sorted(glob.glob(os.path.join(p, "seed_*", "manifest.json")))
            if not subs:
                raise DataError(f"no run manifest under {p}")
            found.extend(RunManifest.read(s) for s in subs)
    if getattr(args, "seeds", None):
        found = [m for m in found if m.seed in set(args.seeds)]
        if not found:
            raise DataError("no run matches the requested seeds")
    return sorted(found, key=lambda m: m.seed)


def _print_table(rows: list[dict]) -> None:
    print("\t".join(REPORT_FIELDS))
    for r in rows:
        print("\t".join(f"{r[k]:.4f}" if isinstance(r[k], float) else str(r[k]) for k in REPORT_FIELDS))


def cmd_evaluate(args) -> int:
    mans = _manifests(args)
    rows, path = evaluate_runs(mans, args.out, args.split, args.beam_width)
    man = RunManifest(command="evaluate", seed=mans[0].seed, mode=mans[0].mode, config=mans[0].config,
                      config_hash=mans[0].config_hash, data=dict(mans[0].data),
                      fingerprints=dict(mans[0].fingerprints), metrics={"report": path}, started=timestamp())
    man.artifacts.update({f"run_{m.seed}": os.path.dirname(m.checkpoints["reasoner"]) for m in mans})
    man.artifacts.update({f"paths_{m.seed}": os.path.join(args.out, f"paths_seed{m.seed}.txt") for m in mans})
    _finish(man, args.out)
    _print_table(rows)
    return EXIT_OK


def cmd_two_step(args) -> int:
    from .evaluation import evaluate_queries, write_report

    cfg = _config(args)
    data = _dataset(args, cfg)
    thresholds = args.threshold if args.threshold else cfg.threshold_list()
    if any(not 0.0 <= t <= 1.0 for t in thresholds):
        raise ConfigError("thresholds must lie in [0, 1]")
    os.makedirs(args.out, exist_ok=True)
    man = new_manifest("baseline-two-step", cfg, cfg.seed, "two-step", data, args.ratio)
    per_seed = {}
    sweep_path = os.path.join(args.out, "thresholds.csv")
    with open(sweep_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "threshold", "edges_added", "valid_mrr", "best"])
        for seed in _seeds(args, cfg):
            res = run_two_step(cfg.replace(seed=seed), data, seed, thresholds)
            for r in res.runs:
                w.writerow([seed, r.threshold, r.edges_added, f"{r.valid_metrics.get('mrr', 0.0):.6f}",
                            int(r is res.best)])
            b = res.best
            ev = evaluate_queries(data.queries["test"], b.kg, b.reasoner, None, cfg.beam_width, cfg.T)
            per_seed[seed] = (data.queries["test"], ev.ranks)
            print(f"seed {seed}: best threshold {b.threshold}, {b.edges_added} edges added")
    report = os.path.join(args.out, "report.csv")
    rows = write_report(report, data.kg, per_seed, cfg.hits_inclusive)
    man.metrics.update({"report": report, "thresholds": sweep_path})
    _finish(man, args.out)
    _print_table(rows)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradcheck import TOLERANCE, run_suite

    if args.trials < 1:
        raise ConfigError("--trials must be positive")
    results = run_suite(args.trials, args.seed)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{r.name:22s} worst={r.worst:.3e} trials={r.trials} {'ok' if r.passed else 'FAIL'}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "gradcheck.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "trials", "worst_relative_error", "tolerance", "passed"])
            for r in results:
                w.writerow([r.name, r.trials, f"{r.worst:.6e}", TOLERANCE, int(r.passed)])
        cfg = Config(seed=args.seed)
        man = RunManifest(command="grad-check", seed=args.seed, mode="", config=cfg.dump(),
                          config_hash=cfg.full_hash(), metrics={"gradcheck": path}, started=timestamp())
        _finish(man, args.out)
    if failed:
        print(f"{len(failed)} gradient check(s) failed", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"cpl: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"cpl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CPLError as exc:
        print(f"cpl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
