"""Command-line entry point: training, evaluation, clustering and long-tail
reports, geometry certification, gradient checks, and lambda sweeps, each
writing a run manifest with resolved config and dataset fingerprints.

Data files resolve against --data-dir or the PROTOKG_DATA_DIR environment
variable; named datasets expect <data-dir>/<name>/train.tsv|valid.tsv|test.tsv
for completion and kg1.tsv|kg2.tsv|seeds.tsv for alignment. The built-in
"fixture" dataset is generated deterministically from --fixture-seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoints import (load_alignment_embeddings, load_completion_checkpoint,
                          save_alignment_checkpoint, save_completion_checkpoint)
from .configio import (config_to_mapping, load_config_file, parse_config,
                       resolve_alignment_config, resolve_completion_config,
                       serialize_config, shipped_config, shipped_config_names)
from .evaluation import (CategoryAssignment, alignment_report, completion_report,
                         davies_bouldin, export_embeddings_with_categories,
                         long_tail_report)
from .gcn import GcnConfig, train_alignment
from .geometry import (TheoryReport, build_areas, check_lemma1,
                       check_theorem_alignment, check_theorem_completion,
                       min_prototype_separation)
from .kg import augment_with_prototypes, ingest_alignment_dataset, ingest_completion_dataset
from .optim import pack_complex
from .rotate import CompletionConfig, train_completion
from .seeding import rng_for
from .synthetic import (make_alignment_fixture, make_completion_fixture,
                        make_constructed_theory_instance, write_alignment_fixture,
                        write_completion_fixture)

logger = logging.getLogger("protokg")

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_FINGERPRINT = 5


class FingerprintMismatch(RuntimeError):
    pass


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _sha256_obj(obj) -> str:
    return hashlib.sha256(repr(obj).encode("utf-8")).hexdigest()


def _data_dir(args) -> Path:
    base = args.data_dir or os.environ.get("PROTOKG_DATA_DIR", "data")
    return Path(base)


def _make_run_dir(args) -> Path:
    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = Path(args.out) / f"{stamp}-seed{args.seed if args.seed is not None else 0}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=float) + "\n")


class Manifest:
    def __init__(self, subcommand: str, args):
        self.data = {
            "subcommand": subcommand,
            "tool_version": __version__,
            "seed": args.seed,
            "deterministic": bool(getattr(args, "deterministic", False)),
            "threads": getattr(args, "threads", 1),
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "resolved_config": {},
            "dataset_fingerprints": {},
            "outputs": [],
        }

    def finish(self, run_dir: Path):
        self.data["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        _write_json(run_dir / "manifest.json", self.data)


def _resolve_mapping(args, default_name: str) -> dict[str, str]:
    if args.config:
        return load_config_file(args.config)
    if args.dataset and args.dataset != "fixture":
        name = f"{default_name}-{args.dataset}"
        if name in shipped_config_names():
            return shipped_config(name)
        raise ValueError(f"no shipped config for dataset {args.dataset!r}; "
                         f"pass --config (known: {', '.join(shipped_config_names())})")
    return shipped_config(f"fixture-{default_name}")


def _overrides(args, extra=()):
    out = {}
    for key, attr in (("lambda_weight", "lam"), ("seed", "seed"), ("dim", "dim"),
                      ("learning_rate", "lr"), ("max_steps", "steps"),
                      ("epochs", "epochs"), ("margin", "margin")) + tuple(extra):
        if hasattr(args, attr) and getattr(args, attr) is not None:
            out[key] = getattr(args, attr)
    for item in args.set or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce_overrides(out: dict) -> dict:
    # --set values arrive as strings; let the dataclass resolver coerce them
    coerced = {}
    for key, value in out.items():
        if isinstance(value, str):
            for cast in (int, float):
                try:
                    coerced[key] = cast(value)
                    break
                except ValueError:
                    continue
            else:
                low = value.lower()
                coerced[key] = {"true": True, "false": False}.get(low, value)
        else:
            coerced[key] = value
    return coerced


def _load_completion(args, meta: dict):
    """Returns (dataset, fingerprints)."""
    if (args.dataset or meta.get("dataset")) == "fixture":
        ds = make_completion_fixture(seed=args.fixture_seed)
        fp = {"fixture": _sha256_obj((sorted(ds.graph.triples), sorted(ds.valid),
                                      sorted(ds.test), args.fixture_seed))}
        return ds, fp
    if args.train and args.valid and args.test:
        paths = {"train": args.train, "valid": args.valid, "test": args.test}
    else:
        name = args.dataset or meta.get("dataset")
        if not name:
            raise ValueError("no dataset given: use --dataset, --config, or --train/--valid/--test")
        base = _data_dir(args) / name
        paths = {s: base / f"{s}.tsv" for s in ("train", "valid", "test")}
        for s, p in paths.items():
            if not Path(p).exists():
                raise FileNotFoundError(f"{p} not found; set PROTOKG_DATA_DIR or pass --{s}")
    ds = ingest_completion_dataset(paths["train"], paths["valid"], paths["test"])
    return ds, {s: _sha256_file(p) for s, p in paths.items()}


def _load_alignment(args, meta: dict):
    """Returns (kg1, kg2, seeds, fingerprints)."""
    if (args.dataset or meta.get("dataset")) == "fixture":
        kg1, kg2, seeds, _ = make_alignment_fixture(seed=args.fixture_seed)
        fp = {"fixture": _sha256_obj((sorted(kg1.triples), sorted(kg2.triples),
                                      sorted(seeds.pairs), args.fixture_seed))}
        return kg1, kg2, seeds, fp
    if args.kg1 and args.kg2 and args.seeds:
        paths = {"kg1": args.kg1, "kg2": args.kg2, "seeds": args.seeds}
    else:
        name = args.dataset or meta.get("dataset")
        if not name:
            raise ValueError("no dataset given: use --dataset, --config, or --kg1/--kg2/--seeds")
        base = _data_dir(args) / name
        paths = {s: base / f"{s}.tsv" for s in ("kg1", "kg2", "seeds")}
        for s, p in paths.items():
            if not Path(p).exists():
                raise FileNotFoundError(f"{p} not found; set PROTOKG_DATA_DIR or pass --{s}")
    kg1, kg2, seeds = ingest_alignment_dataset(paths["kg1"], paths["kg2"], paths["seeds"],
                                               train_fraction=args.train_fraction,
                                               seed=args.split_seed)
    return kg1, kg2, seeds, {s: _sha256_file(p) for s, p in paths.items()}


def _check_fingerprints(checkpoint_meta: dict, fingerprints: dict):
    stored = checkpoint_meta.get("fingerprints", {})
    if stored != fingerprints:
        raise FingerprintMismatch(
            f"checkpoint was trained on different data: {stored} != {fingerprints}")


# ---------------------------------------------------------------------------
# subcommands

def cmd_train_completion(args) -> int:
    run_dir = _make_run_dir(args)
    manifest = Manifest("train-completion", args)
    mapping = _resolve_mapping(args, "completion")
    config, meta = resolve_completion_config(mapping, _coerce_overrides(_overrides(args)))
    dataset, fingerprints = _load_completion(args, meta)
    manifest.data["resolved_config"] = config_to_mapping(config) | {
        "model": args.model, **{k: str(v) for k, v in meta.items()}}
    manifest.data["dataset_fingerprints"] = fingerprints

    result = train_completion(dataset, config, args.model)
    result.restore_best()
    graph = result.model.graph
    report = completion_report(dataset.test, result.model.score_all_entities,
                               dataset.known_triples, graph.n_entities)

    ckpt = run_dir / "checkpoint"
    save_completion_checkpoint(ckpt, result.model, config_to_mapping(config), fingerprints)
    with open(run_dir / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "valid_mrr"])
        for step, loss, mrr in result.curve:
            writer.writerow([step, repr(loss), "" if mrr is None else repr(mrr)])
    metrics = report.to_dict() | {"task": "completion", "model": args.model,
                                  "best_step": result.best_step,
                                  "best_valid_mrr": result.best_valid_mrr}
    _write_json(run_dir / "metrics.json", metrics)
    manifest.data["outputs"] = ["checkpoint", "loss.csv", "metrics.json"]
    manifest.finish(run_dir)
    print(f"[{run_dir}] completion {args.model}: {report.to_text()}")
    return 0


def cmd_train_alignment(args) -> int:
    run_dir = _make_run_dir(args)
    manifest = Manifest("train-alignment", args)
    mapping = _resolve_mapping(args, "alignment")
    overrides = _coerce_overrides(_overrides(args))
    if args.no_layer_aggregation:
        overrides["aggregate_all_layers"] = False
    config, meta = resolve_alignment_config(mapping, overrides)
    kg1, kg2, seeds, fingerprints = _load_alignment(args, meta)
    manifest.data["resolved_config"] = config_to_mapping(config) | {
        "model": args.model, **{k: str(v) for k, v in meta.items()}}
    manifest.data["dataset_fingerprints"] = fingerprints

    mode = "rpe" if args.model == "rpe-gcn" else "vanilla"
    g1 = augment_with_prototypes(kg1) if mode == "rpe" else kg1
    g2 = augment_with_prototypes(kg2) if mode == "rpe" else kg2
    result = train_alignment(g1, g2, seeds, config, mode)
    report = alignment_report(seeds.test, result.final_emb1, result.final_emb2)

    ckpt = run_dir / "checkpoint"
    save_alignment_checkpoint(ckpt, result.model, result.final_emb1, result.final_emb2,
                              config_to_mapping(config), fingerprints)
    with open(run_dir / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "valid_mrr"])
        for epoch, loss in result.curve:
            writer.writerow([epoch, repr(loss), ""])
    metrics = report.to_dict() | {"task": "alignment", "model": args.model}
    _write_json(run_dir / "metrics.json", metrics)
    manifest.data["outputs"] = ["checkpoint", "loss.csv", "metrics.json"]
    manifest.finish(run_dir)
    print(f"[{run_dir}] alignment {args.model}: {report.to_text()}")
    return 0


def cmd_evaluate(args) -> int:
    run_dir = _make_run_dir(args)
    manifest = Manifest("evaluate", args)
    ckpt_meta = json.loads((Path(args.checkpoint) / "meta.json").read_text())
    if ckpt_meta["task"] == "completion":
        dataset, fingerprints = _load_completion(args, ckpt_meta.get("config", {}))
        _check_fingerprints(ckpt_meta, fingerprints)
        graph = augment_with_prototypes(dataset.graph)
        model, _ = load_completion_checkpoint(args.checkpoint, graph)
        report = completion_report(dataset.test, model.score_all_entities,
                                   dataset.known_triples, graph.n_entities,
                                   policy=args.tie_policy)
        metrics = report.to_dict() | {"task": "completion", "model": ckpt_meta["model"]}
    else:
        kg1, kg2, seeds, fingerprints = _load_alignment(args, ckpt_meta.get("config", {}))
        _check_fingerprints(ckpt_meta, fingerprints)
        emb1, emb2, _ = load_alignment_embeddings(args.checkpoint)
        report = alignment_report(seeds.test, emb1, emb2, policy=args.tie_policy)
        metrics = report.to_dict() | {"task": "alignment", "model": ckpt_meta["model"]}
    manifest.data["dataset_fingerprints"] = fingerprints
    _write_json(run_dir / "metrics.json", metrics)
    manifest.data["outputs"] = ["metrics.json"]
    manifest.finish(run_dir)
    print(f"[{run_dir}] {metrics['task']}: {report.to_text()}")
    return 0


def _completion_embeddings(checkpoint: str, graph):
    model, meta = load_completion_checkpoint(checkpoint, graph)
    return pack_complex(model.entities.as_complex()), meta


def cmd_dbi(args) -> int:
    run_dir = _make_run_dir(args)
    manifest = Manifest("dbi", args)
    ckpt_meta = json.loads((Path(args.checkpoint) / "meta.json").read_text())
    sides = {"head": ("head",), "tail": ("tail",), "both": ("head", "tail")}[args.sides]
    if ckpt_meta["task"] == "completion":
        dataset, fingerprints = _load_completion(args, ckpt_meta.get("config", {}))
        _check_fingerprints(ckpt_meta, fingerprints)
        graph = augment_with_prototypes(dataset.graph)
        emb, _ = _completion_embeddings(args.checkpoint, graph)
        cats = CategoryAssignment(dataset.graph).filtered(
            min_members=args.min_members, require_disjoint=not args.allow_overlap,
            sides=sides)
        values = {"dbi": davies_bouldin(emb, cats)}
        if args.export_embeddings:
            export_embeddings_with_categories(dataset.graph.entities.labels, emb, cats,
                                              run_dir / "embeddings.csv")
    else:
        kg1, kg2, seeds, fingerprints = _load_alignment(args, ckpt_meta.get("config", {}))
        _check_fingerprints(ckpt_meta, fingerprints)
        emb1, emb2, _ = load_alignment_embeddings(args.checkpoint)
        values = {}
        for tag, kg, emb in (("g1", kg1, emb1), ("g2", kg2, emb2)):
            cats = CategoryAssignment(kg).filtered(
                min_members=args.min_members, require_disjoint=not args.allow_overlap,
                sides=sides)
            values[f"dbi_{tag}"] = davies_bouldin(emb, cats)
        values["dbi"] = (values["dbi_g1"] + values["dbi_g2"]) / 2.0
    manifest.data["dataset_fingerprints"] = fingerprints
    _write_json(run_dir / "dbi.json", values | {"min_members": args.min_members,
                                                "sides": args.sides})
    manifest.data["outputs"] = ["dbi.json"]
    manifest.finish(run_dir)
    print(f"[{run_dir}] DBI: " + ", ".join(f"{k}={v:.4f}" for k, v in sorted(values.items())))
    return 0


def cmd_longtail(args) -> int:
    run_dir = _make_run_dir(args)
    manifest = Manifest("longtail", args)
    base_meta = json.loads((Path(args.baseline_checkpoint) / "meta.json").read_text())
    dataset, fingerprints = _load_completion(args, base_meta.get("config", {}))
    _check_fingerprints(base_meta, fingerprints)
    rpe_meta = json.loads((Path(args.rpe_checkpoint) / "meta.json").read_text())
    _check_fingerprints(rpe_meta, fingerprints)
    graph = augment_with_prototypes(dataset.graph)
    base_model, _ = load_completion_checkpoint(args.baseline_checkpoint, graph)
    rpe_model, _ = load_completion_checkpoint(args.rpe_checkpoint, graph)
    kwargs = dict(known_triples=dataset.known_triples, n_entities=graph.n_entities,
                  collect_ranks=True)
    base = completion_report(dataset.test, base_model.score_all_entities, **kwargs)
    rpe = completion_report(dataset.test, rpe_model.score_all_entities, **kwargs)
    thresholds = tuple(int(x) for x in args.thresholds.split(","))
    report = long_tail_report(base.ranks, rpe.ranks, dataset.graph.degree_of, thresholds)
    manifest.data["dataset_fingerprints"] = fingerprints
    (run_dir / "longtail.json").write_text(report.to_json() + "\n")
    with open(run_dir / "longtail.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["max_links", "query_count", "mrr_baseline", "mrr_rpe"])
        for b in report.buckets:
            writer.writerow(["all" if b.max_links is None else b.max_links,
                             b.query_count, b.mrr_baseline, b.mrr_rpe])
    manifest.data["outputs"] = ["longtail.json", "longtail.csv"]
    manifest.finish(run_dir)
    print(report.to_text())
    return 0


def cmd_theory_check(args) -> int:
    run_dir = _make_run_dir(args)
    manifest = Manifest("theory-check", args)
    rng = rng_for(args.seed or 0, "theory-samples")
    checks = []
    if args.constructed:
        inst = make_constructed_theory_instance(separation=args.separation,
                                                radius=args.radius)
        lemma_rng = rng_for(args.seed or 0, "lemma-instances")
        p_h = inst.areas[0].center
        rot_phase = inst.r_phases[0]
        h = p_h + (lemma_rng.standard_normal(p_h.size)
                   + 1j * lemma_rng.standard_normal(p_h.size))
        t = inst.areas[0].center + (lemma_rng.standard_normal(p_h.size)
                                    + 1j * lemma_rng.standard_normal(p_h.size))
        checks.append(check_lemma1(h, t, rot_phase, p_h, inst.areas[0].center))
        for which in ("thm1", "thm2"):
            checks.append(check_theorem_completion(
                inst.areas, inst.relation_id, inst.r_phases[inst.relation_id],
                inst.entity_vecs, rng, which=which, samples=args.samples))
        mirror = [PrototypeArea(center=a.center.copy(), radius=a.radius, side=a.side,
                                relation_id=a.relation_id, member_ids=a.member_ids)
                  for a in inst.areas]
        correspondence = [(i, i) for i in range(len(inst.areas))]
        checks += check_theorem_alignment(inst.areas, mirror, correspondence, rng,
                                          samples=args.samples)
        fingerprints = {"constructed": _sha256_obj((args.separation, args.radius))}
    else:
        ckpt_meta = json.loads((Path(args.checkpoint) / "meta.json").read_text())
        dataset, fingerprints = _load_completion(args, ckpt_meta.get("config", {}))
        _check_fingerprints(ckpt_meta, fingerprints)
        graph = augment_with_prototypes(dataset.graph)
        model, _ = load_completion_checkpoint(args.checkpoint, graph)
        if model.prototypes is None:
            raise ValueError("theory-check needs a prototype-model checkpoint")
        ent = model.entities.as_complex()
        proto = model.prototypes.as_complex()
        lam = args.lam if args.lam is not None else model.lam
        areas = build_areas(ent, proto, graph, lam=lam)
        for r in range(graph.n_relations):
            for which in ("thm1", "thm2"):
                checks.append(check_theorem_completion(
                    areas, r, model.phases.values[r], ent, rng, which=which,
                    lam=lam, samples=args.samples))
        sep = min_prototype_separation(areas)
        manifest.data["resolved_config"]["min_prototype_separation"] = repr(sep)
    report = TheoryReport(checks=checks)
    manifest.data["dataset_fingerprints"] = fingerprints
    (run_dir / "theory.json").write_text(report.to_json() + "\n")
    (run_dir / "theory.txt").write_text(report.to_text() + "\n")
    manifest.data["outputs"] = ["theory.json", "theory.txt"]
    manifest.finish(run_dir)
    print(report.to_text())
    return 0 if report.all_passed else EXIT_NUMERIC


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradient_checks

    run_dir = _make_run_dir(args)
    manifest = Manifest("gradcheck", args)
    reports = run_gradient_checks(seed=args.seed or 0, tolerance=args.tolerance)
    payload = {name: {"max_rel_error": rep.max_rel_error, "passed": rep.passed}
               for name, rep in reports.items()}
    _write_json(run_dir / "gradcheck.json", payload)
    manifest.data["outputs"] = ["gradcheck.json"]
    manifest.finish(run_dir)
    ok = all(rep.passed for rep in reports.values())
    for name, rep in sorted(reports.items()):
        print(f"{name}: {rep}")
    return 0 if ok else EXIT_NUMERIC


def cmd_lambda_sweep(args) -> int:
    run_dir = _make_run_dir(args)
    manifest = Manifest("lambda-sweep", args)
    grid = [float(x) for x in args.grid.split(",")]
    rows = []
    if args.task == "completion":
        mapping = _resolve_mapping(args, "completion")
        config, meta = resolve_completion_config(mapping, _coerce_overrides(_overrides(args)))
        dataset, fingerprints = _load_completion(args, meta)
        graph = augment_with_prototypes(dataset.graph)
        for lam in grid:
            cfg = CompletionConfig(**{**config.__dict__, "lambda_weight": lam})
            result = train_completion(dataset, cfg, "rpe-rotate", graph=graph)
            result.restore_best()
            report = completion_report(dataset.test, result.model.score_all_entities,
                                       dataset.known_triples, graph.n_entities)
            rows.append((lam, report.mrr))
    else:
        mapping = _resolve_mapping(args, "alignment")
        config, meta = resolve_alignment_config(mapping, _coerce_overrides(_overrides(args)))
        kg1, kg2, seeds, fingerprints = _load_alignment(args, meta)
        g1, g2 = augment_with_prototypes(kg1), augment_with_prototypes(kg2)
        for lam in grid:
            cfg = GcnConfig(**{**config.__dict__, "lambda_weight": lam})
            result = train_alignment(g1, g2, seeds, cfg, "rpe")
            report = alignment_report(seeds.test, result.final_emb1, result.final_emb2)
            rows.append((lam, report.mrr))
    manifest.data["dataset_fingerprints"] = fingerprints
    with open(run_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "mrr"])
        for lam, mrr in rows:
            writer.writerow([lam, repr(mrr)])
    _write_json(run_dir / "sweep.json", {"task": args.task,
                                         "rows": [{"lambda": l, "mrr": m} for l, m in rows]})
    manifest.data["outputs"] = ["sweep.csv", "sweep.json"]
    manifest.finish(run_dir)
    for lam, mrr in rows:
        print(f"lambda={lam:.2f}  mrr={mrr:.4f}")
    return 0


def cmd_make_fixture(args) -> int:
    out = Path(args.out_dir)
    if args.kind == "completion":
        paths = write_completion_fixture(out, seed=args.fixture_seed)
    else:
        paths = write_alignment_fixture(out, seed=args.fixture_seed)
    for tag, p in sorted(paths.items()):
        print(f"{tag}: {p}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring

def _add_common(p, train=False):
    p.add_argument("--config", help="config file (key = value lines)")
    p.add_argument("--dataset", help="named dataset, or 'fixture' for the synthetic one")
    p.add_argument("--data-dir", help="dataset root (default $PROTOKG_DATA_DIR or ./data)")
    p.add_argument("--out", default="runs", help="run directory root")
    p.add_argument("--run-dir", help="exact run directory (overrides --out)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--fixture-seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded reductions; reruns are byte-identical")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    if train:
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument("--dim", type=int, default=None)
        p.add_argument("--lr", dest="lr", type=float, default=None)
        p.add_argument("--margin", type=float, default=None)


def _add_completion_paths(p):
    p.add_argument("--train")
    p.add_argument("--valid")
    p.add_argument("--test")


def _add_alignment_paths(p):
    p.add_argument("--kg1")
    p.add_argument("--kg2")
    p.add_argument("--seeds")
    p.add_argument("--train-fraction", type=float, default=0.30)
    p.add_argument("--split-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protokg",
                                     description="prototype-augmented KG embeddings")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-completion", help="train rotate or rpe-rotate")
    _add_common(p, train=True)
    _add_completion_paths(p)
    p.add_argument("--model", choices=("rotate", "rpe-rotate"), default="rpe-rotate")
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_train_completion, epochs=None)

    p = sub.add_parser("train-alignment", help="train gcn or rpe-gcn")
    _add_common(p, train=True)
    _add_alignment_paths(p)
    p.add_argument("--model", choices=("gcn", "rpe-gcn"), default="rpe-gcn")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--no-layer-aggregation", action="store_true",
                   help="use only the last layer's hidden state")
    p.set_defaults(func=cmd_train_alignment, steps=None)

    p = sub.add_parser("evaluate", help="re-evaluate a checkpoint")
    _add_common(p)
    _add_completion_paths(p)
    _add_alignment_paths(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tie-policy", choices=("mean", "optimistic", "pessimistic"),
                   default="mean")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("dbi", help="Davies-Bouldin index of a checkpoint's embeddings")
    _add_common(p)
    _add_completion_paths(p)
    _add_alignment_paths(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--min-members", type=int, default=100)
    p.add_argument("--sides", choices=("head", "tail", "both"), default="head")
    p.add_argument("--allow-overlap", action="store_true")
    p.add_argument("--export-embeddings", action="store_true",
                   help="also write embeddings.csv with category labels")
    p.set_defaults(func=cmd_dbi)

    p = sub.add_parser("longtail", help="bucketed MRR by answer degree")
    _add_common(p)
    _add_completion_paths(p)
    p.add_argument("--baseline-checkpoint", required=True)
    p.add_argument("--rpe-checkpoint", required=True)
    p.add_argument("--thresholds", default="5,10,20,50")
    p.set_defaults(func=cmd_longtail)

    p = sub.add_parser("theory-check", help="certify the prototype geometry")
    _add_common(p)
    _add_completion_paths(p)
    p.add_argument("--checkpoint")
    p.add_argument("--constructed", action="store_true",
                   help="run on a constructed satisfying instance")
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--radius", type=float, default=0.1)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    _add_common(p)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("lambda-sweep", help="retrain across a lambda grid")
    _add_common(p, train=True)
    _add_completion_paths(p)
    _add_alignment_paths(p)
    p.add_argument("--task", choices=("completion", "alignment"), default="completion")
    p.add_argument("--grid", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_lambda_sweep)

    p = sub.add_parser("make-fixture", help="write synthetic fixture TSV files")
    p.add_argument("--kind", choices=("completion", "alignment"), required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fixture-seed", type=int, default=0)
    p.set_defaults(func=cmd_make_fixture)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FingerprintMismatch as exc:
        print(f"error (fingerprint): {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error (data/config): {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"error (numeric): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
