"""Checkpoint directories: binary embedding tables plus a JSON meta file
carrying the model kind, config echo, and dataset fingerprints."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .gcn import AlignmentModel, GcnConfig
from .kg import AugmentedGraph
from .optim import (GCN_WEIGHT, EmbeddingTable, load_table_binary, save_table_binary)
from .rotate import CompletionConfig, CompletionModel


def save_completion_checkpoint(path, model: CompletionModel, config_mapping: dict,
                               fingerprints: dict):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    save_table_binary(model.entities, out / "entities.etb")
    save_table_binary(model.phases, out / "phases.etb")
    if model.prototypes is not None:
        save_table_binary(model.prototypes, out / "prototypes.etb")
    meta = {"task": "completion", "model": model.kind, "lambda": model.lam,
            "dim": model.dim, "n_entities": model.graph.n_entities,
            "n_relations": model.graph.n_relations,
            "config": config_mapping, "fingerprints": fingerprints}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2))


def load_completion_checkpoint(path, graph: AugmentedGraph) -> tuple[CompletionModel, dict]:
    out = Path(path)
    meta = json.loads((out / "meta.json").read_text())
    config = CompletionConfig(dim=meta["dim"], lambda_weight=meta["lambda"],
                              seed=int(meta["config"].get("seed", 0)))
    model = CompletionModel(graph, config, meta["model"])
    model.entities = load_table_binary(out / "entities.etb")
    model.phases = load_table_binary(out / "phases.etb")
    if (out / "prototypes.etb").exists():
        model.prototypes = load_table_binary(out / "prototypes.etb")
    return model, meta


def save_alignment_checkpoint(path, model: AlignmentModel, emb1: np.ndarray,
                              emb2: np.ndarray, config_mapping: dict,
                              fingerprints: dict):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    k = model.config.dim
    stacked = EmbeddingTable(np.concatenate(model.weights, axis=0), k, GCN_WEIGHT)
    save_table_binary(stacked, out / "weights.etb")
    for tag, tbl in (("entities-g1", model.entities[0]), ("entities-g2", model.entities[1])):
        save_table_binary(tbl, out / f"{tag}.etb")
    if model.prototypes:
        for tag, tbl in (("protos-g1", model.prototypes[0]),
                         ("protos-g2", model.prototypes[1])):
            save_table_binary(tbl, out / f"{tag}.etb")
    for tag, emb in (("final-emb1", emb1), ("final-emb2", emb2)):
        save_table_binary(EmbeddingTable(emb, k, "entity"), out / f"{tag}.etb")
    meta = {"task": "alignment", "model": "rpe-gcn" if model.mode == "rpe" else "gcn",
            "dim": k, "num_layers": model.config.num_layers,
            "config": config_mapping, "fingerprints": fingerprints}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2))


def load_alignment_embeddings(path) -> tuple[np.ndarray, np.ndarray, dict]:
    out = Path(path)
    meta = json.loads((out / "meta.json").read_text())
    emb1 = load_table_binary(out / "final-emb1.etb").values
    emb2 = load_table_binary(out / "final-emb2.etb").values
    return emb1, emb2, meta
