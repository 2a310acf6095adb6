"""The six comparison systems: GloVe, KNN, pair scorer, Item2vec, companion
projection, and external-LLM ingestion. All emit PredictionRecords.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import Concept, PredictionRecord, Slot
from .dataset import Dataset
from .embed import EmbeddingIndex, compose_surface, cosine, nearest_concepts
from .serialize import decode_list, record_from_json, validate_predictions_line


class BaselineError(ValueError):
    pass


def _record(x: Concept, concepts: list[Concept], source: str) -> PredictionRecord:
    slots = [
        Slot(position=i, concept=y, raw=y.surface) for i, y in enumerate(concepts, start=1)
    ]
    text = " ".join(f"{i}) {y.surface}" for i, y in enumerate(concepts, start=1))
    return PredictionRecord(input=x, slots=slots, raw_text=text, source=source)


# --- GloVe cosine ranking ---

def glove_rank(x: Concept, index: EmbeddingIndex, n: int = 5) -> PredictionRecord:
    query = index.vector(x) if 0 <= x.id < len(index.embeddings) else compose_surface(x.surface, index.table)
    exclude = x.id if 0 <= x.id < len(index.embeddings) else None
    top = nearest_concepts(query, index, n, exclude_id=exclude)
    return _record(x, top, "glove")


# --- KNN over train lists ---

def knn_rank(
    x: Concept,
    dataset: Dataset,
    index: EmbeddingIndex,
    k_neighbors: int = 3,
    n: int = 5,
) -> PredictionRecord:
    train_ids = dataset.splits["train"]
    if not train_ids:
        raise BaselineError("empty train set")
    query = index.vector(x) if 0 <= x.id < len(index.embeddings) else compose_surface(x.surface, index.table)
    sims = index.cosines(query)
    neighbors = sorted(train_ids, key=lambda i: (-sims[i], i))[:k_neighbors]
    counts: dict[int, int] = {}
    sim_sums: dict[int, float] = {}
    for t in neighbors:
        for y, _ in dataset.lists[t].targets[: dataset.target_size]:
            counts[y.id] = counts.get(y.id, 0) + 1
            sim_sums[y.id] = sim_sums.get(y.id, 0.0) + float(sims[t])
    pooled = sorted(counts, key=lambda y: (-counts[y], -sim_sums[y], y))
    top = [dataset.concept_set.by_id(y) for y in pooled[:n]]
    return _record(x, top, "knn")


# --- pair training data shared by the learned scorers ---

@dataclass
class PairTrainingSet:
    positives: list[tuple[int, int]]
    negatives: list[tuple[int, int]]
    seed: int


def build_pair_training_set(dataset: Dataset, seed: int = 0, negatives_per_positive: int = 5) -> PairTrainingSet:
    rng = np.random.default_rng(seed)
    n_concepts = len(dataset.concept_set)
    positives: list[tuple[int, int]] = []
    negatives: list[tuple[int, int]] = []
    for x in dataset.splits["train"]:
        pos_ids = {y.id for y, _ in dataset.lists[x].targets[: dataset.target_size]}
        for y in sorted(pos_ids):
            positives.append((x, y))
            drawn = 0
            while drawn < negatives_per_positive:
                cand = int(rng.integers(0, n_concepts))
                if cand == x or cand in pos_ids:
                    continue
                negatives.append((x, cand))
                drawn += 1
    return PairTrainingSet(positives=positives, negatives=negatives, seed=seed)


# --- hinge-loss linear pair scorer ---

@dataclass
class LinearPairScorer:
    weights: np.ndarray  # length 2 * dim
    bias: float


def train_pair_scorer(
    pairs: PairTrainingSet,
    index: EmbeddingIndex,
    epochs: int = 5,
    lr: float = 0.05,
    seed: int = 0,
    reg: float = 1e-4,
) -> LinearPairScorer:
    if not pairs.positives or not pairs.negatives:
        raise BaselineError("pair training needs both classes")
    dim = index.table.dim
    examples = [(x, y, 1.0) for x, y in pairs.positives] + [(x, y, -1.0) for x, y in pairs.negatives]
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=2 * dim)
    b = 0.0
    order = np.arange(len(examples))
    for _ in range(epochs):
        rng.shuffle(order)
        for idx in order:
            x, y, label = examples[idx]
            feat = np.concatenate([index.matrix[x], index.matrix[y]])
            margin = label * (w @ feat + b)
            w *= 1.0 - lr * reg
            if margin < 1.0:
                w += lr * label * feat
                b += lr * label
    return LinearPairScorer(weights=w, bias=b)


def score_rank(
    scorer: LinearPairScorer,
    x: Concept,
    index: EmbeddingIndex,
    n: int = 5,
) -> PredictionRecord:
    dim = index.table.dim
    xv = index.vector(x) if 0 <= x.id < len(index.embeddings) else compose_surface(x.surface, index.table)
    scores = index.matrix @ scorer.weights[dim:] + (xv @ scorer.weights[:dim]) + scorer.bias
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    top = [index.concept_set.by_id(i) for i in order if i != x.id][:n]
    return _record(x, top, "pair")


# --- Item2vec with frozen compositional targets ---

@dataclass
class ContextEmbeddingTable:
    context: np.ndarray  # n_concepts x dim, learned
    index: EmbeddingIndex  # frozen targets


def _sigmoid(z: np.ndarray | float):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -30.0, 30.0)))


def train_item2vec_context(
    pairs: PairTrainingSet,
    index: EmbeddingIndex,
    epochs: int = 5,
    lr: float = 0.05,
    seed: int = 0,
) -> ContextEmbeddingTable:
    """Negative-sampling objective over frozen targets.

    Context vectors start as a copy of the targets, so zero epochs reduce to
    plain cosine ranking.
    """
    context = index.matrix.copy()
    rng = np.random.default_rng(seed)
    examples = [(x, y, 1.0) for x, y in pairs.positives] + [(x, y, 0.0) for x, y in pairs.negatives]
    order = np.arange(len(examples))
    for _ in range(epochs):
        rng.shuffle(order)
        for idx in order:
            x, y, label = examples[idx]
            target = index.matrix[y]
            pred = _sigmoid(target @ context[x])
            context[x] += lr * (label - pred) * target
    return ContextEmbeddingTable(context=context, index=index)


def item2vec_rank(table: ContextEmbeddingTable, x: Concept, n: int = 5) -> PredictionRecord:
    index = table.index
    if 0 <= x.id < len(table.context):
        query = table.context[x.id]
        exclude = x.id
    else:
        query = compose_surface(x.surface, index.table)
        exclude = None
    top = nearest_concepts(query, index, n, exclude_id=exclude)
    return _record(x, top, "item2vec")


# --- companion projection (complementary-type modeling only) ---

@dataclass
class CompanionProjection:
    projection: np.ndarray  # dim x dim
    margin: float


def _cosine_grad_wrt_u(u: np.ndarray, v: np.ndarray):
    """d cos(u, v) / d u, and the cosine itself."""
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return np.zeros_like(u), 0.0
    cos = float(u @ v / (nu * nv))
    grad = v / (nu * nv) - cos * u / (nu * nu)
    return grad, cos


def train_companion(
    pairs: PairTrainingSet,
    index: EmbeddingIndex,
    epochs: int = 5,
    lr: float = 0.05,
    margin: float = 0.5,
    seed: int = 0,
) -> CompanionProjection:
    """Hinge loss on cos(P ex, ey+) vs cos(P ex, ey-), P initialized to identity."""
    if margin <= 0:
        raise BaselineError("margin must be positive")
    if not pairs.positives:
        raise BaselineError("no positive pairs")
    dim = index.table.dim
    P = np.eye(dim)
    rng = np.random.default_rng(seed)
    negatives_by_pos: list[list[int]] = []
    npos = len(pairs.positives)
    ratio = max(1, len(pairs.negatives) // max(1, npos))
    for i in range(npos):
        negatives_by_pos.append([y for _, y in pairs.negatives[i * ratio : (i + 1) * ratio]])
    order = np.arange(npos)
    for _ in range(epochs):
        rng.shuffle(order)
        for i in order:
            x, y = pairs.positives[i]
            negs = negatives_by_pos[i]
            if not negs:
                continue
            y_neg = negs[int(rng.integers(0, len(negs)))]
            ex = index.matrix[x]
            u = P @ ex
            gpos, cpos = _cosine_grad_wrt_u(u, index.matrix[y])
            gneg, cneg = _cosine_grad_wrt_u(u, index.matrix[y_neg])
            if margin - cpos + cneg > 0.0:
                # descend the hinge: raise cos to the positive, lower it to the negative
                P += lr * np.outer(gpos - gneg, ex)
    return CompanionProjection(projection=P, margin=margin)


def companion_rank(
    model: CompanionProjection,
    x: Concept,
    index: EmbeddingIndex,
    n: int = 5,
) -> PredictionRecord:
    xv = index.vector(x) if 0 <= x.id < len(index.embeddings) else compose_surface(x.surface, index.table)
    query = model.projection @ xv
    exclude = x.id if 0 <= x.id < len(index.embeddings) else None
    top = nearest_concepts(query, index, n, exclude_id=exclude)
    return _record(x, top, "companion")


# --- external LLM output ingestion ---

def external_llm_ingest(
    path,
    concept_set,
    index: EmbeddingIndex | None = None,
    map_to_set: bool = False,
    expect_explanations: bool = False,
    case_insensitive: bool = False,
) -> list[PredictionRecord]:
    """Read interchange records or raw generations and optionally map invalid
    slots to the nearest in-set concept by compositional embedding."""
    if map_to_set and index is None:
        raise BaselineError("map_to_set requires an embedding index")
    records: list[PredictionRecord] = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise BaselineError(f"cannot read {path}: {exc}") from exc
    with fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "schema" in obj and "slots" not in obj and "text" not in obj:
                continue
            if "slots" in obj:
                if validate_predictions_line(obj):
                    raise BaselineError(f"bad interchange record: {obj!r}")
                record = record_from_json(obj, concept_set, case_insensitive)
            else:
                known = concept_set.lookup(obj.get("input", ""), case_insensitive)
                record = decode_list(
                    obj["text"],
                    concept_set,
                    expect_explanations=expect_explanations,
                    known_input=known,
                    case_insensitive=case_insensitive,
                    source=obj.get("source", "external"),
                )
            records.append(record)
    if map_to_set:
        for record in records:
            for slot in record.slots:
                if slot.concept is None and slot.raw.strip():
                    query = compose_surface(slot.raw, index.table)
                    nearest = nearest_concepts(query, index, 1)
                    if nearest:
                        slot.concept = nearest[0]
                        slot.raw = nearest[0].surface
    return records
