"""Word vectors, compositional concept embeddings, and cosine ranking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Concept, ConceptSet


class WordVectorError(ValueError):
    pass


class WordVectorTable:
    def __init__(self, dim: int, vectors: dict[str, np.ndarray], lowercase_lookup: bool = True):
        if dim <= 0:
            raise WordVectorError("dimension must be positive")
        self.dim = dim
        self.vectors = vectors
        self.lowercase_lookup = lowercase_lookup

    def get(self, token: str) -> np.ndarray | None:
        if self.lowercase_lookup:
            token = token.lower()
        return self.vectors.get(token)

    def __len__(self) -> int:
        return len(self.vectors)

    @classmethod
    def from_lines(cls, lines, lowercase_lookup: bool = True) -> "WordVectorTable":
        return _parse_word_vectors(lines, "<lines>", lowercase_lookup)


@dataclass
class ConceptEmbedding:
    concept: Concept
    vector: np.ndarray
    coverage: float


def _parse_word_vectors(lines, origin, lowercase_lookup: bool) -> WordVectorTable:
    vectors: dict[str, np.ndarray] = {}
    dim = None
    for lineno, line in enumerate(lines, start=1):
        parts = line.rstrip("\n").split()
        if not parts:
            continue
        token, values = parts[0], parts[1:]
        if dim is None:
            dim = len(values)
            if dim == 0:
                raise WordVectorError(f"line {lineno}: no vector components")
        elif len(values) != dim:
            raise WordVectorError(
                f"line {lineno}: expected {dim} components, got {len(values)}"
            )
        try:
            vectors[token] = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise WordVectorError(f"line {lineno}: {exc}") from exc
    if dim is None:
        raise WordVectorError(f"{origin}: empty word-vector file")
    return WordVectorTable(dim=dim, vectors=vectors, lowercase_lookup=lowercase_lookup)


def load_word_vectors(path, lowercase_lookup: bool = True) -> WordVectorTable:
    """Parse 'token v1 v2 ... vd' lines; dim inferred from the first line."""
    with open(path, encoding="utf-8") as fh:
        return _parse_word_vectors(fh, path, lowercase_lookup)


def compose(concept: Concept, table: WordVectorTable) -> ConceptEmbedding:
    """Element-wise sum of the surface's token vectors; unknown tokens add zero."""
    vector = np.zeros(table.dim, dtype=np.float64)
    tokens = concept.tokens()
    found = 0
    for token in tokens:
        v = table.get(token)
        if v is not None:
            vector += v
            found += 1
    coverage = found / len(tokens) if tokens else 0.0
    return ConceptEmbedding(concept=concept, vector=vector, coverage=coverage)


def compose_surface(surface: str, table: WordVectorTable) -> np.ndarray:
    vector = np.zeros(table.dim, dtype=np.float64)
    for token in surface.split():
        v = table.get(token)
        if v is not None:
            vector += v
    return vector


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise WordVectorError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


class EmbeddingIndex:
    """Precomputed compositional embeddings for a frozen concept set."""

    def __init__(self, concept_set: ConceptSet, table: WordVectorTable):
        self.concept_set = concept_set
        self.table = table
        self.embeddings = [compose(c, table) for c in concept_set]
        self.matrix = np.stack([e.vector for e in self.embeddings]) if len(concept_set) else np.zeros((0, table.dim))
        norms = np.linalg.norm(self.matrix, axis=1)
        self._norms = norms

    def vector(self, concept: Concept) -> np.ndarray:
        return self.embeddings[concept.id].vector

    def cosines(self, query: np.ndarray) -> np.ndarray:
        """Cosine of query against every concept; zero-vector rows score 0."""
        qn = np.linalg.norm(query)
        if qn == 0.0:
            return np.zeros(len(self.embeddings))
        dots = self.matrix @ query
        with np.errstate(divide="ignore", invalid="ignore"):
            sims = np.where(self._norms > 0, dots / (self._norms * qn), 0.0)
        return sims


def nearest_concepts(
    query: np.ndarray,
    index: EmbeddingIndex,
    top_n: int,
    exclude_id: int | None = None,
) -> list[Concept]:
    """Top-n concepts by cosine descending, ties by ascending concept id."""
    sims = index.cosines(query)
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
    out = []
    for i in order:
        if exclude_id is not None and i == exclude_id:
            continue
        out.append(index.concept_set.by_id(i))
        if len(out) == top_n:
            break
    return out
