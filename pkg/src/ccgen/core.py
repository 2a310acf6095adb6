"""Concept identities, interning, and the closed concept universe."""
from __future__ import annotations

from dataclasses import dataclass, field


def normalize_surface(surface: str) -> str:
    """Trim and collapse internal whitespace. Case is preserved."""
    return " ".join(surface.split())


@dataclass(frozen=True)
class Concept:
    id: int
    surface: str
    token_count: int

    def tokens(self) -> list[str]:
        return self.surface.split()


class ConceptSetError(ValueError):
    pass


class ConceptSet:
    """Interned concept universe.

    Mutable while building; call freeze() before sharing. Iteration order is
    insertion order, so serialization round trips preserve ids.
    """

    def __init__(self) -> None:
        self._concepts: list[Concept] = []
        self._index: dict[str, int] = {}
        self._lower_index: dict[str, int] = {}
        self._frozen = False

    def __len__(self) -> int:
        return len(self._concepts)

    def __iter__(self):
        return iter(self._concepts)

    def __contains__(self, concept: Concept) -> bool:
        return 0 <= concept.id < len(self._concepts) and self._concepts[concept.id] is concept

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "ConceptSet":
        self._frozen = True
        return self

    def by_id(self, concept_id: int) -> Concept:
        return self._concepts[concept_id]

    def intern(self, surface: str) -> Concept:
        norm = normalize_surface(surface)
        if not norm:
            raise ConceptSetError("empty concept surface")
        existing = self._index.get(norm)
        if existing is not None:
            return self._concepts[existing]
        if self._frozen:
            raise ConceptSetError(f"concept set is frozen; cannot intern {norm!r}")
        concept = Concept(id=len(self._concepts), surface=norm, token_count=len(norm.split()))
        self._concepts.append(concept)
        self._index[norm] = concept.id
        # first writer wins for case-insensitive lookups
        self._lower_index.setdefault(norm.lower(), concept.id)
        return concept

    def lookup(self, surface: str, case_insensitive: bool = False) -> Concept | None:
        norm = normalize_surface(surface)
        idx = self._index.get(norm)
        if idx is None and case_insensitive:
            idx = self._lower_index.get(norm.lower())
        return self._concepts[idx] if idx is not None else None

    def surfaces(self) -> list[str]:
        return [c.surface for c in self._concepts]


def load_concept_set(path) -> ConceptSet:
    """Read a concept-set file: one surface per line, '#' comments and blanks ignored."""
    cs = ConceptSet()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cs.intern(line)
    return cs.freeze()


def save_concept_set(cs: ConceptSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for concept in cs:
            fh.write(concept.surface + "\n")


@dataclass
class RankedList:
    """Ordered complement list for one input concept.

    Targets are (concept, confidence) pairs, confidence non-increasing.
    """

    input: Concept
    targets: list[tuple[Concept, float]]

    def __post_init__(self) -> None:
        confs = [c for _, c in self.targets]
        if any(b > a for a, b in zip(confs, confs[1:])):
            raise ValueError("target confidences must be non-increasing")
        ids = [t.id for t, _ in self.targets]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate targets in ranked list")
        if self.input.id in ids:
            raise ValueError("input concept appears in its own targets")

    def target_concepts(self, limit: int | None = None) -> list[Concept]:
        picked = self.targets if limit is None else self.targets[:limit]
        return [t for t, _ in picked]


@dataclass
class Slot:
    """One decoded prediction slot; concept is None when the surface is unknown."""

    position: int
    concept: Concept | None
    raw: str
    explanation: str | None = None

    @property
    def valid(self) -> bool:
        return self.concept is not None


@dataclass
class PredictionRecord:
    input: Concept
    slots: list[Slot]
    raw_text: str
    source: str
    truncated: bool = False
    given_positions: int = 0  # slots 1..given_positions were supplied as prefix

    def __post_init__(self) -> None:
        positions = [s.position for s in self.slots]
        if positions and (positions[0] < 1 or any(b <= a for a, b in zip(positions, positions[1:]))):
            raise ValueError("slot positions must be strictly increasing and >= 1")

    def slot_at(self, position: int) -> Slot | None:
        for slot in self.slots:
            if slot.position == position:
                return slot
        return None
