"""The list grammar: render ranked lists as text and parse generations back.

Sequences look like
    [SOS] Digital Cameras are purchased with 1) Camera Lenses 2) Batteries [EOS]
optionally with ": explanation" after each concept. Decoding is the inverse and
never raises on malformed text; unparseable tails just yield fewer slots.
"""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from math import factorial

from .core import Concept, ConceptSet, PredictionRecord, RankedList, Slot

SOS = "[SOS]"
EOS = "[EOS]"
DEFAULT_PROMPT_TEMPLATE = "are purchased with"

_MARKER_RE = re.compile(r"(?<!\S)(\d+)\)(?:\s|$)")
_MARKER_SUBSTRING_RE = re.compile(r"\s\d+\)\s|^\d+\)\s|\s\d+\)$")


class SerializationError(ValueError):
    pass


@dataclass
class SerializedExample:
    text: str
    kind: str  # ordered | permuted | explained | prefix_prompt
    input: Concept


@dataclass
class PermutationBatch:
    source: RankedList
    permutations: list[SerializedExample]

    @property
    def count(self) -> int:
        return len(self.permutations)


def check_surface_serializable(surface: str, allow_colon: bool = True) -> None:
    """Reject surfaces that would collide with the grammar's delimiters."""
    if _MARKER_SUBSTRING_RE.search(surface):
        raise SerializationError(f"surface contains a serial-marker pattern: {surface!r}")
    if not allow_colon and ": " in surface:
        raise SerializationError(f"surface contains ': ': {surface!r}")


def _prompt(x: Concept, template: str) -> str:
    return f"{SOS} {x.surface} {template}"


def encode_ordered(
    x: Concept,
    targets: list[Concept],
    template: str = DEFAULT_PROMPT_TEMPLATE,
    kind: str = "ordered",
) -> SerializedExample:
    if not targets:
        raise SerializationError("cannot encode an empty target list")
    parts = [_prompt(x, template)]
    for i, y in enumerate(targets, start=1):
        parts.append(f"{i}) {y.surface}")
    parts.append(EOS)
    return SerializedExample(text=" ".join(parts), kind=kind, input=x)


def encode_with_explanations(
    x: Concept,
    targets: list[Concept],
    explanations: list[str],
    template: str = DEFAULT_PROMPT_TEMPLATE,
) -> SerializedExample:
    if len(explanations) != len(targets):
        raise SerializationError(
            f"{len(targets)} targets but {len(explanations)} explanations"
        )
    if not targets:
        raise SerializationError("cannot encode an empty target list")
    parts = [_prompt(x, template)]
    for i, (y, e) in enumerate(zip(targets, explanations), start=1):
        e = " ".join(e.split())
        if not e:
            raise SerializationError(f"empty explanation for {y.surface!r}")
        check_surface_serializable(e)
        parts.append(f"{i}) {y.surface}: {e}")
    parts.append(EOS)
    return SerializedExample(text=" ".join(parts), kind="explained", input=x)


def build_prefix_prompt(
    x: Concept,
    given: list[Concept],
    template: str = DEFAULT_PROMPT_TEMPLATE,
) -> SerializedExample:
    parts = [_prompt(x, template)]
    for i, g in enumerate(given, start=1):
        parts.append(f"{i}) {g.surface}")
    if given:
        parts.append(f"{len(given) + 1})")
    return SerializedExample(text=" ".join(parts), kind="prefix_prompt", input=x)


def decode_list(
    text: str,
    concept_set: ConceptSet,
    expect_explanations: bool = False,
    known_input: Concept | None = None,
    template: str = DEFAULT_PROMPT_TEMPLATE,
    case_insensitive: bool = False,
    source: str = "unknown",
    truncated: bool = False,
    given_positions: int = 0,
) -> PredictionRecord:
    """Parse generated text into a PredictionRecord. Never raises on bad text."""
    body = text
    if body.startswith(SOS):
        body = body[len(SOS):].strip()
    if body.endswith(EOS):
        body = body[: -len(EOS)].rstrip()

    input_concept = known_input
    sep = f" {template}"
    if sep in body:
        head, body = body.split(sep, 1)
        body = body.strip()
        if input_concept is None:
            input_concept = concept_set.lookup(head.strip(), case_insensitive)
    if input_concept is None:
        # fall back to a detached concept so malformed text still yields a record
        surface = text.strip() or "?"
        input_concept = Concept(id=-1, surface=surface.split(")")[0][:80] or "?", token_count=1)

    markers = list(_MARKER_RE.finditer(body))
    slots: list[Slot] = []
    expected = 1
    kept: list[re.Match] = []
    stop = len(body)
    for m in markers:
        if int(m.group(1)) != expected:
            stop = m.start()  # out-of-order marker terminates parsing
            break
        kept.append(m)
        expected += 1
    for i, m in enumerate(kept):
        start = m.end()
        end = kept[i + 1].start() if i + 1 < len(kept) else stop
        segment = body[start:end].strip()
        if not segment:
            continue
        explanation = None
        if expect_explanations:
            if ": " in segment:
                surface, explanation = segment.split(": ", 1)
                explanation = explanation.strip()
            else:
                surface = segment
        else:
            surface = segment
        concept = concept_set.lookup(surface, case_insensitive)
        slots.append(
            Slot(position=int(m.group(1)), concept=concept, raw=surface, explanation=explanation)
        )
    return PredictionRecord(
        input=input_concept,
        slots=slots,
        raw_text=text,
        source=source,
        truncated=truncated,
        given_positions=given_positions,
    )


def sample_permutations(
    ranked: RankedList,
    n: int = 10,
    seed: int = 0,
    list_size: int | None = None,
    template: str = DEFAULT_PROMPT_TEMPLATE,
) -> PermutationBatch:
    """Sample n distinct orderings of the target list, each re-encoded 1..k."""
    targets = ranked.target_concepts(list_size)
    k = len(targets)
    if k < 2:
        raise SerializationError("need at least 2 targets to permute")
    if n > factorial(k):
        raise SerializationError(f"cannot draw {n} distinct permutations of {k} targets")
    rng = random.Random(seed)
    seen: set[tuple[int, ...]] = set()
    examples: list[SerializedExample] = []
    while len(examples) < n:
        order = list(range(k))
        rng.shuffle(order)
        key = tuple(order)
        if key in seen:
            continue
        seen.add(key)
        permuted = [targets[i] for i in order]
        examples.append(encode_ordered(ranked.input, permuted, template, kind="permuted"))
    return PermutationBatch(source=ranked, permutations=examples)


# --- prediction interchange format (line-delimited JSON) ---

PREDICTIONS_SCHEMA = "ccgen-predictions-v1"


def record_to_json(record: PredictionRecord) -> dict:
    return {
        "input": record.input.surface,
        "slots": [
            {
                "position": s.position,
                "concept": s.raw,
                "valid": s.valid,
                **({"explanation": s.explanation} if s.explanation is not None else {}),
            }
            for s in record.slots
        ],
        "raw_text": record.raw_text,
        "source": record.source,
        "truncated": record.truncated,
        "given_positions": record.given_positions,
    }


def record_from_json(obj: dict, concept_set: ConceptSet, case_insensitive: bool = False) -> PredictionRecord:
    input_concept = concept_set.lookup(obj["input"], case_insensitive)
    if input_concept is None:
        input_concept = Concept(id=-1, surface=obj["input"], token_count=len(obj["input"].split()))
    slots = []
    for s in obj["slots"]:
        concept = concept_set.lookup(s["concept"], case_insensitive)
        slots.append(
            Slot(
                position=s["position"],
                concept=concept,
                raw=s["concept"],
                explanation=s.get("explanation"),
            )
        )
    return PredictionRecord(
        input=input_concept,
        slots=slots,
        raw_text=obj.get("raw_text", ""),
        source=obj.get("source", "unknown"),
        truncated=obj.get("truncated", False),
        given_positions=obj.get("given_positions", 0),
    )


def write_predictions(path, records: list[PredictionRecord], header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"schema": PREDICTIONS_SCHEMA, **header}, sort_keys=True) + "\n")
        for record in records:
            fh.write(json.dumps(record_to_json(record), sort_keys=True) + "\n")


def read_predictions(path, concept_set: ConceptSet, case_insensitive: bool = False) -> list[PredictionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "schema" in obj and "slots" not in obj:
                continue  # artifact header line
            records.append(record_from_json(obj, concept_set, case_insensitive))
    return records


def validate_predictions_line(obj: dict) -> list[str]:
    """Schema check for one interchange record; returns human-readable problems."""
    problems = []
    if not isinstance(obj.get("input"), str) or not obj.get("input"):
        problems.append("missing or empty 'input'")
    slots = obj.get("slots")
    if not isinstance(slots, list):
        problems.append("'slots' must be a list")
        return problems
    last = 0
    for i, s in enumerate(slots):
        if not isinstance(s, dict):
            problems.append(f"slot {i} is not an object")
            continue
        pos = s.get("position")
        if not isinstance(pos, int) or pos < 1:
            problems.append(f"slot {i}: bad position {pos!r}")
        elif pos <= last:
            problems.append(f"slot {i}: position {pos} not strictly increasing")
        else:
            last = pos
        if not isinstance(s.get("concept"), str):
            problems.append(f"slot {i}: missing 'concept'")
        if not isinstance(s.get("valid"), bool):
            problems.append(f"slot {i}: missing 'valid'")
    if not isinstance(obj.get("raw_text", ""), str):
        problems.append("'raw_text' must be a string")
    if not isinstance(obj.get("source", ""), str):
        problems.append("'source' must be a string")
    return problems
