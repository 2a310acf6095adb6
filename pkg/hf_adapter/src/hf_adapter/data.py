"""File-contract side of the adapter: vocab, dataset JSON, grammar, interchange.

The list grammar and the prediction interchange schema are reimplemented here
from their documented formats; nothing is imported from the harness package.

Grammar:  [SOS] {input} are purchased with 1) {y1} 2) {y2} ... [EOS]
Interchange: one JSON object per line; optional header line carrying "schema"
but no "slots"; records have input/slots/raw_text/source/truncated/given_positions.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

SOS = "[SOS]"
EOS = "[EOS]"
UNK = "[UNK]"
PAD = "[PAD]"
PROMPT_TEMPLATE = "are purchased with"
PREDICTIONS_SCHEMA = "ccgen-predictions-v1"
DATASET_SCHEMA = "ccgen-dataset-v1"

_MARKER_RE = re.compile(r"(?<!\S)(\d+)\)(?:\s|$)")


class DataContractError(ValueError):
    pass


class WhitespaceVocab:
    """Whitespace token vocabulary; ids are dense, specials first."""

    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise DataContractError("duplicate tokens in vocabulary")
        for special in (PAD, SOS, EOS, UNK):
            if special not in self.index:
                raise DataContractError(f"vocabulary missing {special}")

    @classmethod
    def build(cls, lines, extra_tokens=()) -> "WhitespaceVocab":
        seen: dict[str, None] = {}
        for line in lines:
            for tok in line.split():
                seen.setdefault(tok, None)
        for tok in extra_tokens:
            for t in str(tok).split():
                seen.setdefault(t, None)
        body = sorted(t for t in seen if t not in (PAD, SOS, EOS, UNK))
        return cls([PAD, SOS, EOS, UNK] + body)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def sos_id(self) -> int:
        return self.index[SOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    def encode(self, text: str) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(tok, unk) for tok in text.split()]

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            tok = self.tokens[int(i)]
            if tok == PAD:
                continue
            out.append(tok)
        return " ".join(out)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"tokens": self.tokens}, fh)

    @classmethod
    def load(cls, path) -> "WhitespaceVocab":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(obj["tokens"])


@dataclass
class DatasetFile:
    """Read-only view of the harness dataset JSON."""

    concepts: list[str]
    splits: dict[str, list[str]]
    # input surface -> [(target surface, confidence), ...] ranked
    lists: dict[str, list[tuple[str, float]]]
    target_size: int
    concept_index: set[str] = field(default_factory=set)

    def __post_init__(self):
        self.concept_index = set(self.concepts)

    @classmethod
    def load(cls, path) -> "DatasetFile":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        if obj.get("schema") != DATASET_SCHEMA:
            raise DataContractError(f"{path}: unexpected schema {obj.get('schema')!r}")
        lists = {
            entry["input"]: [(s, float(c)) for s, c in entry["targets"]]
            for entry in obj["lists"]
        }
        return cls(
            concepts=list(obj["concepts"]),
            splits={k: list(v) for k, v in obj["splits"].items()},
            lists=lists,
            target_size=int(obj["target_size"]),
        )

    def is_concept(self, surface: str) -> bool:
        return surface in self.concept_index

    def top_targets(self, surface: str, n: int) -> list[str]:
        return [s for s, _ in self.lists.get(surface, [])[:n]]


def read_corpus(path) -> list[str]:
    lines = [l.strip() for l in Path(path).read_text(encoding="utf-8").splitlines()]
    lines = [l for l in lines if l]
    if not lines:
        raise DataContractError(f"empty corpus file: {path}")
    return lines


def build_prompt(surface: str, given: list[str] | None = None) -> str:
    parts = [f"{SOS} {surface} {PROMPT_TEMPLATE}"]
    given = given or []
    for i, g in enumerate(given, start=1):
        parts.append(f"{i}) {g}")
    if given:
        parts.append(f"{len(given) + 1})")
    return " ".join(parts)


def parse_generation(
    text: str,
    input_surface: str,
    dataset: DatasetFile,
    source: str,
    truncated: bool,
    given_positions: int = 0,
) -> dict:
    """Parse one generated sequence into an interchange record dict."""
    body = text
    if body.startswith(SOS):
        body = body[len(SOS):].strip()
    if body.endswith(EOS):
        body = body[: -len(EOS)].rstrip()
    sep = f" {PROMPT_TEMPLATE}"
    if sep in body:
        _, body = body.split(sep, 1)
        body = body.strip()

    markers = list(_MARKER_RE.finditer(body))
    kept = []
    expected = 1
    stop = len(body)
    for m in markers:
        if int(m.group(1)) != expected:
            stop = m.start()
            break
        kept.append(m)
        expected += 1
    slots = []
    for i, m in enumerate(kept):
        start = m.end()
        end = kept[i + 1].start() if i + 1 < len(kept) else stop
        segment = body[start:end].strip()
        if not segment:
            continue
        slots.append(
            {
                "position": int(m.group(1)),
                "concept": segment,
                "valid": dataset.is_concept(segment),
            }
        )
    return {
        "input": input_surface,
        "slots": slots,
        "raw_text": text,
        "source": source,
        "truncated": truncated,
        "given_positions": given_positions,
    }


def write_predictions(path, records: list[dict], header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"schema": PREDICTIONS_SCHEMA, **header}, sort_keys=True) + "\n")
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
