"""Teacher-model client for explanation distillation, with cache and mock."""
from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass, field

from .core import Concept
from .dataset import Dataset
from .serialize import SerializedExample, encode_with_explanations

PROMPT_TEMPLATE = (
    "Explain why one product is purchased with the other product.\n\n"
    " Q: Why are {y} purchased with {x}?\n A:"
)

_SERIAL_MARKER_RE = re.compile(r"(?:(?<=\s)|^)\d+\)(?:\s|$)")


class TeacherError(RuntimeError):
    def __init__(self, message: str, x: str | None = None, y: str | None = None):
        super().__init__(message)
        self.pair = (x, y)


@dataclass
class TeacherEndpoint:
    base_url: str
    completion_path: str = "/v1/completions"
    auth_token_env: str = "CCGEN_TEACHER_TOKEN"
    timeout: float = 30.0
    max_retries: int = 2
    max_concurrency: int = 4
    teacher_id: str = "generic"
    max_tokens: int = 64
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def teacher_prompt(x: Concept | str, y: Concept | str) -> str:
    xs = x.surface if isinstance(x, Concept) else x
    ys = y.surface if isinstance(y, Concept) else y
    return PROMPT_TEMPLATE.format(x=xs, y=ys)


def sanitize_reply(text: str) -> str:
    """Strip, truncate at the first blank line, and drop serial markers.

    Keeps replies safe for the list grammar: an explanation containing ' 2) '
    would otherwise split the decoded slot in two.
    """
    text = text.strip()
    if "\n\n" in text:
        text = text.split("\n\n", 1)[0]
    text = " ".join(text.split())
    text = _SERIAL_MARKER_RE.sub(" ", text)
    return " ".join(text.split())


def mock_teacher(x: Concept | str, y: Concept | str) -> str:
    xs = x.surface if isinstance(x, Concept) else x
    ys = y.surface if isinstance(y, Concept) else y
    return f"{ys} are used together with {xs} because {ys} support the primary function of {xs}."


class ExplanationCache:
    """Append-only (x, y, teacher_id) -> explanation store backed by a JSONL file."""

    def __init__(self, path=None):
        self.path = path
        self._entries: dict[tuple[str, str, str], str] = {}
        self._lock = threading.Lock()
        if path is not None and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    obj = json.loads(line)
                    self._entries[(obj["x"], obj["y"], obj["teacher_id"])] = obj["explanation"]

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, x: str, y: str, teacher_id: str) -> str | None:
        return self._entries.get((x, y, teacher_id))

    def put(self, x: str, y: str, teacher_id: str, explanation: str) -> None:
        key = (x, y, teacher_id)
        with self._lock:
            if key in self._entries:
                return  # entries are immutable once written
            self._entries[key] = explanation
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(
                        json.dumps(
                            {"x": x, "y": y, "teacher_id": teacher_id, "explanation": explanation},
                            sort_keys=True,
                        )
                        + "\n"
                    )


def _http_transport(endpoint: TeacherEndpoint):
    import requests

    def send(prompt: str) -> str:
        url = endpoint.base_url.rstrip("/") + endpoint.completion_path
        headers = {}
        token = os.environ.get(endpoint.auth_token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last_error = None
        for _ in range(endpoint.max_retries + 1):
            try:
                resp = requests.post(
                    url,
                    json={
                        "prompt": prompt,
                        "max_tokens": endpoint.max_tokens,
                        "temperature": endpoint.temperature,
                    },
                    headers=headers,
                    timeout=endpoint.timeout,
                )
                resp.raise_for_status()
                body = resp.json()
                if "text" not in body:
                    raise TeacherError(f"malformed teacher reply: {body!r}")
                return body["text"]
            except TeacherError:
                raise
            except Exception as exc:  # network / HTTP / JSON failures retry
                last_error = exc
        raise TeacherError(f"teacher request failed after retries: {last_error}")

    return send


def query_teacher(
    endpoint: TeacherEndpoint,
    x: Concept | str,
    y: Concept | str,
    cache: ExplanationCache,
    transport=None,
) -> str:
    """Cache-first explanation fetch; replies are sanitized before storing."""
    xs = x.surface if isinstance(x, Concept) else x
    ys = y.surface if isinstance(y, Concept) else y
    hit = cache.get(xs, ys, endpoint.teacher_id)
    if hit is not None:
        return hit
    send = transport if transport is not None else _http_transport(endpoint)
    try:
        raw = send(teacher_prompt(xs, ys))
    except TeacherError as exc:
        raise TeacherError(str(exc), xs, ys) from exc
    explanation = sanitize_reply(raw)
    if not explanation:
        raise TeacherError("teacher returned an empty explanation", xs, ys)
    cache.put(xs, ys, endpoint.teacher_id, explanation)
    return explanation


class MockEndpoint(TeacherEndpoint):
    """Hermetic teacher: deterministic template, no network."""

    def __init__(self):
        super().__init__(base_url="mock://", teacher_id="mock")


def fetch_explanation(endpoint: TeacherEndpoint, x, y, cache: ExplanationCache, transport=None) -> str:
    if isinstance(endpoint, MockEndpoint) and transport is None:
        transport = lambda prompt, _x=x, _y=y: mock_teacher(_x, _y)
    return query_teacher(endpoint, x, y, cache, transport=transport)


def build_explained_corpus(
    dataset: Dataset,
    split: str,
    endpoint: TeacherEndpoint,
    cache: ExplanationCache,
    transport=None,
    list_size: int | None = None,
) -> list[SerializedExample]:
    """One explanation-augmented line per list in the split; resumable via cache."""
    size = list_size or dataset.target_size
    lines: list[SerializedExample] = []
    for ranked in dataset.split_lists(split):
        targets = ranked.target_concepts(size)
        explanations = [
            fetch_explanation(endpoint, ranked.input, y, cache, transport=transport)
            for y in targets
        ]
        lines.append(encode_with_explanations(ranked.input, targets, explanations))
    return lines
