import json

import pytest

from ccgen.core import ConceptSet
from ccgen.explain import (
    ExplanationCache,
    MockEndpoint,
    TeacherEndpoint,
    TeacherError,
    build_explained_corpus,
    fetch_explanation,
    mock_teacher,
    query_teacher,
    sanitize_reply,
    teacher_prompt,
)
from ccgen.serialize import decode_list


def test_prompt_exact_bytes():
    assert teacher_prompt("Digital Cameras", "Batteries") == (
        "Explain why one product is purchased with the other product.\n\n"
        " Q: Why are Batteries purchased with Digital Cameras?\n A:"
    )


def test_prompt_accepts_concepts(camera_set):
    x = camera_set.lookup("Digital Cameras")
    y = camera_set.lookup("Batteries")
    assert teacher_prompt(x, y) == teacher_prompt("Digital Cameras", "Batteries")


def test_sanitize_reply():
    assert sanitize_reply("  plain answer  ") == "plain answer"
    assert sanitize_reply("first paragraph.\n\nsecond paragraph") == "first paragraph."
    assert sanitize_reply("they power it 2) and also this") == "they power it and also this"
    assert sanitize_reply("line\nbreaks   collapse") == "line breaks collapse"
    assert sanitize_reply("") == ""


def test_sanitized_reply_survives_grammar(camera_set):
    # a hostile reply containing a serial marker must not add slots after encoding
    from ccgen.serialize import encode_with_explanations

    x = camera_set.lookup("Digital Cameras")
    y = camera_set.lookup("Batteries")
    hostile = sanitize_reply("needed for power 2) bogus extra slot")
    example = encode_with_explanations(x, [y], [hostile])
    record = decode_list(example.text, camera_set, expect_explanations=True)
    assert len(record.slots) == 1
    assert record.slots[0].concept is y


def test_cache_round_trip(tmp_path):
    path = tmp_path / "cache.jsonl"
    cache = ExplanationCache(path)
    cache.put("X", "Y", "mock", "because")
    cache.put("X", "Y", "mock", "different")  # immutable: first write wins
    reloaded = ExplanationCache(path)
    assert reloaded.get("X", "Y", "mock") == "because"
    assert reloaded.get("X", "Y", "other") is None
    assert len(reloaded) == 1


def test_cache_file_is_jsonl(tmp_path):
    path = tmp_path / "cache.jsonl"
    cache = ExplanationCache(path)
    cache.put("X", "Y", "mock", "because")
    cache.put("A", "B", "mock", "reasons")
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0]) == {
        "explanation": "because",
        "teacher_id": "mock",
        "x": "X",
        "y": "Y",
    }


def test_query_teacher_cache_first():
    calls = []

    def transport(prompt):
        calls.append(prompt)
        return "an answer"

    endpoint = TeacherEndpoint(base_url="http://example.invalid", teacher_id="t")
    cache = ExplanationCache()
    assert query_teacher(endpoint, "X", "Y", cache, transport=transport) == "an answer"
    assert query_teacher(endpoint, "X", "Y", cache, transport=transport) == "an answer"
    assert len(calls) == 1  # second call served from cache
    assert "Why are Y purchased with X?" in calls[0]


def test_query_teacher_empty_reply_rejected():
    endpoint = TeacherEndpoint(base_url="http://example.invalid")
    with pytest.raises(TeacherError):
        query_teacher(endpoint, "X", "Y", ExplanationCache(), transport=lambda p: "  \n\n  ")


def test_endpoint_validation():
    with pytest.raises(ValueError):
        TeacherEndpoint(base_url="http://example.invalid", timeout=0)
    with pytest.raises(ValueError):
        TeacherEndpoint(base_url="http://example.invalid", max_retries=-1)


def test_mock_teacher_deterministic(camera_set):
    x = camera_set.lookup("Digital Cameras")
    y = camera_set.lookup("Batteries")
    reply = mock_teacher(x, y)
    assert reply == mock_teacher(x, y)
    assert "Batteries" in reply and "Digital Cameras" in reply
    # and it is already grammar-safe
    assert sanitize_reply(reply) == reply


def test_fetch_explanation_mock_no_network():
    cache = ExplanationCache()
    got = fetch_explanation(MockEndpoint(), "Digital Cameras", "Batteries", cache)
    assert got == mock_teacher("Digital Cameras", "Batteries")
    assert cache.get("Digital Cameras", "Batteries", "mock") == got


def test_build_explained_corpus(small_dataset, tmp_path):
    cache = ExplanationCache(tmp_path / "cache.jsonl")
    lines = build_explained_corpus(small_dataset, "dev", MockEndpoint(), cache)
    assert len(lines) == len(small_dataset.splits["dev"])
    for example in lines:
        record = decode_list(example.text, small_dataset.concept_set, expect_explanations=True)
        assert len(record.slots) == small_dataset.target_size
        assert all(s.valid and s.explanation for s in record.slots)
    # second pass is pure cache hits: rebuilding from disk gives identical lines
    cache2 = ExplanationCache(tmp_path / "cache.jsonl")
    before = len(cache2)
    again = build_explained_corpus(small_dataset, "dev", MockEndpoint(), cache2)
    assert [e.text for e in again] == [e.text for e in lines]
    assert len(cache2) == before
