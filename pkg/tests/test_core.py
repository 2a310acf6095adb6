import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccgen.core import (
    Concept,
    ConceptSet,
    ConceptSetError,
    PredictionRecord,
    RankedList,
    Slot,
    load_concept_set,
    normalize_surface,
    save_concept_set,
)

surfaces = st.text(
    alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd"), max_codepoint=0x2FF),
    min_size=1,
    max_size=12,
).filter(lambda s: s.strip())


def test_intern_first_insertion():
    cs = ConceptSet()
    c = cs.intern("Digital Cameras")
    assert c.id == 0
    assert c.token_count == 2


def test_intern_idempotent():
    cs = ConceptSet()
    first = cs.intern("Digital Cameras")
    again = cs.intern("Digital Cameras")
    assert again.id == first.id
    assert len(cs) == 1


def test_intern_token_count_multiword():
    cs = ConceptSet()
    c = cs.intern("Point & Shoot Digital Cameras")
    assert c.token_count == 5


def test_intern_normalizes_whitespace():
    cs = ConceptSet()
    c = cs.intern("  Digital   Cameras ")
    assert c.surface == "Digital Cameras"
    assert cs.intern("Digital Cameras").id == c.id


def test_intern_empty_rejected():
    cs = ConceptSet()
    with pytest.raises(ConceptSetError):
        cs.intern("   ")


def test_lookup_hit_and_miss():
    cs = ConceptSet()
    c = cs.intern("Batteries")
    assert cs.lookup("Batteries") is c
    assert cs.lookup("batteries") is None  # case-sensitive by default
    assert cs.lookup("Hand Sanitizers") is None


def test_lookup_case_insensitive_flag():
    cs = ConceptSet()
    c = cs.intern("Batteries")
    assert cs.lookup("batteries", case_insensitive=True) is c


def test_frozen_set_rejects_new_concepts():
    cs = ConceptSet()
    cs.intern("Batteries")
    cs.freeze()
    with pytest.raises(ConceptSetError):
        cs.intern("Chargers")
    assert cs.intern("Batteries").id == 0  # existing still resolves


@settings(max_examples=200)
@given(st.lists(surfaces, min_size=1, max_size=30))
def test_intern_lookup_consistency(raw):
    cs = ConceptSet()
    for s in raw:
        interned = cs.intern(s)
        assert cs.lookup(normalize_surface(s)).id == interned.id


def test_concept_set_file_round_trip(tmp_path):
    cs = ConceptSet()
    for s in ["Digital Cameras", "Batteries", "Memory Cards"]:
        cs.intern(s)
    path = tmp_path / "concepts.txt"
    save_concept_set(cs, path)
    loaded = load_concept_set(path)
    assert loaded.surfaces() == cs.surfaces()
    assert [c.id for c in loaded] == [c.id for c in cs]


def test_concept_set_file_skips_comments_and_blanks(tmp_path):
    path = tmp_path / "concepts.txt"
    path.write_text("# header\n\nBatteries\n  \nMemory Cards\n", encoding="utf-8")
    loaded = load_concept_set(path)
    assert loaded.surfaces() == ["Batteries", "Memory Cards"]
    assert loaded.frozen


def test_ranked_list_invariants():
    cs = ConceptSet()
    a, b, c = cs.intern("A"), cs.intern("B"), cs.intern("C")
    RankedList(input=a, targets=[(b, 0.5), (c, 0.25)])
    with pytest.raises(ValueError):
        RankedList(input=a, targets=[(b, 0.25), (c, 0.5)])  # not non-increasing
    with pytest.raises(ValueError):
        RankedList(input=a, targets=[(b, 0.5), (b, 0.5)])  # duplicate
    with pytest.raises(ValueError):
        RankedList(input=a, targets=[(a, 0.5)])  # self


def test_prediction_record_positions():
    cs = ConceptSet()
    a, b = cs.intern("A"), cs.intern("B")
    record = PredictionRecord(
        input=a,
        slots=[Slot(1, b, "B"), Slot(2, b, "B")],  # duplicates preserved
        raw_text="1) B 2) B",
        source="test",
    )
    assert [s.position for s in record.slots] == [1, 2]
    with pytest.raises(ValueError):
        PredictionRecord(input=a, slots=[Slot(2, b, "B"), Slot(1, b, "B")], raw_text="", source="t")
