import itertools
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle_metrics as bf
from ccgen.core import Concept, ConceptSet, PredictionRecord, RankedList, Slot
from ccgen.dataset import ConfidenceTable
from ccgen.metrics import (
    GroundTruth,
    MetricsError,
    acc_at_k,
    acc_overall,
    frequency_bucket_report,
    ndcg,
    render_report,
    score,
    valid_rate,
)


def make_universe(n=6, seed=0):
    """Random but valid confidence world over n concepts with full truth lists."""
    rng = random.Random(seed)
    cs = ConceptSet()
    concepts = [cs.intern(f"K{i}") for i in range(n)]
    cs.freeze()
    table = ConfidenceTable()
    for x in range(n):
        table.freq[x] = rng.randint(5, 30)
        partners = [y for y in range(n) if y != x]
        for y in partners:
            table.cofreq[(x, y)] = rng.randint(1, table.freq[x])
    lists = {}
    for x in range(n):
        order = sorted(
            (y for y in range(n) if y != x), key=lambda y: (-table.conf(x, y), y)
        )
        lists[x] = RankedList(
            input=concepts[x], targets=[(concepts[y], table.conf(x, y)) for y in order]
        )
    return cs, table, lists


def record_from_tuple(cs, x, slots, given_positions=0):
    out = []
    for i, value in enumerate(slots, start=1):
        if value is None:
            out.append(Slot(position=i, concept=None, raw="Invalid Thing"))
        else:
            c = cs.by_id(value)
            out.append(Slot(position=i, concept=c, raw=c.surface))
    return PredictionRecord(
        input=cs.by_id(x), slots=out, raw_text="", source="test", given_positions=given_positions
    )


def to_bf(table):
    return {pair: table.conf(*pair) for pair in table.cofreq}


def test_perfect_predictions_score_one():
    cs, table, lists = make_universe()
    truth = GroundTruth(lists, table)
    records = [
        record_from_tuple(cs, x, [t.id for t, _ in lists[x].targets[:5]]) for x in lists
    ]
    for m in range(1, 6):
        assert acc_at_k(records, truth, m) == 1.0
    assert acc_overall(records, truth) == 1.0
    assert ndcg(records, truth) == pytest.approx(1.0)
    assert valid_rate(records) == 1.0


def test_duplicate_slot_fails_position():
    cs, table, lists = make_universe()
    truth = GroundTruth(lists, table)
    top = [t.id for t, _ in lists[0].targets[:5]]
    dup = [top[0], top[0], top[2], top[3], top[4]]
    records = [record_from_tuple(cs, 0, dup)]
    assert acc_at_k(records, truth, 1) == 1.0
    assert acc_at_k(records, truth, 2) == 0.0  # duplicate, regardless of rank
    assert acc_at_k(records, truth, 3) == 1.0


def test_invalid_slot_unranked():
    cs, table, lists = make_universe()
    truth = GroundTruth(lists, table)
    records = [record_from_tuple(cs, 0, [None, lists[0].targets[0][0].id])]
    assert acc_at_k(records, truth, 1) == 0.0
    assert acc_at_k(records, truth, 2) == 1.0
    assert valid_rate(records) == 0.5


def test_short_record_fails_missing_positions():
    cs, table, lists = make_universe()
    truth = GroundTruth(lists, table)
    records = [record_from_tuple(cs, 0, [lists[0].targets[0][0].id])]
    assert acc_at_k(records, truth, 1) == 1.0
    for m in (2, 3, 4, 5):
        assert acc_at_k(records, truth, m) == 0.0


def test_acc_overall_is_mean():
    cs, table, lists = make_universe()
    truth = GroundTruth(lists, table)
    records = [record_from_tuple(cs, 0, [lists[0].targets[0][0].id])]
    accs = [acc_at_k(records, truth, m) for m in range(1, 6)]
    assert acc_overall(records, truth) == pytest.approx(sum(accs) / 5, abs=1e-12)


def test_all_invalid_ndcg_zero():
    cs, table, lists = make_universe()
    truth = GroundTruth(lists, table)
    records = [record_from_tuple(cs, 0, [None] * 5)]
    assert ndcg(records, truth) == 0.0


def test_ndcg_worked_example():
    # 3-slot toy: confs (0.5, 0.3, 0.2); prediction (y2, y1, dup y2)
    cs = ConceptSet()
    x = cs.intern("X")
    y1, y2, y3 = cs.intern("Y1"), cs.intern("Y2"), cs.intern("Y3")
    cs.freeze()
    table = ConfidenceTable()
    table.freq[x.id] = 10
    table.cofreq[(x.id, y1.id)] = 5
    table.cofreq[(x.id, y2.id)] = 3
    table.cofreq[(x.id, y3.id)] = 2
    lists = {x.id: RankedList(input=x, targets=[(y1, 0.5), (y2, 0.3), (y3, 0.2)])}
    truth = GroundTruth(lists, table)
    records = [record_from_tuple(cs, x.id, [y2.id, y1.id, y2.id])]
    dcg = 0.3 / math.log2(2) + 0.5 / math.log2(3) + 0.0
    idcg = 0.5 / math.log2(2) + 0.3 / math.log2(3) + 0.2 / math.log2(4)
    assert ndcg(records, truth, m=3) == pytest.approx(dcg / idcg)


def test_empty_test_set_rejected():
    cs, table, lists = make_universe()
    truth = GroundTruth(lists, table)
    with pytest.raises(MetricsError):
        acc_at_k([], truth, 1)
    with pytest.raises(MetricsError):
        ndcg([], truth)


def test_rank_of_tie_break():
    cs = ConceptSet()
    x, a, b = cs.intern("X"), cs.intern("A"), cs.intern("B")
    cs.freeze()
    table = ConfidenceTable()
    table.freq[x.id] = 4
    table.cofreq[(x.id, b.id)] = 2
    table.cofreq[(x.id, a.id)] = 2  # tie -> lower id first
    truth = GroundTruth({}, table)
    assert truth.rank_of(x.id, a.id) == 1
    assert truth.rank_of(x.id, b.id) == 2
    assert truth.rank_of(x.id, x.id) is None  # zero conf -> unranked


# --- oracle equivalence on enumerated tuples ---

def test_exhaustive_oracle_equivalence_sample():
    cs, table, lists = make_universe(n=6, seed=3)
    truth = GroundTruth(lists, table)
    conf = to_bf(table)
    ranks = bf.rank_table(conf, list(range(6)))
    truth_lists = {x: [t.id for t, _ in lists[x].targets] for x in lists}
    values = list(range(6)) + [None]
    rng = random.Random(11)
    tuples = [tuple(rng.choice(values) for _ in range(5)) for _ in range(400)]
    for k in (2, 10):
        for tup in tuples:
            records = [record_from_tuple(cs, 0, list(tup))]
            preds = {0: tup}
            for m in range(1, 6):
                assert acc_at_k(records, truth, m, k) == bf.acc_at_k_bf(preds, ranks, m, k)
            assert acc_overall(records, truth, k=k) == bf.acc_overall_bf(preds, ranks, 5, k)
            assert ndcg(records, truth) == pytest.approx(
                bf.ndcg_bf(preds, conf, truth_lists, 5), abs=1e-12
            )
            assert valid_rate(records) == bf.valid_rate_bf(preds)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 6).map(lambda v: None if v == 6 else v), min_size=0, max_size=6), st.integers(0, 5))
def test_ndcg_bounds_property(slots, x):
    cs, table, lists = make_universe(n=6, seed=7)
    truth = GroundTruth(lists, table)
    records = [record_from_tuple(cs, x, slots)]
    value = ndcg(records, truth)
    assert 0.0 <= value <= 1.0 + 1e-12


def test_appending_duplicate_never_improves():
    cs, table, lists = make_universe(n=6, seed=5)
    truth = GroundTruth(lists, table)
    base = [t.id for t, _ in lists[2].targets[:4]]
    with_dup = base + [base[0]]
    r_base = [record_from_tuple(cs, 2, base + [lists[2].targets[4][0].id])]
    r_dup = [record_from_tuple(cs, 2, with_dup)]
    assert ndcg(r_dup, truth) <= ndcg(r_base, truth)
    assert acc_at_k(r_dup, truth, 5) <= acc_at_k(r_base, truth, 5)


# --- buckets and rendering ---

def test_frequency_buckets_partition():
    cs, table, lists = make_universe(n=6, seed=9)
    truth = GroundTruth(lists, table)
    records = [
        record_from_tuple(cs, x, [t.id for t, _ in lists[x].targets[:5]]) for x in lists
    ]
    edges = [15]
    reports = frequency_bucket_report(records, truth, edges)
    total = sum(r.n_test for r in reports.values())
    assert total == len(records)
    # recompute each bucket by hand-partitioning
    for name, report in reports.items():
        lo_is_low = name.startswith("freq<")
        members = [
            r
            for r in records
            if (table.freq[r.input.id] < 15) == lo_is_low
        ]
        assert report.n_test == len(members)
        assert report.acc_overall == pytest.approx(acc_overall(members, truth))


def test_single_bucket_equals_global():
    cs, table, lists = make_universe(n=6, seed=9)
    truth = GroundTruth(lists, table)
    records = [
        record_from_tuple(cs, x, [t.id for t, _ in lists[x].targets[:5]]) for x in lists
    ]
    reports = frequency_bucket_report(records, truth, [100_000])
    assert list(reports) == ["freq<100000"]
    assert reports["freq<100000"].acc_overall == pytest.approx(
        score(records, truth).acc_overall
    )


def test_render_report_layout():
    cs, table, lists = make_universe()
    truth = GroundTruth(lists, table)
    records = [
        record_from_tuple(cs, x, [t.id for t, _ in lists[x].targets[:5]]) for x in lists
    ]
    text = render_report(score(records, truth))
    assert "Overall" in text and "nDCG" in text and "VR" in text
    assert "100.00" in text
