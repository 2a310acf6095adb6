"""Dedup-aware accuracy, confidence-weighted nDCG, valid rate, and reports.

Position-m accuracy requires the m-th slot to be a non-duplicate concept whose
rank in the co-purchase-confidence order is <= k. nDCG weights each
non-duplicate slot by conf(x, y) over log2(position + 1), normalized by the
ideal DCG of the ground-truth list.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .core import ConceptSet, PredictionRecord, RankedList
from .dataset import ConfidenceTable, Dataset

DEFAULT_K = 10
DEFAULT_M = 5
REPORT_SCHEMA = "ccgen-report-v1"


class MetricsError(ValueError):
    pass


class GroundTruth:
    """Per-concept candidate ranking by conf(x, .) plus the top-10 lists."""

    def __init__(self, lists: dict[int, RankedList], table: ConfidenceTable):
        self.lists = lists
        self.table = table
        self._partners: dict[int, list[int]] = {}
        for (x, y) in table.cofreq:
            self._partners.setdefault(x, []).append(y)
        self._rank_cache: dict[int, dict[int, int]] = {}

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "GroundTruth":
        return cls(ds.lists, ds.table)

    def ranking(self, x: int) -> dict[int, int]:
        """1-based rank of every positive-conf candidate of x; ties by id."""
        cached = self._rank_cache.get(x)
        if cached is None:
            partners = [(y, self.table.conf(x, y)) for y in self._partners.get(x, [])]
            partners.sort(key=lambda p: (-p[1], p[0]))
            cached = {y: r for r, (y, _) in enumerate(partners, start=1)}
            self._rank_cache[x] = cached
        return cached

    def rank_of(self, x: int, candidate: int | None) -> int | None:
        """Rank in the conf order, or None for invalid/zero-conf candidates."""
        if candidate is None:
            return None
        return self.ranking(x).get(candidate)


@dataclass
class MetricReport:
    mode: str
    n_test: int
    acc_at_k: dict[int, float]  # position -> accuracy
    acc_overall: float | None
    ndcg: float | None
    valid_rate: float
    k: int = DEFAULT_K
    buckets: dict[str, "MetricReport"] = field(default_factory=dict)

    def to_json(self) -> dict:
        obj = {
            "mode": self.mode,
            "n_test": self.n_test,
            "k": self.k,
            "acc_at_k": {str(m): v for m, v in sorted(self.acc_at_k.items())},
            "acc_overall": self.acc_overall,
            "ndcg": self.ndcg,
            "valid_rate": self.valid_rate,
        }
        if self.buckets:
            obj["buckets"] = {name: r.to_json() for name, r in self.buckets.items()}
        return obj


def _dedup_ok(record: PredictionRecord, m: int) -> bool:
    """True iff slot m exists, is valid, and does not repeat an earlier slot."""
    slot = record.slot_at(m)
    if slot is None or slot.concept is None:
        return False
    for earlier in record.slots:
        if earlier.position >= m:
            break
        if earlier.concept is not None and earlier.concept.id == slot.concept.id:
            return False
    return True


def acc_at_k(
    predictions: list[PredictionRecord],
    truth: GroundTruth,
    m: int,
    k: int = DEFAULT_K,
) -> float:
    if not predictions:
        raise MetricsError("empty test set")
    hits = 0
    for record in predictions:
        if not _dedup_ok(record, m):
            continue
        rank = truth.rank_of(record.input.id, record.slot_at(m).concept.id)
        if rank is not None and rank <= k:
            hits += 1
    return hits / len(predictions)


def acc_overall(
    predictions: list[PredictionRecord],
    truth: GroundTruth,
    m: int = DEFAULT_M,
    k: int = DEFAULT_K,
    positions: list[int] | None = None,
) -> float:
    positions = positions if positions is not None else list(range(1, m + 1))
    return sum(acc_at_k(predictions, truth, i, k) for i in positions) / len(positions)


def ndcg(
    predictions: list[PredictionRecord],
    truth: GroundTruth,
    m: int = DEFAULT_M,
) -> float:
    if not predictions:
        raise MetricsError("empty test set")
    total = 0.0
    for record in predictions:
        x = record.input.id
        ranked = truth.lists.get(x)
        if ranked is None or len(ranked.targets) < m:
            raise MetricsError(
                f"ground truth for {record.input.surface!r} has fewer than {m} entries"
            )
        idcg = sum(conf / math.log2(i + 2) for i, (_, conf) in enumerate(ranked.targets[:m]))
        if idcg == 0.0:
            raise MetricsError(f"iDCG is zero for {record.input.surface!r}")
        dcg = 0.0
        for i in range(1, m + 1):
            if not _dedup_ok(record, i):
                continue
            conf = truth.table.conf(x, record.slot_at(i).concept.id)
            dcg += conf / math.log2(i + 1)
        total += dcg / idcg
    return total / len(predictions)


def valid_rate(predictions: list[PredictionRecord]) -> float:
    slots = [s for record in predictions for s in record.slots[record.given_positions:]]
    if not slots:
        return 0.0
    return sum(1 for s in slots if s.concept is not None) / len(slots)


def score(
    predictions: list[PredictionRecord],
    truth: GroundTruth,
    positions: list[int] | None = None,
    k: int = DEFAULT_K,
    m: int = DEFAULT_M,
    mode: str = "plain",
    with_ndcg: bool = True,
) -> MetricReport:
    positions = positions if positions is not None else list(range(1, m + 1))
    accs = {i: acc_at_k(predictions, truth, i, k) for i in positions}
    overall = sum(accs.values()) / len(accs) if accs else None
    nd = ndcg(predictions, truth, m) if with_ndcg else None
    return MetricReport(
        mode=mode,
        n_test=len(predictions),
        acc_at_k=accs,
        acc_overall=overall,
        ndcg=nd,
        valid_rate=valid_rate(predictions),
        k=k,
    )


SEQUENTIAL_MODES = ("plain", "given_top_n", "given_sampled_top10_n", "given_sampled_all_n")


def build_prefixes(
    dataset: Dataset,
    split: str,
    mode: str,
    n: int,
    seed: int = 0,
    probe_6: bool = False,
    target_size: int | None = None,
) -> dict[int, list[int]]:
    """Per test concept, the list of prefix concept ids for the requested mode."""
    import random

    if mode not in SEQUENTIAL_MODES:
        raise MetricsError(f"unknown prefix mode {mode!r}")
    size = target_size or dataset.target_size
    if mode == "given_top_n" and n >= size and not probe_6:
        raise MetricsError(
            f"given_top_n with n={n} covers the whole list; pass probe_6 to score position {size + 1}"
        )
    rng = random.Random(seed)
    all_ids = [c.id for c in dataset.concept_set]
    prefixes: dict[int, list[int]] = {}
    for x in dataset.splits[split]:
        if mode == "plain":
            prefixes[x] = []
        elif mode == "given_top_n":
            prefixes[x] = [y.id for y, _ in dataset.lists[x].targets[:n]]
        elif mode == "given_sampled_top10_n":
            top10 = [y.id for y, _ in dataset.lists[x].targets]
            prefixes[x] = rng.sample(top10, n)
        else:  # given_sampled_all_n
            pool = [i for i in all_ids if i != x]
            prefixes[x] = rng.sample(pool, n)
    return prefixes


def sequential_evaluate(
    generator,
    dataset: Dataset,
    mode: str,
    n: int,
    seed: int = 0,
    split: str = "test",
    probe_6: bool = False,
    k: int = DEFAULT_K,
    m: int = DEFAULT_M,
) -> tuple[MetricReport, list[PredictionRecord]]:
    """Generate with per-mode prefixes and score only post-prefix positions.

    `generator(x_concept, prefix_concepts)` must return a PredictionRecord.
    Positions are reported at their absolute index; '+1' reports 2..5, the
    n=5 probe reports position 6 only.
    """
    truth = GroundTruth.from_dataset(dataset)
    if mode == "plain":
        positions = list(range(1, m + 1))
        n = 0
    elif probe_6 and n >= m:
        positions = [m + 1]
    else:
        positions = list(range(n + 1, m + 1))
    if not positions:
        raise MetricsError(f"mode {mode} with n={n} leaves no position to score")
    prefixes = build_prefixes(dataset, split, mode, n, seed=seed, probe_6=probe_6)
    records = []
    for x in dataset.splits[split]:
        prefix = [dataset.concept_set.by_id(i) for i in prefixes[x]]
        records.append(generator(dataset.concept_set.by_id(x), prefix))
    tag = {"plain": "plain", "given_top_n": f"+{n}", "given_sampled_top10_n": f"+{n} (top 10)", "given_sampled_all_n": f"+{n} (all)"}[mode]
    report = score(
        records,
        truth,
        positions=positions,
        k=k,
        m=m,
        mode=tag,
        with_ndcg=(mode == "plain"),
    )
    return report, records


def frequency_bucket_report(
    predictions: list[PredictionRecord],
    truth: GroundTruth,
    bucket_edges: list[int] | None = None,
    k: int = DEFAULT_K,
    m: int = DEFAULT_M,
) -> dict[str, MetricReport]:
    """Partition test concepts by freq(x) and score each populated bucket."""
    edges = sorted(bucket_edges if bucket_edges is not None else [50, 200])
    bounds = [(None, edges[0])] + [(a, b) for a, b in zip(edges, edges[1:])] + [(edges[-1], None)]
    reports: dict[str, MetricReport] = {}
    for lo, hi in bounds:
        name = (
            f"freq<{hi}" if lo is None else f"freq>={lo}" if hi is None else f"{lo}<=freq<{hi}"
        )
        members = [
            r
            for r in predictions
            if (lo is None or truth.table.freq.get(r.input.id, 0) >= lo)
            and (hi is None or truth.table.freq.get(r.input.id, 0) < hi)
        ]
        if not members:
            continue  # empty bucket: absent, not zero
        reports[name] = score(members, truth, k=k, m=m, mode=name)
    return reports


def render_report(report: MetricReport, title: str = "") -> str:
    """Aligned text table: positions, Overall, nDCG, VR, x100 with 2 decimals."""
    positions = sorted(report.acc_at_k)
    headers = [str(p) for p in positions] + ["Overall", "nDCG", "VR"]
    values = [f"{report.acc_at_k[p] * 100:.2f}" for p in positions]
    values.append(f"{report.acc_overall * 100:.2f}" if report.acc_overall is not None else "-")
    values.append(f"{report.ndcg * 100:.2f}" if report.ndcg is not None else "-")
    values.append(f"{report.valid_rate * 100:.2f}")
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    lines = []
    if title:
        lines.append(title)
    lines.append(f"mode={report.mode}  n_test={report.n_test}  k={report.k}")
    lines.append("  ".join(h.rjust(w) for h, w in zip(headers, widths)))
    lines.append("  ".join(v.rjust(w) for v, w in zip(values, widths)))
    for name, sub in report.buckets.items():
        lines.append("")
        lines.append(render_report(sub, title=f"[{name}]"))
    return "\n".join(lines)


def save_report(report: MetricReport, path, header: dict | None = None) -> None:
    obj = {"schema": REPORT_SCHEMA, **(header or {}), "report": report.to_json()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
