"""Dataset construction from catalog + behavior logs, and synthetic worlds.

The pipeline: map products to concepts via their category path, fold behavior
records into a directed co-purchase confidence table, keep the top-10 partners
per sufficiently frequent concept, and split concepts into train/dev/test.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .core import Concept, ConceptSet, RankedList, normalize_surface
from .serialize import check_surface_serializable

DATASET_SCHEMA = "ccgen-dataset-v1"
DEFAULT_MIN_FREQ = 20
DEFAULT_K_COLLECT = 10
DEFAULT_TARGET_SIZE = 5
DEFAULT_SPLIT_RATIOS = (0.82, 0.06, 0.12)


class DatasetError(ValueError):
    pass


@dataclass
class CatalogEntry:
    product_id: str
    category_path: list[str]  # root -> leaf

    def __post_init__(self) -> None:
        if not self.category_path:
            raise DatasetError(f"product {self.product_id}: empty category path")


@dataclass
class BehaviorRecord:
    product_id: str
    also_buy: list[str]


class ConfidenceTable:
    """freq(x), cofreq(x,y), and conf(x,y) = cofreq(x,y)/freq(x)."""

    def __init__(self) -> None:
        self.freq: dict[int, int] = {}
        self.cofreq: dict[tuple[int, int], int] = {}

    def conf(self, x: int, y: int) -> float:
        co = self.cofreq.get((x, y), 0)
        if co == 0:
            return 0.0
        return co / self.freq[x]

    def partners(self, x: int) -> list[int]:
        return [y for (a, y) in self.cofreq if a == x]

    def to_json(self, concept_set: ConceptSet) -> dict:
        return {
            "freq": {concept_set.by_id(x).surface: n for x, n in sorted(self.freq.items())},
            "cofreq": [
                {"x": concept_set.by_id(x).surface, "y": concept_set.by_id(y).surface, "count": n}
                for (x, y), n in sorted(self.cofreq.items())
            ],
        }

    @classmethod
    def from_json(cls, obj: dict, concept_set: ConceptSet) -> "ConfidenceTable":
        table = cls()
        for surface, n in obj["freq"].items():
            table.freq[concept_set.lookup(surface).id] = n
        for entry in obj["cofreq"]:
            x = concept_set.lookup(entry["x"]).id
            y = concept_set.lookup(entry["y"]).id
            table.cofreq[(x, y)] = entry["count"]
        return table


def filter_concept_by_tokens(surface: str, max_tokens: int = 6) -> bool:
    """True iff the surface has at most max_tokens whitespace tokens."""
    return len(normalize_surface(surface).split()) <= max_tokens


def map_product_to_concept(entry: CatalogEntry, concept_set: ConceptSet) -> Concept | None:
    """Walk the category path from the leaf up; first surface in the set wins."""
    for surface in reversed(entry.category_path):
        concept = concept_set.lookup(surface)
        if concept is not None:
            return concept
    return None


def build_confidence_table(
    catalog: list[CatalogEntry],
    behavior: list[BehaviorRecord],
    concept_set: ConceptSet,
) -> ConfidenceTable:
    """Fold behavior records into directed co-purchase counts.

    freq(x) counts records whose source product maps to x. Within one record the
    complement concepts are deduplicated, so cofreq(x,y) <= freq(x) and
    conf(x,y) <= 1 always holds. Pairs with an unmappable side and self-pairs
    are dropped.
    """
    product_to_concept: dict[str, int] = {}
    for entry in catalog:
        concept = map_product_to_concept(entry, concept_set)
        if concept is not None:
            product_to_concept[entry.product_id] = concept.id
    table = ConfidenceTable()
    for record in behavior:
        x = product_to_concept.get(record.product_id)
        if x is None:
            continue
        table.freq[x] = table.freq.get(x, 0) + 1
        complements = set()
        for pid in record.also_buy:
            y = product_to_concept.get(pid)
            if y is not None and y != x:
                complements.add(y)
        for y in complements:
            table.cofreq[(x, y)] = table.cofreq.get((x, y), 0) + 1
    return table


def build_ranked_lists(
    table: ConfidenceTable,
    concept_set: ConceptSet,
    k_collect: int = DEFAULT_K_COLLECT,
    min_freq: int = DEFAULT_MIN_FREQ,
) -> dict[int, RankedList]:
    """Top-k_collect partners by conf desc (ties: ascending id) per eligible x."""
    partners_by_x: dict[int, list[int]] = {}
    for (x, y) in table.cofreq:
        partners_by_x.setdefault(x, []).append(y)
    lists: dict[int, RankedList] = {}
    for x, partners in sorted(partners_by_x.items()):
        if table.freq.get(x, 0) < min_freq or len(partners) < k_collect:
            continue
        ranked = sorted(partners, key=lambda y: (-table.conf(x, y), y))[:k_collect]
        lists[x] = RankedList(
            input=concept_set.by_id(x),
            targets=[(concept_set.by_id(y), table.conf(x, y)) for y in ranked],
        )
    return lists


@dataclass
class Dataset:
    concept_set: ConceptSet
    lists: dict[int, RankedList]
    splits: dict[str, list[int]]  # train/dev/test -> concept ids
    table: ConfidenceTable
    target_size: int = DEFAULT_TARGET_SIZE

    def split_lists(self, name: str) -> list[RankedList]:
        return [self.lists[x] for x in self.splits[name]]

    def validate(self) -> None:
        all_ids = [x for ids in self.splits.values() for x in ids]
        if len(set(all_ids)) != len(all_ids):
            raise DatasetError("splits overlap")
        if set(all_ids) != set(self.lists):
            raise DatasetError("splits do not cover the listed concepts")
        for ranked in self.lists.values():
            if len(ranked.targets) < self.target_size:
                raise DatasetError(
                    f"{ranked.input.surface}: only {len(ranked.targets)} targets"
                )


def split_dataset(
    lists: dict[int, RankedList],
    concept_set: ConceptSet,
    table: ConfidenceTable,
    ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS,
    seed: int = 0,
    target_size: int = DEFAULT_TARGET_SIZE,
) -> Dataset:
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"split ratios must sum to 1, got {ratios}")
    ids = sorted(lists)
    if len(ids) < 3:
        raise DatasetError(f"need at least 3 listed concepts to split, got {len(ids)}")
    rng = random.Random(seed)
    rng.shuffle(ids)
    n = len(ids)
    n_dev = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train = n - n_dev - n_test  # remainder goes to train
    splits = {
        "train": sorted(ids[:n_train]),
        "dev": sorted(ids[n_train : n_train + n_dev]),
        "test": sorted(ids[n_train + n_dev :]),
    }
    ds = Dataset(concept_set=concept_set, lists=lists, splits=splits, table=table, target_size=target_size)
    ds.validate()
    return ds


def build_dataset(
    catalog: list[CatalogEntry],
    behavior: list[BehaviorRecord],
    concept_set: ConceptSet,
    k_collect: int = DEFAULT_K_COLLECT,
    min_freq: int = DEFAULT_MIN_FREQ,
    ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS,
    seed: int = 0,
) -> Dataset:
    for concept in concept_set:
        check_surface_serializable(concept.surface, allow_colon=False)
    table = build_confidence_table(catalog, behavior, concept_set)
    lists = build_ranked_lists(table, concept_set, k_collect=k_collect, min_freq=min_freq)
    return split_dataset(lists, concept_set, table, ratios=ratios, seed=seed)


# --- persistence ---

def save_dataset(ds: Dataset, path, header: dict | None = None) -> None:
    obj = {
        "schema": DATASET_SCHEMA,
        **(header or {}),
        "target_size": ds.target_size,
        "concepts": ds.concept_set.surfaces(),
        "lists": [
            {
                "input": ranked.input.surface,
                "targets": [[t.surface, conf] for t, conf in ranked.targets],
            }
            for _, ranked in sorted(ds.lists.items())
        ],
        "splits": {
            name: [ds.concept_set.by_id(x).surface for x in ids]
            for name, ids in ds.splits.items()
        },
        "table": ds.table.to_json(ds.concept_set),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("schema") != DATASET_SCHEMA:
        raise DatasetError(f"{path}: unexpected schema {obj.get('schema')!r}")
    cs = ConceptSet()
    for surface in obj["concepts"]:
        cs.intern(surface)
    cs.freeze()
    lists: dict[int, RankedList] = {}
    for entry in obj["lists"]:
        x = cs.lookup(entry["input"])
        lists[x.id] = RankedList(
            input=x,
            targets=[(cs.lookup(s), float(c)) for s, c in entry["targets"]],
        )
    splits = {
        name: sorted(cs.lookup(s).id for s in surfaces)
        for name, surfaces in obj["splits"].items()
    }
    table = ConfidenceTable.from_json(obj["table"], cs)
    ds = Dataset(
        concept_set=cs,
        lists=lists,
        splits=splits,
        table=table,
        target_size=obj.get("target_size", DEFAULT_TARGET_SIZE),
    )
    ds.validate()
    return ds


def read_catalog(path) -> list[CatalogEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "schema" in obj and "product_id" not in obj:
                continue
            entries.append(CatalogEntry(product_id=obj["product_id"], category_path=obj["category"]))
    return entries


def read_behavior(path) -> list[BehaviorRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "schema" in obj and "product_id" not in obj:
                continue
            records.append(BehaviorRecord(product_id=obj["product_id"], also_buy=obj.get("also_buy", [])))
    return records


# --- synthetic worlds ---

@dataclass
class SyntheticWorldSpec:
    n_concepts: int = 200
    n_categories: int = 10
    baskets: int = 50_000
    complement_graph_density: float = 0.075
    noise_rate: float = 0.1
    seed: int = 0
    products_per_concept: int = 2
    partners_per_basket: int = 3
    vector_dim: int = 16
    k_collect: int = DEFAULT_K_COLLECT

    def __post_init__(self) -> None:
        if min(self.n_concepts, self.n_categories, self.baskets) <= 0:
            raise DatasetError("all synthetic world counts must be positive")
        if not (0.0 <= self.noise_rate < 1.0):
            raise DatasetError(f"noise_rate must be in [0,1), got {self.noise_rate}")

    @property
    def neighbors_per_concept(self) -> int:
        return round(self.complement_graph_density * self.n_concepts)


@dataclass
class SyntheticWorld:
    spec: SyntheticWorldSpec
    concepts: list[str]
    categories: list[int]  # concept index -> category
    catalog: list[CatalogEntry]
    behavior: list[BehaviorRecord]
    vector_lines: list[str]
    token_manifest: list[str]
    latent_graph: dict[str, list[str]]  # concept surface -> ranked neighbor surfaces


def generate_synthetic_world(spec: SyntheticWorldSpec) -> SyntheticWorld:
    """Sample a latent category-level complement graph and emit a consistent world.

    Concepts in one category share a category token, and every member of a
    category shares the category's ranked complement list. Baskets follow that
    list with probability 1 - noise_rate, else draw a uniform concept. Token
    vectors are the category base plus small jitter, so same-category concepts
    compose to similar embeddings while complements live in other categories.
    """
    L = spec.neighbors_per_concept
    if L < spec.k_collect:
        raise DatasetError(
            f"complement_graph_density {spec.complement_graph_density} gives only "
            f"{L} latent neighbors per concept; need at least k_collect={spec.k_collect}"
        )
    rng = random.Random(spec.seed)
    n, n_cat = spec.n_concepts, spec.n_categories

    categories = [i % n_cat for i in range(n)]
    members = {c: [i for i in range(n) if categories[i] == c] for c in range(n_cat)}

    # surfaces: "Kind03 Item042" — first token carries the category signal
    concepts = [f"Kind{categories[i]:02d} Item{i:03d}" for i in range(n)]

    # category-level complement structure: each category targets two others
    cat_complements = {
        c: [(c + 1 + n_cat // 2) % n_cat, (c + 2) % n_cat] for c in range(n_cat)
    }
    graph_ids: dict[int, list[int]] = {}
    cat_lists: dict[int, list[int]] = {}
    for c in range(n_cat):
        pool = [i for tc in cat_complements[c] for i in members[tc]]
        if len(pool) < L:
            raise DatasetError(
                f"category {c}: complement pool of {len(pool)} cannot supply {L} neighbors"
            )
        cat_lists[c] = rng.sample(pool, L)
    for i in range(n):
        graph_ids[i] = list(cat_lists[categories[i]])

    # geometric affinity over the ranked neighbor list
    decay = 0.9
    weights = [decay**j for j in range(L)]
    wsum = sum(weights)
    weights = [w / wsum for w in weights]

    catalog: list[CatalogEntry] = []
    products: dict[int, list[str]] = {}
    for i in range(n):
        products[i] = []
        for p in range(spec.products_per_concept):
            pid = f"P{i:04d}-{p}"
            path = ["Synthetic Root", f"Family {categories[i]:02d}", concepts[i]]
            if p % 2 == 1:
                # deeper leaf outside the concept set exercises traverse-up
                path = path + [f"{concepts[i]} Deluxe Edition Pro Max Ultra XXL"]
            catalog.append(CatalogEntry(product_id=pid, category_path=path))
            products[i].append(pid)

    behavior: list[BehaviorRecord] = []
    for _ in range(spec.baskets):
        x = rng.randrange(n)
        also = []
        for _ in range(spec.partners_per_basket):
            if rng.random() < spec.noise_rate:
                y = rng.randrange(n)
            else:
                y = rng.choices(graph_ids[x], weights=weights, k=1)[0]
            also.append(rng.choice(products[y]))
        behavior.append(BehaviorRecord(product_id=rng.choice(products[x]), also_buy=also))

    # token vectors: category base + jitter, lowercase tokens for default lookup
    bases = {}
    for c in range(n_cat):
        bases[c] = [rng.gauss(0.0, 1.0) for _ in range(spec.vector_dim)]
    vector_lines = []
    token_manifest = []

    def emit(token: str, cat: int) -> None:
        vec = [bases[cat][d] + rng.gauss(0.0, 0.15) for d in range(spec.vector_dim)]
        vector_lines.append(token + " " + " ".join(f"{v:.6f}" for v in vec))
        token_manifest.append(token)

    for c in range(n_cat):
        emit(f"kind{c:02d}", c)
    for i in range(n):
        emit(f"item{i:03d}", categories[i])

    latent_graph = {concepts[i]: [concepts[j] for j in graph_ids[i]] for i in range(n)}
    return SyntheticWorld(
        spec=spec,
        concepts=concepts,
        categories=categories,
        catalog=catalog,
        behavior=behavior,
        vector_lines=vector_lines,
        token_manifest=token_manifest,
        latent_graph=latent_graph,
    )


def write_synthetic_world(world: SyntheticWorld, outdir, header: dict | None = None) -> dict[str, str]:
    """Write concept set, catalog, behavior, vectors, manifest, and graph files."""
    import os

    os.makedirs(outdir, exist_ok=True)
    paths = {
        "concepts": os.path.join(outdir, "concepts.txt"),
        "catalog": os.path.join(outdir, "catalog.jsonl"),
        "behavior": os.path.join(outdir, "behavior.jsonl"),
        "vectors": os.path.join(outdir, "vectors.txt"),
        "manifest": os.path.join(outdir, "token_manifest.txt"),
        "graph": os.path.join(outdir, "latent_graph.json"),
    }
    with open(paths["concepts"], "w", encoding="utf-8") as fh:
        fh.write("# synthetic concept set\n")
        for surface in world.concepts:
            fh.write(surface + "\n")
    with open(paths["catalog"], "w", encoding="utf-8") as fh:
        if header:
            fh.write(json.dumps({"schema": "ccgen-catalog-v1", **header}, sort_keys=True) + "\n")
        for entry in world.catalog:
            fh.write(json.dumps({"product_id": entry.product_id, "category": entry.category_path}) + "\n")
    with open(paths["behavior"], "w", encoding="utf-8") as fh:
        if header:
            fh.write(json.dumps({"schema": "ccgen-behavior-v1", **header}, sort_keys=True) + "\n")
        for record in world.behavior:
            fh.write(json.dumps({"product_id": record.product_id, "also_buy": record.also_buy}) + "\n")
    with open(paths["vectors"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(world.vector_lines) + "\n")
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(world.token_manifest) + "\n")
    with open(paths["graph"], "w", encoding="utf-8") as fh:
        json.dump({"schema": "ccgen-latent-graph-v1", **(header or {}), "graph": world.latent_graph}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return paths
