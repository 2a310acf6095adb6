import json
from pathlib import Path

import pytest

from ccgen.core import ConceptSet
from ccgen.dataset import (
    BehaviorRecord,
    CatalogEntry,
    DatasetError,
    SyntheticWorldSpec,
    build_confidence_table,
    build_dataset,
    build_ranked_lists,
    filter_concept_by_tokens,
    generate_synthetic_world,
    load_dataset,
    map_product_to_concept,
    save_dataset,
    split_dataset,
    write_synthetic_world,
)

DATA = Path(__file__).parent / "data"


def canonical_table(table, lists, concept_set):
    obj = table.to_json(concept_set)
    obj["lists"] = {
        ranked.input.surface: [[t.surface, conf] for t, conf in ranked.targets]
        for ranked in lists.values()
    }
    return json.dumps(obj, indent=1, sort_keys=True)


# --- product -> concept mapping ---

def test_map_product_traverses_up(camera_set):
    entry = CatalogEntry(
        product_id="B00004TJ7O",
        category_path=["Electronics", "Camera & Photo", "Digital Cameras", "Point & Shoot Digital Cameras"],
    )
    assert map_product_to_concept(entry, camera_set).surface == "Digital Cameras"


def test_map_product_leaf_match(camera_set):
    entry = CatalogEntry(product_id="p", category_path=["Electronics", "Batteries"])
    assert map_product_to_concept(entry, camera_set).surface == "Batteries"


def test_map_product_no_match(camera_set):
    entry = CatalogEntry(product_id="p", category_path=["Groceries", "Snacks"])
    assert map_product_to_concept(entry, camera_set) is None


def test_filter_concept_by_tokens():
    assert filter_concept_by_tokens("Point & Shoot Digital Cameras")
    assert filter_concept_by_tokens("Batteries")
    assert filter_concept_by_tokens("a b c d e f")
    assert not filter_concept_by_tokens("a b c d e f g")


# --- confidence table ---

def test_single_record_conf_one():
    cs = ConceptSet()
    cs.intern("X")
    cs.intern("Y")
    cs.freeze()
    catalog = [CatalogEntry("px", ["R", "X"]), CatalogEntry("py", ["R", "Y"])]
    behavior = [BehaviorRecord("px", ["py"])]
    table = build_confidence_table(catalog, behavior, cs)
    assert table.freq == {0: 1}
    assert table.cofreq == {(0, 1): 1}
    assert table.conf(0, 1) == 1.0


def test_empty_behavior_gives_empty_table(camera_set):
    table = build_confidence_table([], [], camera_set)
    assert table.freq == {} and table.cofreq == {}


def test_golden_fixture_counts(golden_world):
    cs, catalog, behavior = golden_world
    table = build_confidence_table(catalog, behavior, cs)
    a = cs.lookup("Alpha Gear").id
    b = cs.lookup("Beta Gear").id
    assert table.freq[a] == 4
    assert table.cofreq[(a, b)] == 2
    assert table.conf(a, b) == 0.5  # the conf = 0.5 worked case


def test_golden_fixture_matches_golden_file(golden_world):
    cs, catalog, behavior = golden_world
    table = build_confidence_table(catalog, behavior, cs)
    lists = build_ranked_lists(table, cs, k_collect=4, min_freq=3)
    built = canonical_table(table, lists, cs)
    golden = json.dumps(json.loads((DATA / "golden_conf_table.json").read_text()), indent=1, sort_keys=True)
    assert built == golden


def test_ranked_lists_match_brute_force(golden_world):
    cs, catalog, behavior = golden_world
    table = build_confidence_table(catalog, behavior, cs)
    lists = build_ranked_lists(table, cs, k_collect=4, min_freq=3)
    for x, ranked in lists.items():
        partners = [(y, table.conf(x, y)) for (a, y) in table.cofreq if a == x]
        expected = sorted(partners, key=lambda p: (-p[1], p[0]))[:4]
        assert [(t.id, c) for t, c in ranked.targets] == expected
        confs = [c for _, c in ranked.targets]
        assert confs == sorted(confs, reverse=True)
        assert all(0 < c <= 1 for c in confs)


def test_ranked_lists_low_freq_omitted(golden_world):
    cs, catalog, behavior = golden_world
    table = build_confidence_table(catalog, behavior, cs)
    lists = build_ranked_lists(table, cs, k_collect=4, min_freq=4)
    surfaces = {cs.by_id(x).surface for x in lists}
    assert "Gamma Gear" not in surfaces  # freq 3 < 4
    assert "Alpha Gear" in surfaces


def test_conf_bounds_on_synthetic(small_dataset):
    table = small_dataset.table
    for (x, y), co in table.cofreq.items():
        assert co <= table.freq[x]
        assert 0 < table.conf(x, y) <= 1


# --- splits ---

def make_lists(n):
    cs = ConceptSet()
    concepts = [cs.intern(f"C{i:03d}") for i in range(n + 1)]
    from ccgen.core import RankedList
    from ccgen.dataset import ConfidenceTable

    lists = {}
    table = ConfidenceTable()
    for i in range(n):
        other = concepts[(i + 1) % (n + 1)]
        lists[i] = RankedList(input=concepts[i], targets=[(other, 1.0)])
        table.freq[i] = 1
        table.cofreq[(i, other.id)] = 1
    return cs.freeze(), lists, table


def test_split_sizes_and_determinism():
    cs, lists, table = make_lists(100)
    ds = split_dataset(lists, cs, table, ratios=(0.8, 0.1, 0.1), seed=7, target_size=1)
    assert [len(ds.splits[s]) for s in ("train", "dev", "test")] == [80, 10, 10]
    again = split_dataset(lists, cs, table, ratios=(0.8, 0.1, 0.1), seed=7, target_size=1)
    assert ds.splits == again.splits


def test_split_table1_proportions():
    cs, lists, table = make_lists(7084)
    ds = split_dataset(lists, cs, table, seed=0, target_size=1)
    sizes = {s: len(ds.splits[s]) for s in ("train", "dev", "test")}
    assert abs(sizes["train"] - 5809) <= 1
    assert abs(sizes["dev"] - 425) <= 1
    assert abs(sizes["test"] - 850) <= 1


def test_split_partition_property():
    cs, lists, table = make_lists(57)
    ds = split_dataset(lists, cs, table, ratios=(0.6, 0.2, 0.2), seed=3, target_size=1)
    ids = sorted(x for s in ds.splits.values() for x in s)
    assert ids == sorted(lists)


def test_split_rejects_bad_input():
    cs, lists, table = make_lists(10)
    with pytest.raises(DatasetError):
        split_dataset(lists, cs, table, ratios=(0.8, 0.1, 0.2), seed=0, target_size=1)
    cs2, lists2, table2 = make_lists(2)
    with pytest.raises(DatasetError):
        split_dataset(lists2, cs2, table2, target_size=1)


# --- synthetic world ---

def test_synthetic_world_deterministic():
    spec = SyntheticWorldSpec(n_concepts=30, n_categories=3, baskets=500, complement_graph_density=0.4, noise_rate=0.1, seed=5, vector_dim=4)
    a = generate_synthetic_world(spec)
    b = generate_synthetic_world(spec)
    assert a.concepts == b.concepts
    assert a.vector_lines == b.vector_lines
    assert [(r.product_id, r.also_buy) for r in a.behavior] == [
        (r.product_id, r.also_buy) for r in b.behavior
    ]
    assert a.latent_graph == b.latent_graph


def test_synthetic_world_infeasible_density():
    with pytest.raises(DatasetError, match="density"):
        generate_synthetic_world(
            SyntheticWorldSpec(n_concepts=30, n_categories=3, baskets=100, complement_graph_density=0.05)
        )


def test_synthetic_world_bad_noise():
    with pytest.raises(DatasetError):
        SyntheticWorldSpec(noise_rate=1.0)


def test_noise_free_world_partners_are_graph_neighbors(small_dataset, small_world):
    spec = SyntheticWorldSpec(
        n_concepts=30, n_categories=3, baskets=3000, complement_graph_density=0.4, noise_rate=0.0, seed=9, vector_dim=4
    )
    world = generate_synthetic_world(spec)
    cs = ConceptSet()
    for s in world.concepts:
        cs.intern(s)
    cs.freeze()
    table = build_confidence_table(world.catalog, world.behavior, cs)
    for (x, y) in table.cofreq:
        assert cs.by_id(y).surface in world.latent_graph[cs.by_id(x).surface]


def test_synthetic_world_files_round_trip(tmp_path, small_world):
    paths = write_synthetic_world(small_world, tmp_path / "world", header={"seed": 0})
    from ccgen.core import load_concept_set
    from ccgen.dataset import read_behavior, read_catalog

    cs = load_concept_set(paths["concepts"])
    assert cs.surfaces() == small_world.concepts
    catalog = read_catalog(paths["catalog"])
    behavior = read_behavior(paths["behavior"])
    assert len(catalog) == len(small_world.catalog)
    assert len(behavior) == len(small_world.behavior)
    graph = json.loads(Path(paths["graph"]).read_text())
    assert graph["graph"] == small_world.latent_graph


# --- dataset persistence ---

def test_dataset_save_load_round_trip(tmp_path, small_dataset):
    path = tmp_path / "dataset.json"
    save_dataset(small_dataset, path, header={"seed": 1, "config_hash": "x"})
    loaded = load_dataset(path)
    assert loaded.splits == small_dataset.splits
    assert loaded.concept_set.surfaces() == small_dataset.concept_set.surfaces()
    for x, ranked in small_dataset.lists.items():
        got = loaded.lists[x]
        assert [(t.surface, c) for t, c in got.targets] == [
            (t.surface, c) for t, c in ranked.targets
        ]
    assert loaded.table.freq == small_dataset.table.freq


def test_dataset_lists_have_target_size(small_dataset):
    for ranked in small_dataset.lists.values():
        assert len(ranked.targets) >= small_dataset.target_size
