import sys
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def criterion(capsys):
    """Context manager printing one '[acceptance] name: PASS/FAIL' line per
    criterion, outside pytest's capture so the lines reach the real stdout."""

    @contextmanager
    def _criterion(name):
        try:
            yield
        except BaseException:
            with capsys.disabled():
                print(f"[acceptance] {name}: FAIL", flush=True)
            raise
        with capsys.disabled():
            print(f"[acceptance] {name}: PASS", flush=True)

    return _criterion

from ccgen.core import ConceptSet, RankedList
from ccgen.dataset import (
    BehaviorRecord,
    CatalogEntry,
    ConfidenceTable,
    Dataset,
    SyntheticWorldSpec,
    build_dataset,
    generate_synthetic_world,
)

CAMERA_SURFACES = [
    "Digital Cameras",
    "Camera Lenses",
    "Batteries",
    "Camera Cases",
    "Memory Cards",
    "Battery Chargers",
    "Lens Caps",
    "Screen Protector Foils",
    "Lens Hoods",
    "Battery Grips",
    "Remote Controls",
    "Complete Tripods",
    "Tripod Heads",
]


@pytest.fixture
def camera_set():
    cs = ConceptSet()
    for surface in CAMERA_SURFACES:
        cs.intern(surface)
    return cs.freeze()


@pytest.fixture
def camera_top5(camera_set):
    return [camera_set.lookup(s) for s in CAMERA_SURFACES[1:6]]


# --- golden 20-basket fixture over 5 concepts (A..E) ---
# Products: one per concept (pA..pE) plus pA2 mapping to A through a deeper path.
# Counts below are hand-checkable: freq(A)=4 with cofreq(A,B)=2 gives conf 0.5.

GOLDEN_CONCEPTS = ["Alpha Gear", "Beta Gear", "Gamma Gear", "Delta Gear", "Epsilon Gear"]

GOLDEN_CATALOG = [
    ("pA", ["Root", "Alpha Gear"]),
    ("pA2", ["Root", "Alpha Gear", "Alpha Gear Special Edition Ultra Long Leaf"]),
    ("pB", ["Root", "Beta Gear"]),
    ("pC", ["Root", "Gamma Gear"]),
    ("pD", ["Root", "Delta Gear"]),
    ("pE", ["Root", "Epsilon Gear"]),
    ("pX", ["Root", "Unknown Thing"]),
]

GOLDEN_BEHAVIOR = [
    ("pA", ["pB", "pC"]),
    ("pA", ["pB"]),
    ("pA2", ["pC", "pD"]),
    ("pA", ["pE", "pE"]),  # duplicate complement concept within one record
    ("pB", ["pA", "pC"]),
    ("pB", ["pC"]),
    ("pB", ["pD", "pX"]),  # pX unmappable, dropped
    ("pB", ["pB"]),  # self pair, dropped
    ("pB", ["pE"]),
    ("pC", ["pA"]),
    ("pC", ["pD", "pE"]),
    ("pC", ["pA", "pB"]),
    ("pD", ["pE"]),
    ("pD", ["pE", "pA"]),
    ("pD", ["pB", "pC"]),
    ("pE", ["pA", "pB", "pC", "pD"]),
    ("pE", ["pD"]),
    ("pE", ["pD", "pC"]),
    ("pE", ["pB"]),
    ("pX", ["pA", "pB"]),  # unmappable source, entire record dropped
]


@pytest.fixture
def golden_world():
    cs = ConceptSet()
    for surface in GOLDEN_CONCEPTS:
        cs.intern(surface)
    cs.freeze()
    catalog = [CatalogEntry(product_id=p, category_path=list(path)) for p, path in GOLDEN_CATALOG]
    behavior = [BehaviorRecord(product_id=p, also_buy=list(ab)) for p, ab in GOLDEN_BEHAVIOR]
    return cs, catalog, behavior


def small_world_spec(seed=0):
    return SyntheticWorldSpec(
        n_concepts=40,
        n_categories=4,
        baskets=4000,
        complement_graph_density=0.3,
        noise_rate=0.05,
        seed=seed,
        vector_dim=8,
    )


@pytest.fixture(scope="session")
def small_world():
    return generate_synthetic_world(small_world_spec())


@pytest.fixture(scope="session")
def small_dataset(small_world):
    cs = ConceptSet()
    for surface in small_world.concepts:
        cs.intern(surface)
    cs.freeze()
    return build_dataset(
        small_world.catalog,
        small_world.behavior,
        cs,
        min_freq=5,
        ratios=(0.7, 0.15, 0.15),
        seed=1,
    )


@pytest.fixture(scope="session")
def small_vectors(small_world, tmp_path_factory):
    path = tmp_path_factory.mktemp("vec") / "vectors.txt"
    path.write_text("\n".join(small_world.vector_lines) + "\n", encoding="utf-8")
    return path
