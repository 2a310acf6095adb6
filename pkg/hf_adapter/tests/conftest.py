from contextlib import contextmanager

import pytest

from harness_io import harness


@pytest.fixture
def criterion(capsys):
    """Prints one '[acceptance] name: PASS/FAIL' line outside pytest capture."""

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


@pytest.fixture(scope="session")
def workbench(tmp_path_factory):
    """Small synthetic world + dataset + exported corpora, built via the harness CLI."""
    root = tmp_path_factory.mktemp("workbench")
    world = root / "world"
    harness(
        "synth-gen", "--n-concepts", 30, "--n-categories", 3, "--baskets", 3000,
        "--density", 0.4, "--noise-rate", 0.05, "--seed", 1, "--out", world,
    )
    dataset = root / "dataset.json"
    harness(
        "build-dataset", "--concepts", world / "concepts.txt",
        "--catalog", world / "catalog.jsonl", "--behavior", world / "behavior.jsonl",
        "--min-freq", 5, "--ratios", "0.7,0.15,0.15", "--seed", 1, "--out", dataset,
    )
    ut = root / "unordered.txt"
    ot = root / "ordered.txt"
    harness("export-corpus", "--dataset", dataset, "--kind", "permuted",
            "--permutations", 5, "--seed", 0, "--out", ut)
    harness("export-corpus", "--dataset", dataset, "--kind", "ordered", "--out", ot)
    return {"root": root, "dataset": dataset, "unordered": ut, "ordered": ot, "world": world}


@pytest.fixture(scope="session")
def trained(workbench, tmp_path_factory):
    """One fine-tuning run shared by the tests that inspect its artifacts."""
    from hf_adapter.config import AdapterConfig
    from hf_adapter.runner import finetune

    outdir = tmp_path_factory.mktemp("trained")
    config = AdapterConfig(
        dataset_path=str(workbench["dataset"]),
        corpora={"unordered": str(workbench["unordered"]), "ordered": str(workbench["ordered"])},
        epochs=4,
        batch_size=16,
        lr=3e-3,
        beam=2,
        n_embd=48,
        n_layer=2,
        n_head=2,
        seed=0,
        output_dir=str(outdir),
    )
    log = finetune(config)
    return {"config": config, "log": log, "outdir": outdir}
