"""Command-line surface tying the harness together.

Config precedence: command-line flags > --config file (JSON) > defaults.
Every artifact written carries the config hash and seed of its run. Exit
codes: 0 success, 2 config error, 3 data error, 4 runtime error.
"""
from __future__ import annotations

import functools
import hashlib
import json
import sys

import click

from . import baselines as bl
from . import dataset as ds
from . import explain as ex
from . import listlm as lm
from . import metrics as mt
from . import serialize as sr
from .core import ConceptSetError, load_concept_set
from .dataset import DatasetError
from .embed import EmbeddingIndex, WordVectorError, load_word_vectors
from .metrics import MetricsError
from .serialize import SerializationError

CONFIG_ERRORS = (ConceptSetError, click.BadParameter)
DATA_ERRORS = (DatasetError, WordVectorError, SerializationError, MetricsError, bl.BaselineError, json.JSONDecodeError, FileNotFoundError, OSError)


class ConfigFileError(ValueError):
    pass


def _fail(code: int, kind: str, message: str) -> None:
    click.echo(json.dumps({"error": kind, "message": message}), err=True)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigFileError, *CONFIG_ERRORS) as exc:
            _fail(2, "config", str(exc))
        except DATA_ERRORS as exc:
            _fail(3, "data", str(exc))
        except lm.ModelError as exc:
            _fail(4, "runtime", str(exc))
        except Exception as exc:  # anything else is a runtime failure
            _fail(4, "runtime", f"{type(exc).__name__}: {exc}")

    return wrapper


def resolve_config(config_path, overrides: dict) -> dict:
    """Merge defaults <- config file <- explicit flags; unknown keys rejected."""
    resolved: dict = {}
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigFileError(f"config file {config_path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigFileError(f"config file {config_path}: expected a JSON object")
        resolved.update(file_cfg)
    for key, value in overrides.items():
        if value is not None:
            resolved[key] = value
    return resolved


def config_hash(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def artifact_header(resolved: dict) -> dict:
    return {"config_hash": config_hash(resolved), "seed": resolved.get("seed", 0)}


@click.group()
def main() -> None:
    """CCGen benchmark harness."""


@main.command("synth-gen")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--n-concepts", type=int, default=None)
@click.option("--n-categories", type=int, default=None)
@click.option("--baskets", type=int, default=None)
@click.option("--density", type=float, default=None)
@click.option("--noise-rate", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "outdir", type=click.Path(), required=True)
@handle_errors
def synth_gen(config_path, n_concepts, n_categories, baskets, density, noise_rate, seed, outdir):
    """Generate a synthetic world (catalog, behavior, vectors, latent graph)."""
    resolved = resolve_config(
        config_path,
        {
            "n_concepts": n_concepts,
            "n_categories": n_categories,
            "baskets": baskets,
            "density": density,
            "noise_rate": noise_rate,
            "seed": seed,
        },
    )
    spec = ds.SyntheticWorldSpec(
        n_concepts=resolved.get("n_concepts", 200),
        n_categories=resolved.get("n_categories", 10),
        baskets=resolved.get("baskets", 50_000),
        complement_graph_density=resolved.get("density", 0.075),
        noise_rate=resolved.get("noise_rate", 0.1),
        seed=resolved.get("seed", 0),
    )
    world = ds.generate_synthetic_world(spec)
    paths = ds.write_synthetic_world(world, outdir, header=artifact_header(resolved))
    click.echo(json.dumps({"written": paths}))


@main.command("build-dataset")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--concepts", "concepts_path", type=click.Path(), default=None)
@click.option("--catalog", "catalog_path", type=click.Path(), default=None)
@click.option("--behavior", "behavior_path", type=click.Path(), default=None)
@click.option("--min-freq", type=int, default=None)
@click.option("--k-collect", type=int, default=None)
@click.option("--ratios", type=str, default=None, help="train,dev,test e.g. 0.82,0.06,0.12")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@handle_errors
def build_dataset_cmd(config_path, concepts_path, catalog_path, behavior_path, min_freq, k_collect, ratios, seed, out_path):
    """Build the dataset file from concept set + catalog + behavior logs."""
    resolved = resolve_config(
        config_path,
        {
            "concepts": concepts_path,
            "catalog": catalog_path,
            "behavior": behavior_path,
            "min_freq": min_freq,
            "k_collect": k_collect,
            "ratios": ratios,
            "seed": seed,
        },
    )
    for key in ("concepts", "catalog", "behavior"):
        if key not in resolved:
            raise ConfigFileError(f"missing required path: {key}")
    ratio_value = resolved.get("ratios", "0.82,0.06,0.12")
    if isinstance(ratio_value, str):
        parts = tuple(float(v) for v in ratio_value.split(","))
    else:
        parts = tuple(float(v) for v in ratio_value)
    if len(parts) != 3:
        raise ConfigFileError(f"ratios must have 3 components, got {parts}")
    concept_set = load_concept_set(resolved["concepts"])
    dataset = ds.build_dataset(
        ds.read_catalog(resolved["catalog"]),
        ds.read_behavior(resolved["behavior"]),
        concept_set,
        k_collect=resolved.get("k_collect", ds.DEFAULT_K_COLLECT),
        min_freq=resolved.get("min_freq", ds.DEFAULT_MIN_FREQ),
        ratios=parts,
        seed=resolved.get("seed", 0),
    )
    ds.save_dataset(dataset, out_path, header=artifact_header(resolved))
    click.echo(
        json.dumps(
            {
                "lists": len(dataset.lists),
                "splits": {k: len(v) for k, v in dataset.splits.items()},
                "out": out_path,
            }
        )
    )


def _train_config(resolved: dict) -> lm.TrainConfig:
    kwargs = {}
    for key in ("dim", "hidden", "window", "epochs", "batch_size", "lr", "seed", "permutations", "beam", "max_decode_len", "list_size"):
        if key in resolved:
            kwargs[key] = resolved[key]
    return lm.TrainConfig(**kwargs)


@main.command("train-lm")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--two-step/--no-two-step", default=True)
@click.option("--with-explanations", is_flag=True, default=False)
@click.option("--no-lg", is_flag=True, default=False, help="single-target ablation")
@click.option("--mock-teacher", is_flag=True, default=False)
@click.option("--teacher-url", default=None)
@click.option("--cache", "cache_path", type=click.Path(), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@handle_errors
def train_lm(config_path, dataset_path, two_step, with_explanations, no_lg, mock_teacher, teacher_url, cache_path, epochs, seed, out_path):
    """Train the list model (two-step by default) and write checkpoint(s)."""
    resolved = resolve_config(config_path, {"epochs": epochs, "seed": seed})
    config = _train_config(resolved)
    dataset = ds.load_dataset(dataset_path)
    header = artifact_header(resolved)
    if no_lg:
        model = lm.ablation_single_target(dataset, config)
        lm.save_checkpoint(model, out_path, header=header)
        click.echo(json.dumps({"out": out_path, "variant": "no-lg"}))
        return
    teacher = None
    if with_explanations:
        if mock_teacher:
            endpoint = ex.MockEndpoint()
        elif teacher_url:
            endpoint = ex.TeacherEndpoint(base_url=teacher_url)
        else:
            raise ConfigFileError("--with-explanations needs --mock-teacher or --teacher-url")
        cache = ex.ExplanationCache(cache_path)
        teacher = lambda data, split: ex.build_explained_corpus(data, split, endpoint, cache)
    final, after_unordered = lm.train_two_step(
        dataset, config, with_explanations=with_explanations, teacher=teacher, unordered=two_step
    )
    lm.save_checkpoint(final, out_path, header=header)
    written = {"out": out_path, "variant": "two-step" if two_step else "ordered-only"}
    if after_unordered is not None:
        ut_path = out_path + ".unordered.npz" if not out_path.endswith(".npz") else out_path.replace(".npz", ".unordered.npz")
        lm.save_checkpoint(after_unordered, ut_path, header=header)
        written["unordered_checkpoint"] = ut_path
    click.echo(json.dumps(written))


@main.command("export-corpus")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--kind", type=click.Choice(["ordered", "permuted", "single"]), default="ordered")
@click.option("--split", default="train")
@click.option("--permutations", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@handle_errors
def export_corpus(config_path, dataset_path, kind, split, permutations, seed, out_path):
    """Write a training corpus (one serialized line per example) to a text file."""
    resolved = resolve_config(config_path, {"permutations": permutations, "seed": seed})
    dataset = ds.load_dataset(dataset_path)
    if kind == "ordered":
        lines = lm.build_ordered_corpus(dataset, split)
    elif kind == "permuted":
        lines = lm.build_permuted_corpus(
            dataset, split, n=resolved.get("permutations", 10), seed=resolved.get("seed", 0)
        )
    else:
        lines = lm.build_single_target_corpus(dataset, split)
    with open(out_path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    click.echo(json.dumps({"out": out_path, "lines": len(lines), "kind": kind}))


@main.command("train-baseline")
@click.argument("kind", type=click.Choice(["glove", "knn", "pair", "item2vec", "companion"]))
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--vectors", "vectors_path", type=click.Path(), required=True)
@click.option("--split", default="test")
@click.option("--epochs", type=int, default=None)
@click.option("--k-neighbors", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--n", "top_n", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@handle_errors
def train_baseline(kind, config_path, dataset_path, vectors_path, split, epochs, k_neighbors, seed, top_n, out_path):
    """Run a baseline over the split and write interchange predictions."""
    resolved = resolve_config(
        config_path,
        {"epochs": epochs, "k_neighbors": k_neighbors, "seed": seed, "n": top_n},
    )
    dataset = ds.load_dataset(dataset_path)
    index = EmbeddingIndex(dataset.concept_set, load_word_vectors(vectors_path))
    n = resolved.get("n", 5)
    seed_v = resolved.get("seed", 0)
    epochs_v = resolved.get("epochs", 5)
    targets = [dataset.concept_set.by_id(x) for x in dataset.splits[split]]
    if kind == "glove":
        records = [bl.glove_rank(x, index, n) for x in targets]
    elif kind == "knn":
        records = [bl.knn_rank(x, dataset, index, resolved.get("k_neighbors", 3), n) for x in targets]
    else:
        pairs = bl.build_pair_training_set(dataset, seed=seed_v)
        if kind == "pair":
            scorer = bl.train_pair_scorer(pairs, index, epochs=epochs_v, seed=seed_v)
            records = [bl.score_rank(scorer, x, index, n) for x in targets]
        elif kind == "item2vec":
            table = bl.train_item2vec_context(pairs, index, epochs=epochs_v, seed=seed_v)
            records = [bl.item2vec_rank(table, x, n) for x in targets]
        else:
            model = bl.train_companion(pairs, index, epochs=epochs_v, seed=seed_v)
            records = [bl.companion_rank(model, x, index, n) for x in targets]
    sr.write_predictions(out_path, records, header=artifact_header(resolved))
    click.echo(json.dumps({"out": out_path, "records": len(records), "source": kind}))


@main.command("generate")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--split", default="test")
@click.option("--prefix-mode", type=click.Choice(mt.SEQUENTIAL_MODES), default="plain")
@click.option("--n", "prefix_n", type=int, default=0)
@click.option("--probe-6", is_flag=True, default=False)
@click.option("--seed", type=int, default=None)
@click.option("--case-insensitive", is_flag=True, default=False)
@click.option("--out", "out_path", type=click.Path(), required=True)
@handle_errors
def generate(config_path, checkpoint_path, dataset_path, split, prefix_mode, prefix_n, probe_6, seed, case_insensitive, out_path):
    """Decode predictions for a split, optionally with prefix prompting."""
    resolved = resolve_config(config_path, {"seed": seed})
    model = lm.load_checkpoint(checkpoint_path)
    dataset = ds.load_dataset(dataset_path)
    single_target = model.params.phase == "single-target"
    prefixes = mt.build_prefixes(dataset, split, prefix_mode, prefix_n, seed=resolved.get("seed", 0), probe_6=probe_6)
    records = []
    for x in dataset.splits[split]:
        prefix = [dataset.concept_set.by_id(i) for i in prefixes[x]]
        records.append(
            lm.generate_list(
                model.params,
                model.vocab,
                dataset.concept_set.by_id(x),
                dataset.concept_set,
                given_prefix=prefix,
                expect_explanations=model.expect_explanations,
                beam=model.config.beam,
                max_len=model.config.max_decode_len,
                case_insensitive=case_insensitive,
                single_target=single_target,
            )
        )
    sr.write_predictions(out_path, records, header={**artifact_header(resolved), "prefix_mode": prefix_mode, "prefix_n": prefix_n})
    click.echo(json.dumps({"out": out_path, "records": len(records)}))


@main.command("distill-explanations")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--split", default="train")
@click.option("--mock", is_flag=True, default=False)
@click.option("--teacher-url", default=None)
@click.option("--cache", "cache_path", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@handle_errors
def distill_explanations(config_path, dataset_path, split, mock, teacher_url, cache_path, out_path):
    """Build the explanation-augmented corpus via teacher (or mock) + cache."""
    resolve_config(config_path, {})
    dataset = ds.load_dataset(dataset_path)
    if mock:
        endpoint = ex.MockEndpoint()
    elif teacher_url:
        endpoint = ex.TeacherEndpoint(base_url=teacher_url)
    else:
        raise ConfigFileError("need --mock or --teacher-url")
    cache = ex.ExplanationCache(cache_path)
    lines = ex.build_explained_corpus(dataset, split, endpoint, cache)
    with open(out_path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line.text + "\n")
    click.echo(json.dumps({"out": out_path, "lines": len(lines), "cache_entries": len(cache)}))


@main.command("evaluate")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--predictions", "predictions_path", type=click.Path(), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--positions", default=None, help="comma-separated positions to score")
@click.option("--k", type=int, default=None)
@click.option("--buckets", default=None, help="comma-separated frequency bucket edges")
@click.option("--no-ndcg", is_flag=True, default=False)
@click.option("--out", "out_path", type=click.Path(), default=None)
@handle_errors
def evaluate(config_path, predictions_path, dataset_path, positions, k, buckets, no_ndcg, out_path):
    """Score an interchange predictions file against the dataset ground truth."""
    resolved = resolve_config(config_path, {"k": k, "positions": positions, "buckets": buckets})
    dataset = ds.load_dataset(dataset_path)
    truth = mt.GroundTruth.from_dataset(dataset)
    records = sr.read_predictions(predictions_path, dataset.concept_set)
    pos_list = None
    if resolved.get("positions"):
        pos_list = [int(p) for p in str(resolved["positions"]).split(",")]
    report = mt.score(
        records,
        truth,
        positions=pos_list,
        k=resolved.get("k", mt.DEFAULT_K),
        m=dataset.target_size,
        with_ndcg=not no_ndcg,
    )
    if resolved.get("buckets"):
        edges = [int(e) for e in str(resolved["buckets"]).split(",")]
        report.buckets = mt.frequency_bucket_report(records, truth, edges, k=report.k, m=dataset.target_size)
    if out_path:
        mt.save_report(report, out_path, header=artifact_header(resolved))
    click.echo(mt.render_report(report))


@main.command("sequential-eval")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--split", default="test")
@click.option("--prefix-mode", type=click.Choice(mt.SEQUENTIAL_MODES), required=True)
@click.option("--n", "prefix_n", type=int, required=True)
@click.option("--probe-6", is_flag=True, default=False)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@handle_errors
def sequential_eval(config_path, checkpoint_path, dataset_path, split, prefix_mode, prefix_n, probe_6, seed, out_path):
    """Prefix-conditioned generation + scoring of post-prefix positions."""
    resolved = resolve_config(config_path, {"seed": seed})
    model = lm.load_checkpoint(checkpoint_path)
    dataset = ds.load_dataset(dataset_path)

    def generator(x, prefix):
        return lm.generate_list(
            model.params,
            model.vocab,
            x,
            dataset.concept_set,
            given_prefix=prefix,
            expect_explanations=model.expect_explanations,
            beam=model.config.beam,
            max_len=model.config.max_decode_len,
        )

    report, _ = mt.sequential_evaluate(
        generator,
        dataset,
        prefix_mode,
        prefix_n,
        seed=resolved.get("seed", 0),
        split=split,
        probe_6=probe_6,
        m=dataset.target_size,
    )
    if out_path:
        mt.save_report(report, out_path, header=artifact_header(resolved))
    click.echo(mt.render_report(report))


@main.command("report")
@click.option("--report", "report_path", type=click.Path(), required=True)
@handle_errors
def report_cmd(report_path):
    """Render a stored report file as an aligned text table."""
    with open(report_path, encoding="utf-8") as fh:
        obj = json.load(fh)
    body = obj.get("report", obj)
    rep = mt.MetricReport(
        mode=body["mode"],
        n_test=body["n_test"],
        acc_at_k={int(p): v for p, v in body["acc_at_k"].items()},
        acc_overall=body.get("acc_overall"),
        ndcg=body.get("ndcg"),
        valid_rate=body["valid_rate"],
        k=body.get("k", mt.DEFAULT_K),
    )
    click.echo(mt.render_report(rep))


@main.command("ingest-external")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--input", "input_path", type=click.Path(), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--vectors", "vectors_path", type=click.Path(), default=None)
@click.option("--map-to-set", is_flag=True, default=False)
@click.option("--case-insensitive", is_flag=True, default=False)
@click.option("--out", "out_path", type=click.Path(), required=True)
@handle_errors
def ingest_external(config_path, input_path, dataset_path, vectors_path, map_to_set, case_insensitive, out_path):
    """Convert raw external generations to interchange predictions."""
    resolved = resolve_config(config_path, {})
    dataset = ds.load_dataset(dataset_path)
    index = None
    if map_to_set:
        if not vectors_path:
            raise ConfigFileError("--map-to-set requires --vectors")
        index = EmbeddingIndex(dataset.concept_set, load_word_vectors(vectors_path))
    records = bl.external_llm_ingest(
        input_path,
        dataset.concept_set,
        index=index,
        map_to_set=map_to_set,
        case_insensitive=case_insensitive,
    )
    sr.write_predictions(out_path, records, header=artifact_header(resolved))
    click.echo(json.dumps({"out": out_path, "records": len(records)}))


if __name__ == "__main__":
    main()
