"""CLI for the adapter; mirrors the harness naming and exit-code conventions.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime error.
"""
from __future__ import annotations

import functools
import json
import sys

import click

from .config import AdapterConfig, AdapterConfigError, load_config
from .data import DataContractError
from .runner import AdapterRuntimeError, finetune, predict


def _fail(code: int, kind: str, message: str) -> None:
    click.echo(json.dumps({"error": kind, "message": message}), err=True)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AdapterConfigError as exc:
            _fail(2, "config", str(exc))
        except (DataContractError, FileNotFoundError, OSError, json.JSONDecodeError) as exc:
            _fail(3, "data", str(exc))
        except Exception as exc:
            _fail(4, "runtime", f"{type(exc).__name__}: {exc}")

    return wrapper


@click.group()
def main() -> None:
    """Pretrained-LM adapter for the list-generation harness."""


@main.command("finetune")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--dataset", "dataset_path", type=click.Path(), default=None)
@click.option("--corpus", "corpus_specs", multiple=True, help="phase=path, e.g. unordered=ut.txt")
@click.option("--base-model", default=None, help="local model directory; omit for a fresh small model")
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--beam", type=int, default=None)
@click.option("--max-new-tokens", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "output_dir", type=click.Path(), required=True)
@handle_errors
def finetune_cmd(config_path, dataset_path, corpus_specs, base_model, epochs, batch_size, lr, beam, max_new_tokens, seed, output_dir):
    """Phase-wise fine-tuning with dev-nDCG checkpoint selection."""
    config = load_config(config_path) if config_path else AdapterConfig()
    corpora = dict(config.corpora)
    for spec in corpus_specs:
        if "=" not in spec:
            raise AdapterConfigError(f"--corpus wants phase=path, got {spec!r}")
        phase, path = spec.split("=", 1)
        corpora[phase] = path
    config.corpora = corpora
    if corpora and set(config.phase_order) - set(corpora):
        config.phase_order = tuple(p for p in config.phase_order if p in corpora) or tuple(corpora)
    for attr, value in [
        ("dataset_path", dataset_path), ("base_model", base_model), ("epochs", epochs),
        ("batch_size", batch_size), ("lr", lr), ("beam", beam),
        ("max_new_tokens", max_new_tokens), ("seed", seed),
    ]:
        if value is not None:
            setattr(config, attr, value)
    config.output_dir = output_dir
    log = finetune(config)
    click.echo(json.dumps({
        "out": output_dir,
        "checkpoints": log["checkpoints"],
        "dev_ndcg": {p: body["dev_ndcg"][body["selected_epoch"]] for p, body in log["phases"].items()},
    }))


@main.command("predict")
@click.option("--checkpoint", "checkpoint_dir", type=click.Path(), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--split", default="test")
@click.option("--prefix-mode", type=click.Choice(["plain", "given_top_n"]), default="plain")
@click.option("--n", "prefix_n", type=int, default=0)
@click.option("--beam", type=int, default=None)
@click.option("--max-new-tokens", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@handle_errors
def predict_cmd(checkpoint_dir, dataset_path, split, prefix_mode, prefix_n, beam, max_new_tokens, out_path):
    """Decode a split with beam search and write interchange predictions."""
    count = predict(
        checkpoint_dir, dataset_path, out_path,
        split=split, prefix_mode=prefix_mode, prefix_n=prefix_n,
        beam=beam, max_new_tokens=max_new_tokens,
    )
    click.echo(json.dumps({"out": out_path, "records": count}))


if __name__ == "__main__":
    main()
