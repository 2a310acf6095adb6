"""Phase-wise fine-tuning and beam decoding for the adapter.

Training runs unordered-then-ordered phases over the exported corpus files.
After every epoch the model decodes the dev split, the predictions go through
the harness CLI evaluator in a subprocess, and the epoch with the best dev
nDCG is kept as the phase checkpoint (epoch 0 = the unadapted model competes
too, so a selected checkpoint can never score below it).
"""
from __future__ import annotations

import copy
import json
import subprocess
from pathlib import Path

import torch
from transformers import AutoModelForCausalLM, GPT2Config, GPT2LMHeadModel
from transformers.utils import logging as hf_logging

# keep stdout machine-readable: save_pretrained's shard progress bar would
# otherwise interleave with the CLI's JSON output
hf_logging.disable_progress_bar()

from .config import AdapterConfig, AdapterConfigError
from .data import (
    DataContractError,
    DatasetFile,
    PROMPT_TEMPLATE,
    WhitespaceVocab,
    build_prompt,
    parse_generation,
    read_corpus,
    write_predictions,
)

SOURCE = "hf-adapter"


class AdapterRuntimeError(RuntimeError):
    pass


def build_vocab(config: AdapterConfig, dataset: DatasetFile) -> WhitespaceVocab:
    lines: list[str] = []
    for phase in config.phase_order:
        lines.extend(read_corpus(config.corpora[phase]))
    # dev/test inputs never appear in training corpora; intern their tokens so
    # prompts encode without [UNK]
    extra = list(dataset.concepts) + [PROMPT_TEMPLATE]
    extra += [f"{i})" for i in range(1, dataset.target_size + 2)]
    return WhitespaceVocab.build(lines, extra_tokens=extra)


def build_model(config: AdapterConfig, vocab: WhitespaceVocab):
    if config.base_model:
        model = AutoModelForCausalLM.from_pretrained(config.base_model)
        model.resize_token_embeddings(len(vocab))
    else:
        arch = GPT2Config(
            vocab_size=len(vocab),
            n_positions=config.n_positions,
            n_embd=config.n_embd,
            n_layer=config.n_layer,
            n_head=config.n_head,
            bos_token_id=vocab.sos_id,
            eos_token_id=vocab.eos_id,
            pad_token_id=vocab.pad_id,
        )
        model = GPT2LMHeadModel(arch)
    model.config.pad_token_id = vocab.pad_id
    model.config.eos_token_id = vocab.eos_id
    return model


def _pad_batch(rows: list[list[int]], pad_id: int):
    width = max(len(r) for r in rows)
    ids = torch.full((len(rows), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(rows), width), dtype=torch.long)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
        mask[i, : len(row)] = 1
    labels = ids.masked_fill(mask == 0, -100)
    return ids, mask, labels


def _train_epoch(model, optimizer, encoded, batch_size, pad_id, generator) -> float:
    model.train()
    order = torch.randperm(len(encoded), generator=generator).tolist()
    total, count = 0.0, 0
    for start in range(0, len(order), batch_size):
        rows = [encoded[i] for i in order[start : start + batch_size]]
        ids, mask, labels = _pad_batch(rows, pad_id)
        out = model(input_ids=ids, attention_mask=mask, labels=labels)
        optimizer.zero_grad()
        out.loss.backward()
        optimizer.step()
        total += float(out.loss.detach())
        count += 1
    return total / max(count, 1)


@torch.no_grad()
def _generate_one(model, vocab: WhitespaceVocab, prompt: str, beam: int, max_new_tokens: int):
    ids = torch.tensor([vocab.encode(prompt)], dtype=torch.long)
    mask = torch.ones_like(ids)
    out = model.generate(
        input_ids=ids,
        attention_mask=mask,
        max_new_tokens=max_new_tokens,
        num_beams=beam,
        do_sample=False,
        early_stopping=beam > 1,
        eos_token_id=vocab.eos_id,
        pad_token_id=vocab.pad_id,
        suppress_tokens=[vocab.pad_id, vocab.unk_id, vocab.sos_id],
    )
    seq = out[0].tolist()
    tail = seq[ids.shape[1] :]
    truncated = vocab.eos_id not in tail
    return vocab.decode(seq), truncated


def generate_records(
    model,
    vocab: WhitespaceVocab,
    dataset: DatasetFile,
    inputs: list[str],
    beam: int,
    max_new_tokens: int,
    prefix_mode: str = "plain",
    prefix_n: int = 0,
) -> list[dict]:
    model.eval()
    records = []
    for surface in inputs:
        if prefix_mode == "plain":
            given: list[str] = []
        elif prefix_mode == "given_top_n":
            given = dataset.top_targets(surface, prefix_n)
        else:
            raise AdapterConfigError(f"unsupported prefix mode: {prefix_mode!r}")
        prompt = build_prompt(surface, given)
        text, truncated = _generate_one(model, vocab, prompt, beam, max_new_tokens)
        records.append(
            parse_generation(
                text, surface, dataset,
                source=SOURCE, truncated=truncated, given_positions=len(given),
            )
        )
    return records


def evaluate_with_harness(config: AdapterConfig, predictions_path, report_path) -> dict:
    """Shell out to the harness evaluator; returns the stored report body."""
    cmd = list(config.evaluator) + [
        "evaluate",
        "--predictions", str(predictions_path),
        "--dataset", str(config.dataset_path),
        "--out", str(report_path),
    ]
    result = subprocess.run(cmd, capture_output=True, text=True)
    if result.returncode != 0:
        raise AdapterRuntimeError(
            f"harness evaluator failed (exit {result.returncode}): {result.stderr.strip()}"
        )
    with open(report_path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return obj.get("report", obj)


def _dev_score(model, vocab, dataset, config: AdapterConfig, workdir: Path, tag: str) -> float:
    records = generate_records(
        model, vocab, dataset, dataset.splits["dev"],
        beam=config.beam, max_new_tokens=config.max_new_tokens,
    )
    preds = workdir / f"dev_{tag}.jsonl"
    write_predictions(preds, records, header={"source": SOURCE, "seed": config.seed})
    report = evaluate_with_harness(config, preds, workdir / f"dev_{tag}.report.json")
    ndcg = report.get("ndcg")
    if ndcg is None:
        raise AdapterRuntimeError("evaluator report carries no ndcg value")
    return float(ndcg)


def finetune(config: AdapterConfig) -> dict:
    """Run all phases; returns a summary also written to output_dir/training_log.json."""
    config.validate()
    torch.manual_seed(config.seed)
    outdir = Path(config.output_dir)
    devdir = outdir / "dev_eval"
    devdir.mkdir(parents=True, exist_ok=True)

    dataset = DatasetFile.load(config.dataset_path)
    if "dev" not in dataset.splits or not dataset.splits["dev"]:
        raise DataContractError("dataset has no dev split for checkpoint selection")
    vocab = build_vocab(config, dataset)
    model = build_model(config, vocab)

    log: dict = {"config": config.to_json(), "vocab_size": len(vocab), "phases": {}}
    checkpoints = {}
    for phase in config.phase_order:
        encoded = [
            vocab.encode(line)[: config.n_positions]
            for line in read_corpus(config.corpora[phase])
        ]
        optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr)
        generator = torch.Generator().manual_seed(config.seed)

        losses: list[float] = []
        dev_ndcg = [_dev_score(model, vocab, dataset, config, devdir, f"{phase}_e0")]
        best_epoch = 0
        best_state = copy.deepcopy(model.state_dict())
        for epoch in range(1, config.epochs + 1):
            losses.append(
                _train_epoch(model, optimizer, encoded, config.batch_size, vocab.pad_id, generator)
            )
            dev_ndcg.append(_dev_score(model, vocab, dataset, config, devdir, f"{phase}_e{epoch}"))
            if dev_ndcg[-1] > dev_ndcg[best_epoch]:
                best_epoch = epoch
                best_state = copy.deepcopy(model.state_dict())
        model.load_state_dict(best_state)

        ckpt = outdir / f"checkpoint-{phase}"
        ckpt.mkdir(parents=True, exist_ok=True)
        model.save_pretrained(ckpt)
        vocab.save(ckpt / "vocab.json")
        with open(ckpt / "adapter_config.json", "w", encoding="utf-8") as fh:
            json.dump(config.to_json(), fh, indent=1)
        checkpoints[phase] = str(ckpt)
        log["phases"][phase] = {
            "losses": losses,
            "dev_ndcg": dev_ndcg,
            "selected_epoch": best_epoch,
            "checkpoint": str(ckpt),
        }

    with open(outdir / "training_log.json", "w", encoding="utf-8") as fh:
        json.dump(log, fh, indent=1)
    log["checkpoints"] = checkpoints
    return log


def load_checkpoint(checkpoint_dir):
    ckpt = Path(checkpoint_dir)
    if not ckpt.exists():
        raise AdapterConfigError(f"checkpoint not found: {checkpoint_dir}")
    model = AutoModelForCausalLM.from_pretrained(ckpt)
    vocab = WhitespaceVocab.load(ckpt / "vocab.json")
    with open(ckpt / "adapter_config.json", encoding="utf-8") as fh:
        config = AdapterConfig.from_json(json.load(fh))
    return model, vocab, config


def predict(
    checkpoint_dir,
    dataset_path,
    out_path,
    split: str = "test",
    prefix_mode: str = "plain",
    prefix_n: int = 0,
    beam: int | None = None,
    max_new_tokens: int | None = None,
) -> int:
    """Decode a split and write interchange predictions; returns record count."""
    model, vocab, config = load_checkpoint(checkpoint_dir)
    dataset = DatasetFile.load(dataset_path)
    if split not in dataset.splits:
        raise DataContractError(f"dataset has no split {split!r}")
    records = generate_records(
        model, vocab, dataset, dataset.splits[split],
        beam=beam if beam is not None else config.beam,
        max_new_tokens=max_new_tokens if max_new_tokens is not None else config.max_new_tokens,
        prefix_mode=prefix_mode,
        prefix_n=prefix_n,
    )
    write_predictions(
        out_path, records,
        header={"source": SOURCE, "seed": config.seed, "prefix_mode": prefix_mode, "prefix_n": prefix_n},
    )
    return len(records)
