"""A compact from-scratch next-token model over whitespace tokens.

Architecture: a fixed-window feedforward net. Each step sees the embeddings of
the previous `window` tokens plus a pooled conditioning vector built from the
prompt segment ("[SOS] {x} are purchased with"), so generation stays anchored
to the input concept even when the recent history is noisy. Trained by plain
minibatch SGD on the sequence log-likelihood; decoding is beam search with
early stopping.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Concept, ConceptSet, PredictionRecord, Slot
from .dataset import Dataset
from .metrics import GroundTruth, ndcg
from .serialize import (
    DEFAULT_PROMPT_TEMPLATE,
    EOS,
    SOS,
    build_prefix_prompt,
    decode_list,
    encode_ordered,
    sample_permutations,
)

UNK = "[UNK]"
CHECKPOINT_SCHEMA = "ccgen-checkpoint-v1"


class ModelError(ValueError):
    pass


class Vocab:
    """Dense token ids: [SOS]=0, [EOS]=1, [UNK]=2, then corpus tokens by
    frequency descending, ties lexicographic."""

    SPECIALS = (SOS, EOS, UNK)

    def __init__(self, tokens: list[str]):
        self.tokens = list(tokens)
        self.ids = {t: i for i, t in enumerate(self.tokens)}
        if self.tokens[:3] != list(self.SPECIALS):
            raise ModelError("vocab must start with the special tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def sos(self) -> int:
        return 0

    @property
    def eos(self) -> int:
        return 1

    @property
    def unk(self) -> int:
        return 2

    def encode(self, text_tokens: list[str], allow_unk: bool = True) -> list[int]:
        out = []
        for t in text_tokens:
            i = self.ids.get(t)
            if i is None:
                if not allow_unk:
                    raise ModelError(f"token {t!r} not in vocabulary")
                i = self.unk
            out.append(i)
        return out

    def decode(self, ids: list[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def build_vocab(corpus: list[str]) -> Vocab:
    if not corpus:
        raise ModelError("cannot build a vocabulary from an empty corpus")
    freq: dict[str, int] = {}
    for line in corpus:
        for token in line.split():
            if token in Vocab.SPECIALS:
                continue
            freq[token] = freq.get(token, 0) + 1
    ordered = sorted(freq, key=lambda t: (-freq[t], t))
    return Vocab(list(Vocab.SPECIALS) + ordered)


@dataclass
class TrainConfig:
    dim: int = 24
    hidden: int = 48
    window: int = 6
    epochs: int = 40
    batch_size: int = 64
    lr: float = 0.35
    lr_decay: float = 0.93
    decay_start: int = 20
    seed: int = 0
    permutations: int = 10
    beam: int = 5
    max_decode_len: int = 48
    list_size: int = 5
    template: str = DEFAULT_PROMPT_TEMPLATE
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if min(self.dim, self.hidden, self.window, self.epochs, self.batch_size) <= 0:
            raise ModelError("model dimensions and epochs must be positive")
        if self.beam < 1:
            raise ModelError("beam must be >= 1")


@dataclass
class ModelParams:
    E: np.ndarray  # V x d token embeddings
    W1: np.ndarray  # (window+1)*d x H
    b1: np.ndarray
    W2: np.ndarray  # H x V
    b2: np.ndarray
    window: int
    template_tokens: tuple[str, ...]
    seed: int
    phase: str = "init"

    @property
    def vocab_size(self) -> int:
        return self.E.shape[0]

    @property
    def dim(self) -> int:
        return self.E.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(
            E=self.E.copy(),
            W1=self.W1.copy(),
            b1=self.b1.copy(),
            W2=self.W2.copy(),
            b2=self.b2.copy(),
            window=self.window,
            template_tokens=self.template_tokens,
            seed=self.seed,
            phase=self.phase,
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {"E": self.E, "W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def init_params(vocab: Vocab, config: TrainConfig) -> ModelParams:
    rng = np.random.default_rng(config.seed)
    V, d, H, h = len(vocab), config.dim, config.hidden, config.window
    dtype = np.dtype(config.dtype)
    scale = 0.1
    return ModelParams(
        E=(rng.normal(0.0, scale, size=(V, d))).astype(dtype),
        W1=(rng.normal(0.0, scale / np.sqrt((h + 1) * d), size=((h + 1) * d, H))).astype(dtype),
        b1=np.zeros(H, dtype=dtype),
        W2=(rng.normal(0.0, scale / np.sqrt(H), size=(H, V))).astype(dtype),
        b2=np.zeros(V, dtype=dtype),
        window=h,
        template_tokens=tuple(config.template.split()),
        seed=config.seed,
    )


def prompt_boundary(ids: list[int], vocab: Vocab, template_tokens: tuple[str, ...]) -> int:
    """Index one past the prompt template; conditioning pools ids[:boundary]."""
    template_ids = [vocab.ids.get(t, vocab.unk) for t in template_tokens]
    tlen = len(template_ids)
    for start in range(1, len(ids) - tlen + 1):
        if ids[start : start + tlen] == template_ids:
            return start + tlen
    return min(len(ids), 1 + tlen)  # malformed line: pool the leading tokens


@dataclass
class EncodedLine:
    ids: np.ndarray  # full token id sequence, starting with [SOS]
    boundary: int  # prompt segment = ids[:boundary]


def encode_corpus(corpus: list[str], vocab: Vocab, template_tokens: tuple[str, ...]) -> list[EncodedLine]:
    lines = []
    for text in corpus:
        ids = vocab.encode(text.split())
        if not ids or ids[0] != vocab.sos:
            raise ModelError(f"corpus line must start with {SOS}: {text[:60]!r}")
        lines.append(EncodedLine(ids=np.array(ids, dtype=np.int64), boundary=prompt_boundary(ids, vocab, template_tokens)))
    return lines


def _cond_segment(prompt_ids: np.ndarray, template_len: int) -> np.ndarray:
    """The concept tokens of the prompt: [SOS] and the trailing template are
    dropped so the pooled vector is not diluted by constant tokens."""
    end = len(prompt_ids) - template_len
    if end > 1:
        return prompt_ids[1:end]
    return prompt_ids


def _conditioning(params: ModelParams, prompt_ids: np.ndarray) -> np.ndarray:
    seg = _cond_segment(np.asarray(prompt_ids), len(params.template_tokens))
    return params.E[seg].mean(axis=0)


def _windows(ids: np.ndarray, window: int) -> np.ndarray:
    """Window of the previous `window` token ids for each position 1..T-1;
    -1 marks padding (embedded as zero)."""
    T = len(ids)
    out = np.full((T - 1, window), -1, dtype=np.int64)
    for t in range(1, T):
        ctx = ids[max(0, t - window) : t]
        out[t - 1, window - len(ctx) :] = ctx
    return out


def _embed_windows(params: ModelParams, windows: np.ndarray) -> np.ndarray:
    V, d = params.E.shape
    E_pad = np.vstack([params.E, np.zeros((1, d), dtype=params.E.dtype)])
    idx = np.where(windows < 0, V, windows)
    return E_pad[idx].reshape(windows.shape[0], -1)


def _forward_hidden(params: ModelParams, X: np.ndarray):
    Z1 = X @ params.W1 + params.b1
    H1 = np.tanh(Z1)
    logits = H1 @ params.W2 + params.b2
    return H1, logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sequence_logprob(params: ModelParams, ids: list[int] | np.ndarray, vocab: Vocab, boundary: int | None = None) -> float:
    """Sum of next-token log probabilities over every position after [SOS]."""
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) < 2:
        return 0.0
    if ids[0] != vocab.sos:
        raise ModelError("sequence must begin with [SOS]")
    if ids.max() >= params.vocab_size or ids.min() < 0:
        raise ModelError("token id outside the vocabulary")
    if boundary is None:
        boundary = prompt_boundary(list(ids), vocab, params.template_tokens)
    cond = _conditioning(params, ids[:boundary])
    windows = _windows(ids, params.window)
    X = np.concatenate([np.tile(cond, (len(windows), 1)), _embed_windows(params, windows)], axis=1)
    _, logits = _forward_hidden(params, X)
    logp = _log_softmax(logits)
    targets = ids[1:]
    return float(logp[np.arange(len(targets)), targets].sum())


class _Batcher:
    """Flattened (line, window, target) views over an encoded corpus."""

    def __init__(self, lines: list[EncodedLine], window: int):
        pos_line, pos_window, pos_target = [], [], []
        self.prompt_ids = [ln.ids[: ln.boundary] for ln in lines]
        for li, ln in enumerate(lines):
            w = _windows(ln.ids, window)
            pos_window.append(w)
            pos_target.append(ln.ids[1:])
            pos_line.extend([li] * (len(ln.ids) - 1))
        self.pos_line = np.array(pos_line, dtype=np.int64)
        self.pos_window = np.concatenate(pos_window, axis=0)
        self.pos_target = np.concatenate(pos_target, axis=0)

    def __len__(self) -> int:
        return len(self.pos_target)


def _loss_and_grads(params: ModelParams, batcher: _Batcher, idx: np.ndarray):
    """Mean negative log-likelihood over the selected positions, with grads."""
    V, d = params.E.shape
    B = len(idx)
    lines = batcher.pos_line[idx]
    windows = batcher.pos_window[idx]
    targets = batcher.pos_target[idx]

    uniq_lines, inverse = np.unique(lines, return_inverse=True)
    conds = np.stack([_conditioning(params, batcher.prompt_ids[li]) for li in uniq_lines])
    cond_batch = conds[inverse]

    emb = _embed_windows(params, windows)
    X = np.concatenate([cond_batch, emb], axis=1)
    H1, logits = _forward_hidden(params, X)
    logp = _log_softmax(logits)
    loss = -float(logp[np.arange(B), targets].mean())
    if not np.isfinite(loss):
        raise ModelError("training diverged: non-finite loss")

    probs = np.exp(logp)
    dlogits = probs
    dlogits[np.arange(B), targets] -= 1.0
    dlogits /= B

    gW2 = H1.T @ dlogits
    gb2 = dlogits.sum(axis=0)
    dH1 = dlogits @ params.W2.T
    dZ1 = dH1 * (1.0 - H1 * H1)
    gW1 = X.T @ dZ1
    gb1 = dZ1.sum(axis=0)
    dX = dZ1 @ params.W1.T

    gE = np.zeros_like(params.E)
    dcond = dX[:, :d]
    demb = dX[:, d:].reshape(B, params.window, d)
    flat_idx = windows.reshape(-1)
    keep = flat_idx >= 0
    np.add.at(gE, flat_idx[keep], demb.reshape(-1, d)[keep])
    # conditioning gradient: mean pooling spreads dcond over the prompt tokens
    dcond_by_line = np.zeros((len(uniq_lines), d), dtype=params.E.dtype)
    np.add.at(dcond_by_line, inverse, dcond)
    template_len = len(params.template_tokens)
    for k, li in enumerate(uniq_lines):
        pids = _cond_segment(batcher.prompt_ids[li], template_len)
        np.add.at(gE, pids, np.tile(dcond_by_line[k] / len(pids), (len(pids), 1)))
    return loss, {"E": gE, "W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}


def loss_and_grads_for_lines(params: ModelParams, lines: list[EncodedLine]):
    """Full-corpus loss and gradients; used by the finite-difference check."""
    batcher = _Batcher(lines, params.window)
    return _loss_and_grads(params, batcher, np.arange(len(batcher)))


def train_phase(
    params: ModelParams,
    corpus: list[str],
    vocab: Vocab,
    config: TrainConfig,
    dev_eval=None,
    phase_tag: str = "ordered",
) -> ModelParams:
    """Minibatch SGD over the corpus; if dev_eval is given, returns the epoch
    checkpoint with the best validation score (Appendix-style selection)."""
    if not corpus:
        raise ModelError("empty training corpus")
    lines = encode_corpus(corpus, vocab, params.template_tokens)
    batcher = _Batcher(lines, params.window)
    rng = np.random.default_rng(config.seed + 1)
    n = len(batcher)
    best_score = -np.inf
    best_params = None
    for epoch in range(config.epochs):
        lr = config.lr * (config.lr_decay ** max(0, epoch - config.decay_start))
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            _, grads = _loss_and_grads(params, batcher, idx)
            for name, arr in params.arrays().items():
                arr -= lr * grads[name]
        if dev_eval is not None:
            score = dev_eval(params)
            if score > best_score:
                best_score = score
                best_params = params.copy()
    result = best_params if best_params is not None else params
    result.phase = phase_tag
    return result


# --- decoding ---

@dataclass
class BeamResult:
    ids: list[int]
    logprob: float
    truncated: bool


def beam_decode(
    params: ModelParams,
    prompt_ids: list[int],
    vocab: Vocab,
    beam: int = 5,
    max_len: int = 48,
    boundary: int | None = None,
) -> BeamResult:
    """Beam search with early stopping; [UNK] and [SOS] are never emitted.

    Ties break on token id, so decoding is fully deterministic.
    """
    if beam < 1:
        raise ModelError("beam must be >= 1")
    if boundary is None:
        boundary = prompt_boundary(list(prompt_ids), vocab, params.template_tokens)
    cond = _conditioning(params, np.asarray(prompt_ids[:boundary], dtype=np.int64))
    masked = (vocab.sos, vocab.unk)

    live: list[tuple[float, list[int]]] = [(0.0, list(prompt_ids))]
    completed: list[tuple[float, list[int]]] = []
    h = params.window
    V = params.vocab_size
    steps = 0
    while live and steps < max_len:
        steps += 1
        windows = np.full((len(live), h), -1, dtype=np.int64)
        for i, (_, ids) in enumerate(live):
            ctx = ids[-h:]
            windows[i, h - len(ctx) :] = ctx
        X = np.concatenate(
            [np.tile(cond, (len(live), 1)), _embed_windows(params, windows)], axis=1
        )
        _, logits = _forward_hidden(params, X)
        logp = _log_softmax(logits)
        candidates: list[tuple[float, int, int]] = []  # (score, token, hyp)
        for i, (score, _) in enumerate(live):
            row = logp[i]
            top = np.argsort(-row, kind="stable")[: beam + len(masked)]
            for token in top:
                token = int(token)
                if token in masked:
                    continue
                candidates.append((score + float(row[token]), token, i))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        next_live = []
        for score, token, i in candidates:
            if len(next_live) >= beam:
                break
            ids = live[i][1] + [token]
            if token == vocab.eos:
                completed.append((score, ids))
            else:
                next_live.append((score, ids))
        live = next_live
        if completed:
            best_complete = max(c[0] for c in completed)
            if not live or max(s for s, _ in live) <= best_complete:
                live = []
                break
    if completed:
        completed.sort(key=lambda c: (-c[0], c[1]))
        score, ids = completed[0]
        return BeamResult(ids=ids, logprob=score, truncated=False)
    live.sort(key=lambda c: (-c[0], c[1]))
    score, ids = live[0]
    return BeamResult(ids=ids, logprob=score, truncated=True)


def generate_list(
    params: ModelParams,
    vocab: Vocab,
    x: Concept,
    concept_set: ConceptSet,
    given_prefix: list[Concept] | None = None,
    expect_explanations: bool = False,
    beam: int = 5,
    max_len: int = 48,
    template: str | None = None,
    case_insensitive: bool = False,
    source: str = "listlm",
    single_target: bool = False,
) -> PredictionRecord:
    """Prefix prompt -> beam decode -> grammar decode, never raises on output."""
    given_prefix = given_prefix or []
    template = template or " ".join(params.template_tokens)
    prompt = build_prefix_prompt(x, given_prefix, template)
    prompt_tokens = prompt.text.split()
    prompt_ids = vocab.encode(prompt_tokens)
    result = beam_decode(params, prompt_ids, vocab, beam=beam, max_len=max_len)
    continuation = vocab.decode(result.ids[len(prompt_ids) :])
    text = prompt.text + (" " + " ".join(continuation) if continuation else "")
    if single_target:
        surface = " ".join(t for t in continuation if t != EOS).strip()
        concept = concept_set.lookup(surface, case_insensitive) if surface else None
        slots = [Slot(position=1, concept=concept, raw=surface)] if surface else []
        return PredictionRecord(
            input=x, slots=slots, raw_text=text, source=source, truncated=result.truncated
        )
    return decode_list(
        text,
        concept_set,
        expect_explanations=expect_explanations,
        known_input=x,
        template=template,
        case_insensitive=case_insensitive,
        source=source,
        truncated=result.truncated,
        given_positions=len(given_prefix),
    )


# --- corpora and two-step training ---

def build_ordered_corpus(dataset: Dataset, split: str = "train", list_size: int | None = None, template: str = DEFAULT_PROMPT_TEMPLATE) -> list[str]:
    size = list_size or dataset.target_size
    return [
        encode_ordered(r.input, r.target_concepts(size), template).text
        for r in dataset.split_lists(split)
    ]


def build_permuted_corpus(
    dataset: Dataset,
    split: str = "train",
    n: int = 10,
    seed: int = 0,
    list_size: int | None = None,
    template: str = DEFAULT_PROMPT_TEMPLATE,
) -> list[str]:
    corpus = []
    for r in dataset.split_lists(split):
        batch = sample_permutations(r, n=n, seed=seed * 100003 + r.input.id, list_size=list_size or dataset.target_size, template=template)
        corpus.extend(e.text for e in batch.permutations)
    return corpus


def build_single_target_corpus(dataset: Dataset, split: str = "train", list_size: int | None = None, template: str = DEFAULT_PROMPT_TEMPLATE) -> list[str]:
    """The list-generation ablation: one 'x {template} y_i' line per target."""
    size = list_size or dataset.target_size
    corpus = []
    for r in dataset.split_lists(split):
        for y in r.target_concepts(size):
            corpus.append(f"{SOS} {r.input.surface} {template} {y.surface} {EOS}")
    return corpus


@dataclass
class TrainedModel:
    params: ModelParams
    vocab: Vocab
    config: TrainConfig
    expect_explanations: bool = False


def make_dev_ndcg_eval(dataset: Dataset, vocab: Vocab, config: TrainConfig, expect_explanations: bool = False):
    """Score a parameter snapshot by dev-set nDCG_5 with beam decoding."""
    truth = GroundTruth.from_dataset(dataset)
    dev_ids = dataset.splits["dev"]

    def evaluate(params: ModelParams) -> float:
        records = [
            generate_list(
                params,
                vocab,
                dataset.concept_set.by_id(x),
                dataset.concept_set,
                expect_explanations=expect_explanations,
                beam=config.beam,
                max_len=config.max_decode_len,
            )
            for x in dev_ids
        ]
        return ndcg(records, truth, m=config.list_size)

    return evaluate


def train_two_step(
    dataset: Dataset,
    config: TrainConfig,
    with_explanations: bool = False,
    teacher=None,
    unordered: bool = True,
    select_by_dev: bool = True,
) -> tuple[TrainedModel, TrainedModel | None]:
    """Unordered (permutation) phase then ordered phase.

    Returns (final model, after-unordered checkpoint or None). Set
    unordered=False for the ordered-only ablation.
    """
    ordered_corpus: list[str]
    if with_explanations:
        if teacher is None:
            raise ModelError("with_explanations requires a teacher callable")
        ordered_corpus = [e.text for e in teacher(dataset, "train")]
    else:
        ordered_corpus = build_ordered_corpus(dataset, "train", config.list_size, config.template)
    permuted_corpus = (
        build_permuted_corpus(dataset, "train", config.permutations, config.seed, config.list_size, config.template)
        if unordered
        else []
    )
    vocab = build_vocab(ordered_corpus + permuted_corpus)
    params = init_params(vocab, config)
    dev_eval = (
        make_dev_ndcg_eval(dataset, vocab, config, expect_explanations=with_explanations)
        if select_by_dev
        else None
    )
    unordered_model = None
    if unordered:
        params = train_phase(params, permuted_corpus, vocab, config, dev_eval=dev_eval, phase_tag="unordered")
        unordered_model = TrainedModel(params=params.copy(), vocab=vocab, config=config, expect_explanations=with_explanations)
        params = params.copy()
    params = train_phase(params, ordered_corpus, vocab, config, dev_eval=dev_eval, phase_tag="ordered")
    return (
        TrainedModel(params=params, vocab=vocab, config=config, expect_explanations=with_explanations),
        unordered_model,
    )


def ablation_single_target(dataset: Dataset, config: TrainConfig, select_by_dev: bool = False) -> TrainedModel:
    """The 'one concept per line' variant; evaluated at position 1 only."""
    corpus = build_single_target_corpus(dataset, "train", config.list_size, config.template)
    vocab = build_vocab(corpus)
    params = init_params(vocab, config)
    dev_eval = None
    if select_by_dev:
        truth = GroundTruth.from_dataset(dataset)
        dev_ids = dataset.splits["dev"]

        def evaluate(p: ModelParams) -> float:
            from .metrics import acc_at_k

            records = [
                generate_list(p, vocab, dataset.concept_set.by_id(x), dataset.concept_set, beam=config.beam, max_len=config.max_decode_len, single_target=True, source="no-lg")
                for x in dev_ids
            ]
            return acc_at_k(records, truth, 1)

        dev_eval = evaluate
    params = train_phase(params, corpus, vocab, config, dev_eval=dev_eval, phase_tag="single-target")
    return TrainedModel(params=params, vocab=vocab, config=config)


# --- checkpoints ---

def save_checkpoint(model: TrainedModel, path, header: dict | None = None) -> None:
    meta = {
        "schema": CHECKPOINT_SCHEMA,
        **(header or {}),
        "vocab": model.vocab.tokens,
        "dim": model.params.dim,
        "hidden": model.params.W1.shape[1],
        "window": model.params.window,
        "seed": model.params.seed,
        "phase": model.params.phase,
        "template": " ".join(model.params.template_tokens),
        "expect_explanations": model.expect_explanations,
        "config": {
            "dim": model.config.dim,
            "hidden": model.config.hidden,
            "window": model.config.window,
            "beam": model.config.beam,
            "max_decode_len": model.config.max_decode_len,
            "list_size": model.config.list_size,
            "seed": model.config.seed,
        },
    }
    np.savez(
        path,
        meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8),
        **model.params.arrays(),
    )


def load_checkpoint(path) -> TrainedModel:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("schema") != CHECKPOINT_SCHEMA:
            raise ModelError(f"{path}: unexpected checkpoint schema")
        vocab = Vocab(meta["vocab"])
        params = ModelParams(
            E=data["E"],
            W1=data["W1"],
            b1=data["b1"],
            W2=data["W2"],
            b2=data["b2"],
            window=meta["window"],
            template_tokens=tuple(meta["template"].split()),
            seed=meta["seed"],
            phase=meta["phase"],
        )
    cfg = meta["config"]
    config = TrainConfig(
        dim=cfg["dim"],
        hidden=cfg["hidden"],
        window=cfg["window"],
        beam=cfg["beam"],
        max_decode_len=cfg["max_decode_len"],
        list_size=cfg["list_size"],
        seed=cfg["seed"],
    )
    return TrainedModel(params=params, vocab=vocab, config=config, expect_explanations=meta.get("expect_explanations", False))
