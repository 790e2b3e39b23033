"""Experiment specs, dataset assembly, and the three training regimes.

Single-domain training optimises the predictor jointly with whichever
embedding side the spec selects: the code lookup table, the text encoder,
or (cache-finetune) the frozen-encoder output cache. Transfer re-uses the
predictor across hospitals; the text route also re-uses the text encoder,
while the code route must re-initialise its lookup table because code
namespaces do not transfer. Pooling trains one model on the union of two
hospitals' training splits and reports per-hospital test metrics.
"""

import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .encoders import (BiRnnTextEncoder, CodeEmbeddingTable, CodeVocabulary,
                       TransformerTextEncoder, ValueMLP, pad_batch, precompute_cls_cache,
                       pretrain_code_skipgram)
from .errors import ConfigurationError, IntegrityError, NumericError
from .metrics import auprc, auprc_multilabel
from .optim import AdamState, adam_step, clone_params, zero_grads
from .predictor import SequencePredictor
from .rng import derive_seed, purpose_rng
from .tasks import N_DX_CATEGORIES, TaskKind
from .tensor import Tensor
from .textproc import (MAX_DESC_TOKENS, TokenizedDescription, ValueStrategy, Vocabulary,
                       build_vocab, encode_code_identity, tokenize)


class EncoderKind(str, Enum):
    CODEEMB_RD = "codeemb_rd"
    CODEEMB_W2V = "codeemb_w2v"
    DESC_BIRNN = "desc_birnn"
    DESC_TRANSFORMER = "desc_transformer"
    DESC_CLS_FT = "desc_cls_ft"


CODE_KINDS = (EncoderKind.CODEEMB_RD, EncoderKind.CODEEMB_W2V)
DESC_KINDS = (EncoderKind.DESC_BIRNN, EncoderKind.DESC_TRANSFORMER)


class Regime(str, Enum):
    SINGLE = "single"
    TRANSFER = "transfer"
    POOLED = "pooled"


@dataclass(frozen=True)
class Hyper:
    dropout: float = 0.3
    embed_dim: int = 128
    hidden_dim: int = 256
    value_dim: int = 16
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 10
    w2v_steps: int = 1500
    w2v_window: int = 5
    w2v_negatives: int = 5


DEFAULT_FEW_SHOT_RATIOS = (0.0, 0.01, 0.1, 0.5, 1.0)


@dataclass(frozen=True)
class ExperimentSpec:
    task: TaskKind
    encoder: EncoderKind
    strategy: ValueStrategy
    regime: Regime = Regime.SINGLE
    few_shot_ratios: tuple = DEFAULT_FEW_SHOT_RATIOS
    hyper: Hyper = field(default_factory=Hyper)
    seed: int = 0

    def __post_init__(self):
        if self.strategy is ValueStrategy.DSVA_DPE and self.encoder not in DESC_KINDS:
            raise ConfigurationError(
                f"strategy dsva_dpe requires a neural text encoder, not {self.encoder.value}")
        if any(not 0.0 <= r <= 1.0 for r in self.few_shot_ratios):
            raise ConfigurationError("few-shot ratios must lie in [0, 1]")

    @property
    def n_outputs(self) -> int:
        return N_DX_CATEGORIES if self.task is TaskKind.DIAGNOSIS else 1


# ------------------------------------------------------------- data assembly

@dataclass
class StayData:
    stay_ids: list
    labels: np.ndarray            # (n,) or (n, 18) float
    n_outputs: int
    unique_descs: list            # value-free TokenizedDescription per unique text
    stay_desc_rows: list          # per stay: np indices into unique_descs
    stay_values: list             # per stay: list of float|None
    stay_keys: list               # per stay: list of code-key strings
    stay_texts: list              # per stay: list of description strings
    key_tok: dict                 # code-key -> TokenizedDescription

    def __len__(self):
        return len(self.stay_ids)


def corpus_of(stays) -> list:
    return [event[1] for stay in stays for event in stay.events]


def prepare_stay_data(stays, vocab: Vocabulary, strategy: ValueStrategy,
                      task: TaskKind, hospital_tags=None) -> StayData:
    """Tokenize and key every event once; deduplicates identical token streams."""
    n = len(stays)
    if task is TaskKind.DIAGNOSIS:
        labels = np.zeros((n, N_DX_CATEGORIES), dtype=np.float64)
        for i, stay in enumerate(stays):
            for cat in stay.labels[task]:
                labels[i, cat] = 1.0
    else:
        labels = np.array([float(stay.labels[task]) for stay in stays])

    unique_index: dict = {}
    unique_descs: list = []
    stay_desc_rows, stay_values, stay_keys, stay_texts = [], [], [], []
    key_tok: dict = {}
    for i, stay in enumerate(stays):
        rows, values, keys, texts = [], [], [], []
        tag = hospital_tags[i] if hospital_tags is not None else None
        for code, description, value, unit, _ts in stay.events:
            tok = tokenize(description, value, unit, strategy, vocab)
            text_sig = (tok.token_ids, tok.place_ids)
            row = unique_index.get(text_sig)
            if row is None:
                row = len(unique_descs)
                unique_index[text_sig] = row
                unique_descs.append(TokenizedDescription(
                    token_ids=tok.token_ids, place_ids=tok.place_ids,
                    value_scalar=None, truncated=tok.truncated))
            rows.append(row)
            values.append(tok.value_scalar)
            key = encode_code_identity(code, value, strategy)
            if tag is not None:
                key = f"{tag}::{key}"
            keys.append(key)
            key_tok.setdefault(key, unique_descs[row])
            texts.append(description)
        stay_desc_rows.append(np.array(rows, dtype=np.int64))
        stay_values.append(values)
        stay_keys.append(keys)
        stay_texts.append(texts)
    return StayData(stay_ids=[s.stay_id for s in stays], labels=labels,
                    n_outputs=N_DX_CATEGORIES if task is TaskKind.DIAGNOSIS else 1,
                    unique_descs=unique_descs, stay_desc_rows=stay_desc_rows,
                    stay_values=stay_values, stay_keys=stay_keys, stay_texts=stay_texts,
                    key_tok=key_tok)


@dataclass(frozen=True)
class Split:
    train: tuple
    valid: tuple
    test: tuple


def make_split(data: StayData, seed: int, ratios=(0.8, 0.1, 0.1)) -> Split:
    """Stratified 8:1:1 split; binary strata by label, diagnosis by set size."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must sum to 1, got {ratios}")
    if data.labels.ndim == 1:
        strata_key = data.labels.astype(int)
    else:
        strata_key = np.minimum(data.labels.sum(axis=1).astype(int), 3)
    rng = purpose_rng(seed, "split")
    train, valid, test = [], [], []
    for value in np.unique(strata_key):
        idx = np.flatnonzero(strata_key == value)
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(ratios[0] * len(idx)))
        n_valid = int(round(ratios[1] * len(idx)))
        train.extend(idx[:n_train])
        valid.extend(idx[n_train:n_train + n_valid])
        test.extend(idx[n_train + n_valid:])
    return Split(train=tuple(sorted(train)), valid=tuple(sorted(valid)),
                 test=tuple(sorted(test)))


# ------------------------------------------------------------- model bundles

class RngBank:
    """Lazily-created purpose streams under one seed."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict = {}

    def get(self, tag: str):
        if tag not in self._streams:
            self._streams[tag] = purpose_rng(self.seed, tag)
        return self._streams[tag]


def _flat_values(data: StayData, batch_ids) -> list:
    out = []
    for i in batch_ids:
        out.extend(data.stay_values[i])
    return out


def _stay_rows(data: StayData, batch_ids) -> list:
    rows, start = [], 0
    for i in batch_ids:
        t = len(data.stay_desc_rows[i])
        rows.append(np.arange(start, start + t, dtype=np.int64))
        start += t
    return rows


class CodeEmbModel:
    """Per-hospital lookup table route (optionally with the value channel)."""

    uses_text = False

    def __init__(self, code_vocab: CodeVocabulary, strategy: ValueStrategy, hyper: Hyper,
                 seed: int, init_table: np.ndarray | None = None, dtype=np.float32):
        self.strategy = strategy
        self.table = CodeEmbeddingTable(code_vocab, hyper.embed_dim, seed,
                                        init=init_table, dtype=dtype)
        self.value_mlp = (ValueMLP(hyper.value_dim, seed=seed, dtype=dtype)
                          if strategy is ValueStrategy.VC else None)
        self.output_dim = hyper.embed_dim + (hyper.value_dim if self.value_mlp else 0)

    def named_trainable(self) -> dict:
        out = {"emb.code_table": self.table.params["code_table"]}
        if self.value_mlp:
            out.update({f"emb.{k}": v for k, v in self.value_mlp.params.items()})
        return out

    def named_all(self) -> dict:
        return self.named_trainable()

    def encode_batch(self, data: StayData, batch_ids, train_flag, rngs):
        keys = [k for i in batch_ids for k in data.stay_keys[i]]
        z = self.table.embed_ids(self.table.vocab.ids_of(keys))
        if self.value_mlp:
            z = T.concat([z, self.value_mlp.forward(_flat_values(data, batch_ids))], axis=1)
        return z, _stay_rows(data, batch_ids)


class DescEmbModel:
    """Shared text-encoder route; unique descriptions are encoded once per batch."""

    uses_text = True

    def __init__(self, encoder, strategy: ValueStrategy, hyper: Hyper, seed: int,
                 dtype=np.float32):
        self.strategy = strategy
        self.encoder = encoder
        self.value_mlp = (ValueMLP(hyper.value_dim, seed=seed, dtype=dtype)
                          if strategy is ValueStrategy.VC else None)
        self.output_dim = encoder.output_dim + (hyper.value_dim if self.value_mlp else 0)

    def named_trainable(self) -> dict:
        out = {f"txt.{k}": v for k, v in self.encoder.params.items()}
        if self.value_mlp:
            out.update({f"emb.{k}": v for k, v in self.value_mlp.params.items()})
        return out

    def named_all(self) -> dict:
        return self.named_trainable()

    def encode_batch(self, data: StayData, batch_ids, train_flag, rngs):
        all_rows = np.concatenate([data.stay_desc_rows[i] for i in batch_ids])
        uniq, inverse = np.unique(all_rows, return_inverse=True)
        ids, places, mask = pad_batch([data.unique_descs[int(u)] for u in uniq])
        z_unique = self.encoder.encode(ids, places, mask, train_flag=train_flag, rngs=rngs)
        z = T.embedding_lookup(z_unique, inverse)
        if self.value_mlp:
            z = T.concat([z, self.value_mlp.forward(_flat_values(data, batch_ids))], axis=1)
        return z, _stay_rows(data, batch_ids)


class ClsFtModel:
    """Cache-finetune: frozen text encoder, trainable per-code output cache."""

    uses_text = True

    def __init__(self, text_encoder, data: StayData, strategy: ValueStrategy,
                 hyper: Hyper, seed: int, dtype=np.float32):
        vocab, cache = precompute_cls_cache(text_encoder, data.key_tok)
        self.strategy = strategy
        self.text_encoder = text_encoder  # frozen; kept for manifests/digests
        self.table = CodeEmbeddingTable(vocab, text_encoder.output_dim, seed,
                                        init=cache, dtype=dtype)
        self.value_mlp = (ValueMLP(hyper.value_dim, seed=seed, dtype=dtype)
                          if strategy is ValueStrategy.VC else None)
        self.output_dim = text_encoder.output_dim + (hyper.value_dim if self.value_mlp else 0)

    def named_trainable(self) -> dict:
        out = {"emb.cls_cache": self.table.params["code_table"]}
        if self.value_mlp:
            out.update({f"emb.{k}": v for k, v in self.value_mlp.params.items()})
        return out

    def named_all(self) -> dict:
        out = self.named_trainable()
        out.update({f"txt.{k}": v for k, v in self.text_encoder.params.items()})
        return out

    def encode_batch(self, data: StayData, batch_ids, train_flag, rngs):
        keys = [k for i in batch_ids for k in data.stay_keys[i]]
        z = self.table.embed_ids(self.table.vocab.ids_of(keys))
        if self.value_mlp:
            z = T.concat([z, self.value_mlp.forward(_flat_values(data, batch_ids))], axis=1)
        return z, _stay_rows(data, batch_ids)


def build_text_encoder(kind: EncoderKind, vocab_size: int, hyper: Hyper, seed: int,
                       dtype=np.float32):
    if kind is EncoderKind.DESC_BIRNN:
        if hyper.embed_dim % 2:
            raise ConfigurationError("embed_dim must be even for the bidirectional encoder")
        return BiRnnTextEncoder(vocab_size, embed_dim=hyper.embed_dim,
                                hidden_dim=hyper.embed_dim // 2, seed=seed, dtype=dtype)
    if kind is EncoderKind.DESC_TRANSFORMER:
        return TransformerTextEncoder(vocab_size, embed_dim=hyper.embed_dim,
                                      n_layers=2, n_heads=2, max_len=MAX_DESC_TOKENS,
                                      dropout_p=hyper.dropout, seed=seed, dtype=dtype)
    raise ConfigurationError(f"no text encoder for {kind.value}")


def _code_vocab_from(data: StayData, ids) -> CodeVocabulary:
    return CodeVocabulary([k for i in ids for k in data.stay_keys[i]])


def build_model(spec: ExperimentSpec, data: StayData, train_ids, vocab: Vocabulary,
                init_encoder=None, dtype=np.float32):
    """Instantiate the embedding side for a run.

    ``init_encoder`` supplies a pretrained text encoder (masked-token
    pretraining for the text kinds, required for cache-finetune).
    """
    hyper = spec.hyper
    if spec.encoder in CODE_KINDS:
        code_vocab = _code_vocab_from(data, train_ids)
        init_table = None
        if spec.encoder is EncoderKind.CODEEMB_W2V:
            sequences = [data.stay_keys[i] for i in train_ids]
            init_table = pretrain_code_skipgram(
                sequences, code_vocab, hyper.embed_dim, window=hyper.w2v_window,
                negatives=hyper.w2v_negatives, steps=hyper.w2v_steps,
                seed=derive_seed(spec.seed, "w2v"))
        return CodeEmbModel(code_vocab, spec.strategy, hyper, spec.seed,
                            init_table=init_table, dtype=dtype)
    if spec.encoder in DESC_KINDS:
        encoder = init_encoder if init_encoder is not None else build_text_encoder(
            spec.encoder, len(vocab), hyper, spec.seed, dtype=dtype)
        return DescEmbModel(encoder, spec.strategy, hyper, spec.seed, dtype=dtype)
    if spec.encoder is EncoderKind.DESC_CLS_FT:
        if init_encoder is None:
            raise ConfigurationError(
                "cache-finetune requires a pretrained text encoder (--init checkpoint)")
        return ClsFtModel(init_encoder, data, spec.strategy, hyper, spec.seed, dtype=dtype)
    raise ConfigurationError(f"unknown encoder kind {spec.encoder}")


# ------------------------------------------------------------------ training

@dataclass
class FitResult:
    history: list
    best_epoch: int
    best_valid: float
    test_auprc: float | None = None


def _task_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    targets = Tensor(labels, dtype=logits.dtype)
    if labels.ndim == 2:
        return T.multilabel_bce(logits, targets)
    return T.bce_with_logits(logits, targets)


def _batch_auprc(scores: np.ndarray, labels: np.ndarray):
    try:
        if labels.ndim == 2:
            return auprc_multilabel(scores, labels)
        return auprc(scores, labels)
    except Exception:
        return None


def predict_scores(model, predictor, data: StayData, ids, batch_size: int = 64):
    """Probabilities plus mean loss over ``ids``, without building a tape."""
    if len(ids) == 0:
        empty = np.zeros((0, data.n_outputs)) if data.labels.ndim == 2 else np.zeros(0)
        return empty, float("nan")
    scores, losses = [], []
    with T.no_grad():
        for start in range(0, len(ids), batch_size):
            batch = list(ids[start:start + batch_size])
            flat, rows = model.encode_batch(data, batch, False, None)
            logits, _ = predictor.forward(flat, rows, train_flag=False)
            losses.append(_task_loss(logits, data.labels[batch]).item())
            scores.append(1.0 / (1.0 + np.exp(-logits.data.astype(np.float64))))
    return np.concatenate(scores), float(np.mean(losses))


def fit(model, predictor, data: StayData, train_ids, valid_ids, hyper: Hyper,
        seed: int, run_tag: str = "fit", lr: float | None = None,
        max_epochs: int | None = None, stop_at_train: float | None = None) -> FitResult:
    """Shared training loop: minibatch Adam with early stopping on valid AUPRC."""
    train_ids = list(train_ids)
    valid_ids = list(valid_ids)
    if not train_ids:
        raise ConfigurationError("empty train split")
    lr = hyper.lr if lr is None else lr
    epochs = hyper.max_epochs if max_epochs is None else max_epochs
    bank = RngBank(derive_seed(seed, run_tag))
    shuffle_rng = bank.get("shuffle")

    trainable = {f"pred.{k}": v for k, v in predictor.params.items()}
    trainable.update(model.named_trainable())
    state = AdamState()
    history = []
    best_valid, best_epoch = -1.0, 0
    best_snapshot = clone_params(trainable)
    stale = 0

    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(train_ids))
        epoch_losses, seen_scores, seen_labels = [], [], []
        for start in range(0, len(order), hyper.batch_size):
            batch = [train_ids[i] for i in order[start:start + hyper.batch_size]]
            flat, rows = model.encode_batch(data, batch, True, bank)
            logits, _ = predictor.forward(flat, rows, train_flag=True, rngs=bank)
            loss = _task_loss(logits, data.labels[batch])
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} (batch starting {start}); aborting")
            zero_grads(trainable)
            T.backward(loss)
            adam_step(trainable, state, lr=lr)
            epoch_losses.append(loss.item())
            seen_scores.append(logits.data.astype(np.float64).copy())
            seen_labels.append(data.labels[batch])

        train_auprc = _batch_auprc(np.concatenate(seen_scores), np.concatenate(seen_labels))
        history.append({"epoch": epoch, "split": "train",
                        "loss": float(np.mean(epoch_losses)), "auprc": train_auprc})
        if valid_ids:
            valid_scores, valid_loss = predict_scores(model, predictor, data, valid_ids)
            valid_auprc = _batch_auprc(valid_scores, data.labels[valid_ids])
            history.append({"epoch": epoch, "split": "valid",
                            "loss": valid_loss, "auprc": valid_auprc})
            if valid_auprc is not None and valid_auprc > best_valid:
                best_valid, best_epoch = valid_auprc, epoch
                best_snapshot = clone_params(trainable)
                stale = 0
            else:
                stale += 1
                if stale > hyper.patience:
                    break
        else:
            best_valid, best_epoch = train_auprc or -1.0, epoch
            best_snapshot = clone_params(trainable)
        if stop_at_train is not None and train_auprc is not None \
                and train_auprc >= stop_at_train:
            break

    for name, snap in best_snapshot.items():
        trainable[name].data[...] = snap
    return FitResult(history=history, best_epoch=best_epoch, best_valid=best_valid)


@dataclass
class TrainResult:
    spec: ExperimentSpec
    model: object
    predictor: SequencePredictor
    vocab: Vocabulary
    split: Split
    fit: FitResult
    test_auprc: float


def train(spec: ExperimentSpec, data: StayData, vocab: Vocabulary,
          init_encoder=None, split: Split | None = None) -> TrainResult:
    """Single-domain regime: build, fit, evaluate on the held-out test split."""
    split = split or make_split(data, spec.seed)
    model = build_model(spec, data, split.train, vocab, init_encoder=init_encoder)
    predictor = SequencePredictor(model.output_dim, spec.hyper.hidden_dim,
                                  n_outputs=spec.n_outputs, dropout_p=spec.hyper.dropout,
                                  seed=spec.seed)
    result = fit(model, predictor, data, split.train, split.valid, spec.hyper, spec.seed)
    scores, _ = predict_scores(model, predictor, data, list(split.test))
    test = _batch_auprc(scores, data.labels[list(split.test)])
    return TrainResult(spec=spec, model=model, predictor=predictor, vocab=vocab,
                       split=split, fit=result, test_auprc=test)


def forward_patient(model, predictor, data: StayData, stay_index: int) -> np.ndarray:
    """Predicted probabilities for one stay (length 1 or 18)."""
    with T.no_grad():
        flat, rows = model.encode_batch(data, [stay_index], False, None)
        logits, _ = predictor.forward(flat, rows, train_flag=False)
    return 1.0 / (1.0 + np.exp(-np.atleast_1d(logits.data.astype(np.float64))))


# ------------------------------------------------------------------ transfer

@dataclass
class TransferPoint:
    ratio: float
    auprc: float
    reinitialized_params: int
    history: list


def transfer(spec: ExperimentSpec, source: TrainResult, target_data: StayData,
             ratios=None, fresh_start: bool = False) -> list:
    """Evaluate/fine-tune a source-trained model on a target hospital.

    The text route re-uses the text encoder and predictor wholesale; the
    code route re-uses only the predictor and re-initialises a lookup
    table for the target code vocabulary. ``ratios`` follow the spec's
    nested few-shot grid; ratio 0 evaluates without any fine-tuning.
    ``fresh_start`` re-initialises everything (the r=1 reduction to
    single-domain training).
    """
    if source.spec.strategy is not spec.strategy:
        raise ConfigurationError(
            f"strategy mismatch: source {source.spec.strategy.value}, "
            f"spec {spec.strategy.value}")
    if source.spec.task is not spec.task:
        raise ConfigurationError("task mismatch between source checkpoint and spec")
    ratios = list(spec.few_shot_ratios if ratios is None else ratios)
    hyper = spec.hyper
    split = make_split(target_data, spec.seed)
    nested = purpose_rng(spec.seed, "fewshot").permutation(len(split.train))
    points = []
    for ratio in ratios:
        model, predictor, reinit = _transfer_model(spec, source, target_data, split,
                                                   fresh_start)
        history = []
        if ratio > 0:
            take = max(1, math.ceil(ratio * len(split.train)))
            subset = [split.train[i] for i in nested[:take]]
            result = fit(model, predictor, target_data, subset, split.valid, hyper,
                         spec.seed, run_tag=f"transfer-r{ratio}")
            history = result.history
        scores, _ = predict_scores(model, predictor, target_data, list(split.test))
        score = _batch_auprc(scores, target_data.labels[list(split.test)])
        points.append(TransferPoint(ratio=ratio, auprc=score,
                                    reinitialized_params=reinit, history=history))
    return points


def _transfer_model(spec, source, target_data, split, fresh_start):
    hyper = spec.hyper
    if fresh_start:
        model = build_model(spec, target_data, split.train, source.vocab)
        predictor = SequencePredictor(model.output_dim, hyper.hidden_dim,
                                      n_outputs=spec.n_outputs, dropout_p=hyper.dropout,
                                      seed=spec.seed)
        reinit = sum(p.data.size for p in model.named_trainable().values())
        reinit += sum(p.data.size for p in predictor.params.values())
        return model, predictor, int(reinit)

    predictor = SequencePredictor(source.model.output_dim, hyper.hidden_dim,
                                  n_outputs=spec.n_outputs, dropout_p=hyper.dropout,
                                  seed=spec.seed)
    for name, p in predictor.params.items():
        p.data[...] = source.predictor.params[name].data
    if spec.encoder in CODE_KINDS:
        # the code namespace is hospital-local: a fresh table is unavoidable
        code_vocab = _code_vocab_from(target_data, split.train)
        model = CodeEmbModel(code_vocab, spec.strategy, hyper,
                             derive_seed(spec.seed, "transfer-reinit"))
        reinit = sum(p.data.size for p in model.named_trainable().values())
        return model, predictor, int(reinit)
    # text route: encoder (and value channel) transfer unchanged
    model = build_model(spec, target_data, split.train, source.vocab)
    for name, p in model.named_trainable().items():
        p.data[...] = source.model.named_trainable()[name].data
    return model, predictor, 0


# -------------------------------------------------------------------- pooled

@dataclass
class PoolResult:
    vocab: Vocabulary
    model: object
    predictor: SequencePredictor
    fit: FitResult
    per_hospital_auprc: dict
    desc_vocab_size: int
    code_vocab_size: int | None


def pool(spec: ExperimentSpec, stays_a, stays_b, tags=("hosp_a", "hosp_b"),
         init_encoder=None) -> PoolResult:
    """Train once on the union of two hospitals; evaluate per hospital.

    The text route needs no alignment work: both hospitals tokenize into
    one shared vocabulary. The code route namespaces keys per hospital,
    making the union vocabulary the disjoint sum of the two code sets.
    """
    ids_a = {s.stay_id for s in stays_a}
    overlap = ids_a.intersection(s.stay_id for s in stays_b)
    if overlap:
        raise IntegrityError(f"stay ids overlap across hospitals: {sorted(overlap)[:5]}")

    vocab = build_vocab(corpus_of(stays_a) + corpus_of(stays_b))
    stays = list(stays_a) + list(stays_b)
    hospital_tags = ([tags[0]] * len(stays_a) + [tags[1]] * len(stays_b)) \
        if spec.encoder in CODE_KINDS else None
    data = prepare_stay_data(stays, vocab, spec.strategy, spec.task,
                             hospital_tags=hospital_tags)

    # per-hospital stratified splits, then pooled train/valid unions
    data_a = prepare_stay_data(stays_a, vocab, spec.strategy, spec.task)
    data_b = prepare_stay_data(stays_b, vocab, spec.strategy, spec.task)
    split_a = make_split(data_a, spec.seed)
    split_b = make_split(data_b, spec.seed)
    offset = len(stays_a)
    train_ids = list(split_a.train) + [offset + i for i in split_b.train]
    valid_ids = list(split_a.valid) + [offset + i for i in split_b.valid]

    model = build_model(spec, data, train_ids, vocab, init_encoder=init_encoder)
    predictor = SequencePredictor(model.output_dim, spec.hyper.hidden_dim,
                                  n_outputs=spec.n_outputs, dropout_p=spec.hyper.dropout,
                                  seed=spec.seed)
    result = fit(model, predictor, data, train_ids, valid_ids, spec.hyper, spec.seed,
                 run_tag="pool")

    per_hospital = {}
    for tag, split, off in ((tags[0], split_a, 0), (tags[1], split_b, offset)):
        test_ids = [off + i for i in split.test]
        scores, _ = predict_scores(model, predictor, data, test_ids)
        per_hospital[tag] = _batch_auprc(scores, data.labels[test_ids])

    code_size = len(model.table.vocab) if spec.encoder in CODE_KINDS else None
    return PoolResult(vocab=vocab, model=model, predictor=predictor, fit=result,
                      per_hospital_auprc=per_hospital, desc_vocab_size=len(vocab),
                      code_vocab_size=code_size)


# ------------------------------------------------------------- checkpointing

def run_tensors(model, predictor) -> dict:
    tensors = {f"pred.{k}": v for k, v in predictor.params.items()}
    tensors.update(model.named_all())
    return tensors


def run_meta(spec: ExperimentSpec, model, vocab: Vocabulary) -> dict:
    meta = {
        "encoder": spec.encoder.value,
        "strategy": spec.strategy.value,
        "task": spec.task.value,
        "seed": spec.seed,
        "hyper": asdict(spec.hyper),
        "vocab_digest": vocab.digest(),
        "vocab_tokens": vocab.id_to_token,
        "output_dim": model.output_dim,
    }
    if hasattr(model, "table"):
        meta["code_keys"] = model.table.vocab.keys[1:]
    if model.uses_text:
        encoder = model.encoder if isinstance(model, DescEmbModel) else model.text_encoder
        meta["text_kind"] = encoder.kind
        meta["text_args"] = text_encoder_args(encoder)
    return meta


def text_encoder_args(encoder) -> dict:
    if isinstance(encoder, BiRnnTextEncoder):
        return {"vocab_size": encoder.vocab_size, "embed_dim": encoder.embed_dim,
                "hidden_dim": encoder.hidden_dim}
    return {"vocab_size": encoder.vocab_size, "embed_dim": encoder.embed_dim,
            "n_layers": encoder.n_layers, "n_heads": encoder.n_heads,
            "ffn_dim": encoder.ffn_dim, "max_len": encoder.max_len,
            "dropout_p": encoder.dropout_p}


def restore_text_encoder(kind: str, args: dict, tensors: dict, prefix: str = "txt."):
    encoder = (BiRnnTextEncoder(**args) if kind == "birnn"
               else TransformerTextEncoder(**args))
    for name, p in encoder.params.items():
        p.data[...] = tensors[f"{prefix}{name}"]
    return encoder


def save_run(path, result: TrainResult, extra_meta: dict | None = None):
    meta = run_meta(result.spec, result.model, result.vocab)
    meta["test_auprc"] = result.test_auprc
    meta.update(extra_meta or {})
    save_checkpoint(path, run_tensors(result.model, result.predictor), meta)
    return path


def load_run(path, task: TaskKind | None = None) -> TrainResult:
    """Rebuild a TrainResult shell (model+predictor+vocab) from a checkpoint."""
    tensors, meta = load_checkpoint(path)
    spec = ExperimentSpec(
        task=TaskKind(task if task is not None else meta["task"]),
        encoder=EncoderKind(meta["encoder"]),
        strategy=ValueStrategy(meta["strategy"]),
        hyper=Hyper(**meta["hyper"]), seed=meta["seed"])
    vocab = Vocabulary(meta["vocab_tokens"])
    hyper = spec.hyper

    if spec.encoder in CODE_KINDS:
        model = CodeEmbModel(CodeVocabulary(meta["code_keys"]), spec.strategy, hyper,
                             spec.seed)
        model.table.params["code_table"].data[...] = tensors["emb.code_table"]
    elif spec.encoder in DESC_KINDS:
        encoder = restore_text_encoder(meta["text_kind"], meta["text_args"], tensors)
        model = DescEmbModel(encoder, spec.strategy, hyper, spec.seed)
    else:
        encoder = restore_text_encoder(meta["text_kind"], meta["text_args"], tensors)
        model = ClsFtModel.__new__(ClsFtModel)
        model.strategy = spec.strategy
        model.text_encoder = encoder
        from .encoders import freeze_params
        freeze_params(encoder.params)
        encoder.frozen = True
        vocab_c = CodeVocabulary(meta["code_keys"])
        model.table = CodeEmbeddingTable(vocab_c, encoder.output_dim, spec.seed)
        model.table.params["code_table"].data[...] = tensors["emb.cls_cache"]
        model.value_mlp = (ValueMLP(hyper.value_dim, seed=spec.seed)
                           if spec.strategy is ValueStrategy.VC else None)
        model.output_dim = meta["output_dim"]
    if getattr(model, "value_mlp", None):
        for k, v in model.value_mlp.params.items():
            v.data[...] = tensors[f"emb.{k}"]

    predictor = SequencePredictor(model.output_dim, hyper.hidden_dim,
                                  n_outputs=spec.n_outputs, dropout_p=hyper.dropout,
                                  seed=spec.seed)
    for name, p in predictor.params.items():
        p.data[...] = tensors[f"pred.{name}"]
    return TrainResult(spec=spec, model=model, predictor=predictor, vocab=vocab,
                       split=Split((), (), ()), fit=FitResult([], 0, -1.0),
                       test_auprc=meta.get("test_auprc", -1.0))
