"""Event encoders: code-lookup embeddings and neural text encoders.

Two families produce the per-event vector consumed by the sequence
predictor:

  * a per-hospital lookup table indexed by code identity (optionally a
    new row per distinct value, depending on strategy);
  * a shared text encoder over the tokenized description, either a
    bidirectional gated RNN (concatenating the last hidden state of each
    direction) or a small transformer read out at the leading aggregation
    token.

Also here: the scalar value channel (a small MLP concatenated onto the
text vector), masked-token pretraining for the text encoders, skip-gram
pretraining for code tables, and the frozen-encoder cache used by the
cache-finetune training mode.
"""

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError
from .optim import AdamState, adam_step, zero_grads
from .rng import purpose_rng
from .tensor import Tensor
from .textproc import (MASK, PAD, PLACE_TABLE_SIZE, SPECIAL_TOKENS, TokenizedDescription,
                       place_id_index)

N_SPECIAL = len(SPECIAL_TOKENS)


# ------------------------------------------------------------ initialisation

def _uniform(rng, shape, scale=0.05, dtype=np.float32):
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True, dtype=dtype)


def _normal(rng, shape, dtype=np.float32):
    std = 1.0 / np.sqrt(shape[0])
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True, dtype=dtype)


def _zeros(shape, dtype=np.float32):
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


def freeze_params(params: dict):
    for p in params.values():
        p.requires_grad = False
        p.grad = None


# --------------------------------------------------------------- code tables

class CodeVocabulary:
    """Deterministic code-key -> row map with an unknown-key fallback row."""

    UNK_KEY = "\x00unk"

    def __init__(self, keys):
        self.keys = [self.UNK_KEY] + sorted(set(keys))
        self.key_to_id = {k: i for i, k in enumerate(self.keys)}

    def __len__(self):
        return len(self.keys)

    def id_of(self, key: str) -> int:
        return self.key_to_id.get(key, 0)

    def ids_of(self, keys) -> np.ndarray:
        return np.array([self.id_of(k) for k in keys], dtype=np.int64)


class CodeEmbeddingTable:
    """Trainable lookup table over a code vocabulary."""

    def __init__(self, vocab: CodeVocabulary, dim: int, seed: int,
                 init: np.ndarray | None = None, dtype=np.float32):
        self.vocab = vocab
        self.dim = dim
        rng = purpose_rng(seed, "code-table-init")
        table = _uniform(rng, (len(vocab), dim), dtype=dtype)
        if init is not None:
            if init.shape != table.data.shape:
                raise ContractError(f"init shape {init.shape} != table {table.data.shape}")
            table.data[...] = init.astype(table.data.dtype)
        self.params = {"code_table": table}

    def embed_ids(self, ids: np.ndarray) -> Tensor:
        return T.embedding_lookup(self.params["code_table"], ids)

    def embed_code(self, key: str) -> Tensor:
        """Row for one code key; unseen keys fall back to the unknown row."""
        return self.embed_ids(np.array([self.vocab.id_of(key)]))[0]


# ----------------------------------------------------------------- GRU cells

def _gru_params(rng, in_dim, hidden, prefix, dtype):
    return {
        f"{prefix}.W": _normal(rng, (in_dim, 3 * hidden), dtype=dtype),
        f"{prefix}.U": _normal(rng, (hidden, 3 * hidden), dtype=dtype),
        f"{prefix}.bi": _zeros((3 * hidden,), dtype=dtype),
        f"{prefix}.bh": _zeros((3 * hidden,), dtype=dtype),
    }


def _gru_step(x, h, params, prefix, hidden):
    gi = T.add(T.matmul(x, params[f"{prefix}.W"]), params[f"{prefix}.bi"])
    gh = T.add(T.matmul(h, params[f"{prefix}.U"]), params[f"{prefix}.bh"])
    r = T.sigmoid(T.add(gi[:, :hidden], gh[:, :hidden]))
    z = T.sigmoid(T.add(gi[:, hidden:2 * hidden], gh[:, hidden:2 * hidden]))
    n = T.tanh(T.add(gi[:, 2 * hidden:], T.mul(r, gh[:, 2 * hidden:])))
    one_minus_z = 1.0 - z
    return T.add(T.mul(one_minus_z, n), T.mul(z, h))


def run_gru(emb: Tensor, mask: np.ndarray, params, prefix, hidden,
            reverse=False, collect=False):
    """Masked GRU over (n, L, E) embeddings.

    Padding steps keep the previous hidden state, so the returned final
    state is the state after each row's last real token (first real token
    when running in reverse). ``collect`` also returns the per-position
    states.
    """
    n, length = mask.shape
    dtype = emb.data.dtype
    h = Tensor(np.zeros((n, hidden)), dtype=dtype)
    states = [None] * length if collect else None
    steps = range(length - 1, -1, -1) if reverse else range(length)
    for t in steps:
        x_t = emb[:, t, :]
        h_new = _gru_step(x_t, h, params, prefix, hidden)
        m = Tensor(np.repeat(mask[:, t:t + 1], hidden, axis=1), dtype=dtype)
        h = T.add(h, T.mul(m, T.sub(h_new, h)))
        if collect:
            states[t] = h
    return h, states


# ------------------------------------------------------------- text encoders

def pad_batch(toks: list) -> tuple:
    """Right-pad a batch of TokenizedDescription into id/place/mask arrays."""
    if not toks:
        raise ContractError("pad_batch: empty batch")
    length = max(len(t) for t in toks)
    ids = np.full((len(toks), length), PAD, dtype=np.int64)
    places = np.zeros((len(toks), length), dtype=np.int64)
    mask = np.zeros((len(toks), length), dtype=np.float64)
    for i, t in enumerate(toks):
        k = len(t.token_ids)
        ids[i, :k] = t.token_ids
        places[i, :k] = [place_id_index(p) for p in t.place_ids]
        mask[i, :k] = 1.0
    return ids, places, mask


class BiRnnTextEncoder:
    """Bidirectional gated RNN; output is [last fwd state ; last bwd state]."""

    kind = "birnn"

    def __init__(self, vocab_size: int, embed_dim: int = 128, hidden_dim: int = 64,
                 seed: int = 0, dtype=np.float32):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.output_dim = 2 * hidden_dim
        self.dtype = dtype
        rng = purpose_rng(seed, "birnn-init")
        self.params = {
            "tok_emb": _uniform(rng, (vocab_size, embed_dim), dtype=dtype),
            "place_emb": _uniform(rng, (PLACE_TABLE_SIZE, embed_dim), dtype=dtype),
        }
        self.params.update(_gru_params(rng, embed_dim, hidden_dim, "fwd", dtype))
        self.params.update(_gru_params(rng, embed_dim, hidden_dim, "bwd", dtype))
        self.frozen = False

    def _embed(self, ids, places):
        emb = T.embedding_lookup(self.params["tok_emb"], ids)
        if np.any(places):
            place_vec = T.embedding_lookup(self.params["place_emb"], places)
            gate = np.repeat((places != 0).astype(self.dtype)[:, :, None],
                             self.embed_dim, axis=2)
            emb = T.add(emb, T.mul(place_vec, Tensor(gate, dtype=self.dtype)))
        return emb

    def encode(self, ids, places, mask, train_flag=False, rngs=None) -> Tensor:
        emb = self._embed(ids, places)
        h_fwd, _ = run_gru(emb, mask, self.params, "fwd", self.hidden_dim)
        h_bwd, _ = run_gru(emb, mask, self.params, "bwd", self.hidden_dim, reverse=True)
        return T.concat([h_fwd, h_bwd], axis=1)

    def positional_states(self, ids, places, mask, train_flag=False, rngs=None) -> Tensor:
        """Per-position [fwd_t ; bwd_t] states, flattened to (n*L, 2H)."""
        emb = self._embed(ids, places)
        _, fwd = run_gru(emb, mask, self.params, "fwd", self.hidden_dim, collect=True)
        _, bwd = run_gru(emb, mask, self.params, "bwd", self.hidden_dim,
                         reverse=True, collect=True)
        n = ids.shape[0]
        per_t = [T.reshape(T.concat([f, b], axis=1), (n, 1, self.output_dim))
                 for f, b in zip(fwd, bwd)]
        return T.reshape(T.concat(per_t, axis=1), (n * ids.shape[1], self.output_dim))


class TransformerTextEncoder:
    """Small pre-trained-style transformer; output read at position 0."""

    kind = "transformer"

    def __init__(self, vocab_size: int, embed_dim: int = 128, n_layers: int = 2,
                 n_heads: int = 2, ffn_dim: int | None = None, max_len: int = 64,
                 dropout_p: float = 0.1, seed: int = 0, dtype=np.float32):
        if embed_dim % n_heads:
            raise ConfigurationError(f"embed_dim {embed_dim} not divisible by {n_heads} heads")
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.head_dim = embed_dim // n_heads
        self.ffn_dim = ffn_dim or 4 * embed_dim
        self.max_len = max_len
        self.dropout_p = dropout_p
        self.output_dim = embed_dim
        self.dtype = dtype
        rng = purpose_rng(seed, "transformer-init")
        p = {
            "tok_emb": _uniform(rng, (vocab_size, embed_dim), dtype=dtype),
            "pos_emb": _uniform(rng, (max_len, embed_dim), dtype=dtype),
            "place_emb": _uniform(rng, (PLACE_TABLE_SIZE, embed_dim), dtype=dtype),
            "emb_ln.g": Tensor(np.ones(embed_dim), requires_grad=True, dtype=dtype),
            "emb_ln.b": _zeros((embed_dim,), dtype=dtype),
        }
        for layer in range(n_layers):
            pre = f"l{layer}"
            for name in ("q", "k", "v", "o"):
                p[f"{pre}.W{name}"] = _normal(rng, (embed_dim, embed_dim), dtype=dtype)
                p[f"{pre}.b{name}"] = _zeros((embed_dim,), dtype=dtype)
            p[f"{pre}.ln1.g"] = Tensor(np.ones(embed_dim), requires_grad=True, dtype=dtype)
            p[f"{pre}.ln1.b"] = _zeros((embed_dim,), dtype=dtype)
            p[f"{pre}.W1"] = _normal(rng, (embed_dim, self.ffn_dim), dtype=dtype)
            p[f"{pre}.b1"] = _zeros((self.ffn_dim,), dtype=dtype)
            p[f"{pre}.W2"] = _normal(rng, (self.ffn_dim, embed_dim), dtype=dtype)
            p[f"{pre}.b2"] = _zeros((embed_dim,), dtype=dtype)
            p[f"{pre}.ln2.g"] = Tensor(np.ones(embed_dim), requires_grad=True, dtype=dtype)
            p[f"{pre}.ln2.b"] = _zeros((embed_dim,), dtype=dtype)
        self.params = p
        self.frozen = False

    def _dropout(self, x, train_flag, rngs):
        if not train_flag or rngs is None:
            return x
        return T.dropout(x, self.dropout_p, train_flag, rngs.get("encoder-dropout"))

    def _body(self, ids, places, mask, train_flag, rngs) -> Tensor:
        n, length = ids.shape
        if length > self.max_len:
            raise ContractError(f"sequence length {length} exceeds max_len {self.max_len}")
        p = self.params
        pos_ids = np.tile(np.arange(length), (n, 1))
        emb = T.add(T.embedding_lookup(p["tok_emb"], ids),
                    T.embedding_lookup(p["pos_emb"], pos_ids))
        if np.any(places):
            place_vec = T.embedding_lookup(p["place_emb"], places)
            gate = np.repeat((places != 0).astype(self.dtype)[:, :, None],
                             self.embed_dim, axis=2)
            emb = T.add(emb, T.mul(place_vec, Tensor(gate, dtype=self.dtype)))
        x = layer_norm3(emb, p["emb_ln.g"], p["emb_ln.b"])
        x = self._dropout(x, train_flag, rngs)

        attn_bias = np.where(mask[:, None, None, :] > 0, 0.0, -1e9)
        attn_bias = np.broadcast_to(attn_bias, (n, self.n_heads, length, length)).copy()
        attn_bias_t = Tensor(attn_bias, dtype=self.dtype)
        scale = 1.0 / np.sqrt(self.head_dim)

        for layer in range(self.n_layers):
            pre = f"l{layer}"

            def proj(name):
                flat = T.reshape(x, (n * length, self.embed_dim))
                out = T.add(T.matmul(flat, p[f"{pre}.W{name}"]), p[f"{pre}.b{name}"])
                out = T.reshape(out, (n, length, self.n_heads, self.head_dim))
                return T.transpose(out, (0, 2, 1, 3))

            q, k, v = proj("q"), proj("k"), proj("v")
            scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * scale
            attn = T.softmax(T.add(scores, attn_bias_t), axis=-1)
            attn = self._dropout(attn, train_flag, rngs)
            ctx = T.transpose(T.matmul(attn, v), (0, 2, 1, 3))
            ctx = T.reshape(ctx, (n * length, self.embed_dim))
            ctx = T.add(T.matmul(ctx, p[f"{pre}.Wo"]), p[f"{pre}.bo"])
            ctx = T.reshape(ctx, (n, length, self.embed_dim))
            x = layer_norm3(T.add(x, self._dropout(ctx, train_flag, rngs)),
                            p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])

            flat = T.reshape(x, (n * length, self.embed_dim))
            hidden = T.relu(T.add(T.matmul(flat, p[f"{pre}.W1"]), p[f"{pre}.b1"]))
            out = T.add(T.matmul(hidden, p[f"{pre}.W2"]), p[f"{pre}.b2"])
            out = T.reshape(out, (n, length, self.embed_dim))
            x = layer_norm3(T.add(x, self._dropout(out, train_flag, rngs)),
                            p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
        return x

    def encode(self, ids, places, mask, train_flag=False, rngs=None) -> Tensor:
        return self._body(ids, places, mask, train_flag, rngs)[:, 0, :]

    def positional_states(self, ids, places, mask, train_flag=False, rngs=None) -> Tensor:
        x = self._body(ids, places, mask, train_flag, rngs)
        n, length = ids.shape
        return T.reshape(x, (n * length, self.embed_dim))


def layer_norm3(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return T.layer_norm(x, gain, bias)


class ValueMLP:
    """Two affine layers mapping an event's scalar value to a small vector."""

    def __init__(self, out_dim: int = 16, hidden_dim: int = 16, seed: int = 0,
                 dtype=np.float32, prefix: str = "value_mlp"):
        rng = purpose_rng(seed, "value-mlp-init")
        self.out_dim = out_dim
        self.prefix = prefix
        self.dtype = dtype
        self.params = {
            f"{prefix}.W1": _normal(rng, (1, hidden_dim), dtype=dtype),
            f"{prefix}.b1": _zeros((hidden_dim,), dtype=dtype),
            f"{prefix}.W2": _normal(rng, (hidden_dim, out_dim), dtype=dtype),
            f"{prefix}.b2": _zeros((out_dim,), dtype=dtype),
        }

    @staticmethod
    def feature(values) -> np.ndarray:
        """Signed log compression; missing values enter as 0."""
        v = np.array([0.0 if x is None else float(x) for x in values], dtype=np.float64)
        return (np.sign(v) * np.log1p(np.abs(v)))[:, None]

    def forward(self, values) -> Tensor:
        x = Tensor(self.feature(values), dtype=self.dtype)
        p = self.params
        h = T.relu(T.add(T.matmul(x, p[f"{self.prefix}.W1"]), p[f"{self.prefix}.b1"]))
        return T.add(T.matmul(h, p[f"{self.prefix}.W2"]), p[f"{self.prefix}.b2"])


def encode_description(encoder, tok: TokenizedDescription, train_flag=False, rngs=None) -> Tensor:
    """Single-description forward; z depends only on the tokenization."""
    if not tok.token_ids:
        raise ContractError("encode_description: empty token ids")
    ids, places, mask = pad_batch([tok])
    return encoder.encode(ids, places, mask, train_flag=train_flag, rngs=rngs)[0]


# --------------------------------------------------------- cache finetune

def precompute_cls_cache(encoder, keyed_tokenized: dict, batch_size: int = 256):
    """One frozen forward per unique code key; rows become a trainable table.

    Returns (CodeVocabulary, cache ndarray (V, b)) aligned row-for-row; the
    encoder is frozen afterwards so only the cached vectors (and the
    predictor) can learn.
    """
    vocab = CodeVocabulary(list(keyed_tokenized))
    cache = np.zeros((len(vocab), encoder.output_dim), dtype=np.float64)
    keys = vocab.keys[1:]  # row 0 stays the zero unknown-key vector
    with T.no_grad():
        for start in range(0, len(keys), batch_size):
            chunk = keys[start:start + batch_size]
            ids, places, mask = pad_batch([keyed_tokenized[k] for k in chunk])
            z = encoder.encode(ids, places, mask, train_flag=False)
            cache[1 + start:1 + start + len(chunk)] = z.data
    freeze_params(encoder.params)
    encoder.frozen = True
    return vocab, cache.astype(np.float32)


# ------------------------------------------------------------- pretraining

def pretrain_mlm(encoder, corpus: list, steps: int, mask_prob: float = 0.15,
                 batch_size: int = 64, lr: float = 1e-4, seed: int = 0):
    """Masked-token pretraining over value-free tokenizations.

    Each step masks ``mask_prob`` of the non-special tokens (80% to the
    mask token, 10% to a random token, 10% unchanged) and minimises the
    cross-entropy of the original ids at the selected positions. Returns
    (per-step loss curve, output head params); encoder parameters are
    updated in place, the head is only needed for recovery evaluation.
    """
    if not 0.0 < mask_prob <= 1.0:
        raise ConfigurationError(f"mask_prob must be in (0, 1], got {mask_prob}")
    if len(corpus) < batch_size:
        raise ConfigurationError(
            f"corpus of {len(corpus)} descriptions is smaller than one batch ({batch_size})")
    rng = purpose_rng(seed, "mlm")
    head = {
        "mlm.W": _normal(purpose_rng(seed, "mlm-head-init"),
                         (encoder.output_dim, encoder.vocab_size), dtype=encoder.dtype),
        "mlm.b": _zeros((encoder.vocab_size,), dtype=encoder.dtype),
    }
    trainable = dict(encoder.params)
    trainable.update(head)
    state = AdamState()
    losses = []
    for _ in range(steps):
        batch_idx = rng.integers(len(corpus), size=batch_size)
        toks = [corpus[i] for i in batch_idx]
        ids, places, mask = pad_batch(toks)
        original = ids.copy()
        maskable = (ids >= N_SPECIAL) & (mask > 0)
        selected = maskable & (rng.random(ids.shape) < mask_prob)
        if not selected.any():
            continue
        roll = rng.random(ids.shape)
        ids = ids.copy()
        ids[selected & (roll < 0.8)] = MASK
        random_pos = selected & (roll >= 0.8) & (roll < 0.9)
        ids[random_pos] = rng.integers(N_SPECIAL, encoder.vocab_size, size=int(random_pos.sum()))

        states = encoder.positional_states(ids, places, mask, train_flag=True)
        flat_pos = np.flatnonzero(selected.reshape(-1))
        picked = T.embedding_lookup(states, flat_pos)
        logits = T.add(T.matmul(picked, head["mlm.W"]), head["mlm.b"])
        loss = T.softmax_cross_entropy(logits, original.reshape(-1)[flat_pos])
        zero_grads(trainable)
        T.backward(loss)
        adam_step(trainable, state, lr=lr)
        losses.append(loss.item())
    return losses, head


def masked_recovery_accuracy(encoder, head: dict, corpus: list, n_batches: int = 8,
                             mask_prob: float = 0.15, batch_size: int = 64,
                             seed: int = 12345) -> float:
    """Fraction of masked positions whose argmax logit is the original token."""
    rng = purpose_rng(seed, "mlm-eval")
    hits = total = 0
    with T.no_grad():
        for _ in range(n_batches):
            batch_idx = rng.integers(len(corpus), size=min(batch_size, len(corpus)))
            toks = [corpus[i] for i in batch_idx]
            ids, places, mask = pad_batch(toks)
            original = ids.copy()
            maskable = (ids >= N_SPECIAL) & (mask > 0)
            selected = maskable & (rng.random(ids.shape) < mask_prob)
            if not selected.any():
                continue
            ids = ids.copy()
            ids[selected] = MASK
            states = encoder.positional_states(ids, places, mask, train_flag=False)
            flat_pos = np.flatnonzero(selected.reshape(-1))
            picked = states.data[flat_pos]
            logits = picked @ head["mlm.W"].data + head["mlm.b"].data
            predictions = logits.argmax(axis=1)
            hits += int((predictions == original.reshape(-1)[flat_pos]).sum())
            total += len(flat_pos)
    return hits / max(total, 1)


def pretrain_code_skipgram(sequences: list, code_vocab: CodeVocabulary, dim: int,
                           window: int = 5, negatives: int = 5, steps: int = 2000,
                           batch_size: int = 128, lr: float = 1e-2, seed: int = 0) -> np.ndarray:
    """Skip-gram with negative sampling over code co-occurrence.

    ``sequences`` are per-stay lists of code keys. Returns the trained
    input-embedding matrix aligned with ``code_vocab`` rows, suitable as
    the initial value of a lookup table.
    """
    if window < 1:
        raise ConfigurationError(f"window must be >= 1, got {window}")
    init_rng = purpose_rng(seed, "skipgram-init")
    table_in = _uniform(init_rng, (len(code_vocab), dim))
    table_out = _uniform(init_rng, (len(code_vocab), dim))
    if steps <= 0:
        return table_in.data.copy()

    pairs = []
    counts = np.zeros(len(code_vocab))
    for seq in sequences:
        ids = [code_vocab.id_of(k) for k in seq]
        for i, center in enumerate(ids):
            counts[center] += 1
            for j in range(max(0, i - window), min(len(ids), i + window + 1)):
                if j != i:
                    pairs.append((center, ids[j]))
    if not pairs:
        return table_in.data.copy()
    pairs = np.array(pairs, dtype=np.int64)
    noise = counts ** 0.75
    noise = noise / noise.sum() if noise.sum() > 0 else np.full(len(counts), 1.0 / len(counts))

    rng = purpose_rng(seed, "skipgram")
    params = {"in": table_in, "out": table_out}
    state = AdamState()
    for _ in range(steps):
        rows = rng.integers(len(pairs), size=batch_size)
        centers = pairs[rows, 0]
        contexts = pairs[rows, 1]
        negs = rng.choice(len(code_vocab), size=(batch_size, negatives), p=noise)
        u = T.embedding_lookup(table_in, centers)                     # (B, d)
        v_pos = T.embedding_lookup(table_out, contexts)               # (B, d)
        v_neg = T.embedding_lookup(table_out, negs)                   # (B, k, d)
        u_col = T.reshape(u, (batch_size, dim, 1))
        pos_logit = T.reshape(T.matmul(T.reshape(v_pos, (batch_size, 1, dim)), u_col),
                              (batch_size, 1))
        neg_logit = T.reshape(T.matmul(v_neg, u_col), (batch_size, negatives))
        logits = T.concat([pos_logit, neg_logit], axis=1)
        targets = np.zeros((batch_size, 1 + negatives), dtype=np.float64)
        targets[:, 0] = 1.0
        loss = T.bce_with_logits(logits, Tensor(targets, dtype=logits.dtype))
        zero_grads(params)
        T.backward(loss)
        adam_step(params, state, lr=lr)
    return table_in.data.copy()
