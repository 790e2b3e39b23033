"""Recurrent sequence predictor over per-event representations.

Consumes a flat (total_events, width) matrix of event vectors plus the
per-stay event index lists, runs a masked GRU over each stay's timeline,
and reads the task head off the hidden state after the last real event.
Binary tasks emit one logit; the diagnosis task emits 18 independent
logits.
"""

import numpy as np

from . import tensor as T
from .encoders import _gru_params, _gru_step, _normal, _zeros
from .errors import DimensionError
from .rng import purpose_rng
from .tensor import Tensor


class SequencePredictor:
    def __init__(self, input_dim: int, hidden_dim: int = 256, n_outputs: int = 1,
                 dropout_p: float = 0.3, seed: int = 0, dtype=np.float32):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.n_outputs = n_outputs
        self.dropout_p = dropout_p
        self.dtype = dtype
        rng = purpose_rng(seed, "predictor-init")
        self.params = _gru_params(rng, input_dim, hidden_dim, "rnn", dtype)
        self.params["head.W"] = _normal(rng, (hidden_dim, n_outputs), dtype=dtype)
        self.params["head.b"] = _zeros((n_outputs,), dtype=dtype)

    def forward(self, flat_events: Tensor, stay_event_rows: list,
                train_flag: bool = False, rngs=None):
        """Run the recurrence; returns (logits, last_hidden).

        ``flat_events`` holds one row per event; ``stay_event_rows[i]``
        lists the row indices of stay i's events in timeline order.
        """
        if flat_events.shape[1] != self.input_dim:
            raise DimensionError(
                f"predictor expects width {self.input_dim}, got {flat_events.shape}")
        n = len(stay_event_rows)
        max_t = max(len(rows) for rows in stay_event_rows)
        width = self.input_dim

        if train_flag and rngs is not None and self.dropout_p > 0:
            flat_events = T.dropout(flat_events, self.dropout_p, True,
                                    rngs.get("predictor-dropout"))

        # pad with one zero row so every (stay, t) cell has a gather target
        zero_row = Tensor(np.zeros((1, width)), dtype=flat_events.dtype)
        padded = T.concat([flat_events, zero_row], axis=0)
        pad_row = flat_events.shape[0]
        gather = np.full((n, max_t), pad_row, dtype=np.int64)
        mask = np.zeros((n, max_t), dtype=np.float64)
        for i, rows in enumerate(stay_event_rows):
            gather[i, :len(rows)] = rows
            mask[i, :len(rows)] = 1.0

        h = Tensor(np.zeros((n, self.hidden_dim)), dtype=flat_events.dtype)
        for t in range(max_t):
            x_t = T.embedding_lookup(padded, gather[:, t])
            h_new = _gru_step(x_t, h, self.params, "rnn", self.hidden_dim)
            m = Tensor(np.repeat(mask[:, t:t + 1], self.hidden_dim, axis=1),
                       dtype=flat_events.dtype)
            h = T.add(h, T.mul(m, T.sub(h_new, h)))

        if train_flag and rngs is not None and self.dropout_p > 0:
            head_in = T.dropout(h, self.dropout_p, True, rngs.get("predictor-dropout"))
        else:
            head_in = h
        logits = T.add(T.matmul(head_in, self.params["head.W"]), self.params["head.b"])
        if self.n_outputs == 1:
            logits = T.reshape(logits, (n,))
        return logits, h
