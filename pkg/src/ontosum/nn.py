"""Layers shared by the selector and the summarizer."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import LstmParams, Tensor


class EmbeddingProvider:
    """Maps token ids to vectors.  Subclasses may be contextual; the base is a static table."""

    dim: int

    def embed(self, ids: np.ndarray) -> Tensor:
        raise NotImplementedError

    def parameters(self) -> dict[str, Tensor]:
        return {}


class StaticEmbeddings(EmbeddingProvider):
    def __init__(self, matrix: np.ndarray | Tensor, trainable: bool = True):
        if isinstance(matrix, Tensor):
            self.table = matrix
            self.table.requires_grad = trainable
        else:
            self.table = Tensor(np.array(matrix), requires_grad=trainable)
        self.trainable = trainable
        self.dim = self.table.shape[1]

    def embed(self, ids: np.ndarray) -> Tensor:
        return T.embedding(self.table, ids)

    def parameters(self) -> dict[str, Tensor]:
        # frozen tables are still saved so inference is self-contained
        return {"embedding": self.table}


def bilstm_layers(input_size: int, hidden: int, num_layers: int, rng) -> list[tuple[LstmParams, LstmParams]]:
    layers = []
    for k in range(num_layers):
        d = input_size if k == 0 else 2 * hidden
        layers.append((LstmParams.init(d, hidden, rng), LstmParams.init(d, hidden, rng)))
    return layers


def lstm_param_dict(prefix: str, p: LstmParams) -> dict[str, Tensor]:
    return {f"{prefix}.{k}": v for k, v in p.tensors().items()}


def lstm_from_dict(prefix: str, params: dict[str, Tensor]) -> LstmParams:
    return LstmParams(params[f"{prefix}.w_x"], params[f"{prefix}.w_h"], params[f"{prefix}.bias"])


def run_bilstm(
    steps: Sequence[Tensor],
    layers: Sequence[tuple[LstmParams, LstmParams]],
    mask: np.ndarray,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> tuple[list[Tensor], list[tuple[Tensor, Tensor]]]:
    """Stacked bidirectional LSTM over padded batches.

    ``steps[t]`` is the ``(B, D)`` input at position ``t`` and ``mask`` is
    ``(B, n)``.  Padding sits at the end of each row, so the masked forward
    pass carries the last real state through and the backward pass starts
    from zeros at each row's last real token.

    Returns per-position outputs ``(B, 2H)`` of the top layer and, per layer,
    the final (forward, backward) hidden states.
    """
    masks = [mask[:, t] for t in range(mask.shape[1])]
    xs = list(steps)
    finals = []
    for k, (fwd, bwd) in enumerate(layers):
        if k > 0:
            xs = [T.dropout(x, dropout, rng, training) for x in xs]
        hf = T.run_lstm(xs, fwd, masks)
        hb = T.run_lstm(xs, bwd, masks, reverse=True)
        xs = [T.concat([a, b], axis=1) for a, b in zip(hf, hb)]
        finals.append((hf[-1], hb[0]))
    xs = [T.dropout(x, dropout, rng, training) for x in xs]
    return xs, finals
