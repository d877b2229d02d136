"""Review sentiment scoring with a hierarchical recurrent attention network.

A review is a sequence of sentences of words.  Words run through a gated
recurrent layer whose input at step t is the concatenated embedding window
(y_{t-1}, y_t, y_{t+1}); attention pools the hidden states into a sentence
vector.  Sentence vectors run through a second gated layer of the same
shape (again windowed) with its own attention, and a sigmoid head maps the
review vector onto a sentiment score in (1, 5).

Ratings act as training targets: the loss is half the summed squared error
between a review's score and the rating attached to it.  All gradients are
computed by hand and checked against finite differences in the test suite.
Everything is numpy float64; training batches reviews and updates with
per-parameter adaptive (accumulated squared gradient) steps.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, tokenize
from .errors import DataError, TrainingError

UNK = 0


@dataclass
class Vocab:
    token_to_index: dict[str, int]
    index_to_token: list[str]

    @property
    def size(self) -> int:
        """Number of indexed tokens, unknown slot excluded."""
        return len(self.index_to_token) - 1

    def encode_word(self, token: str) -> int:
        return self.token_to_index.get(token, UNK)


def build_vocab(train: Dataset, min_count: int = 1) -> Vocab:
    """Index tokens with frequency >= min_count; everything else is unknown."""
    counts: Counter[str] = Counter()
    for it in train.interactions:
        for sent in it.sentences():
            counts.update(sent)
    index_to_token = ["<unk>"]
    token_to_index: dict[str, int] = {}
    for token in sorted(counts):
        if counts[token] >= min_count:
            token_to_index[token] = len(index_to_token)
            index_to_token.append(token)
    return Vocab(token_to_index, index_to_token)


@dataclass
class GruParams:
    W_ug: np.ndarray
    U_ug: np.ndarray
    b_ug: np.ndarray
    W_re: np.ndarray
    U_re: np.ndarray
    b_re: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray


@dataclass
class AttnParams:
    W_a: np.ndarray
    b_a: np.ndarray
    ctx: np.ndarray


@dataclass
class SentimentModel:
    vocab: Vocab
    E: np.ndarray                  # (|V|+1) x d_w word embeddings
    word_gru: GruParams
    sent_gru: GruParams
    word_attn: AttnParams
    sent_attn: AttnParams
    w_o: np.ndarray                # d_h
    b_o: np.ndarray                # shape (1,)
    d_w: int = 32
    d_h: int = 32
    max_sentences: int = 16
    max_words: int = 32
    loss_history: list[float] = field(default_factory=list)

    def params(self) -> dict[str, np.ndarray]:
        """Live views of every trainable array, keyed by stable names."""
        out = {"E": self.E, "w_o": self.w_o, "b_o": self.b_o}
        for tag, gru in (("w", self.word_gru), ("s", self.sent_gru)):
            for name in ("W_ug", "U_ug", "b_ug", "W_re", "U_re", "b_re",
                         "W_h", "U_h", "b_h"):
                out[f"{tag}.{name}"] = getattr(gru, name)
        for tag, attn in (("wa", self.word_attn), ("sa", self.sent_attn)):
            out[f"{tag}.W_a"] = attn.W_a
            out[f"{tag}.b_a"] = attn.b_a
            out[f"{tag}.ctx"] = attn.ctx
        return out

    def save(self, path):
        arrays = {f"param::{k}": v for k, v in self.params().items()}
        arrays["version"] = np.array([1])
        arrays["dims"] = np.array([self.d_w, self.d_h,
                                   self.max_sentences, self.max_words])
        arrays["vocab"] = np.array(self.vocab.index_to_token, dtype=object)
        np.savez(path, **arrays, allow_pickle=True)

    @classmethod
    def load(cls, path) -> "SentimentModel":
        blob = np.load(path, allow_pickle=True)
        if int(blob["version"][0]) != 1:
            raise DataError("unsupported sentiment checkpoint version")
        d_w, d_h, max_s, max_w = (int(x) for x in blob["dims"])
        tokens = [str(t) for t in blob["vocab"]]
        vocab = Vocab({t: i for i, t in enumerate(tokens) if i > 0}, tokens)
        model = create_sentiment_model(vocab, d_w=d_w, d_h=d_h, seed=0,
                                       max_sentences=max_s, max_words=max_w)
        for key, arr in model.params().items():
            arr[...] = blob[f"param::{key}"]
        return model


def _gru_init(rng, d_in: int, d_h: int) -> GruParams:
    def w(rows, cols):
        return rng.uniform(-1.0, 1.0, size=(rows, cols)) / np.sqrt(cols)

    return GruParams(
        W_ug=w(d_h, 3 * d_in), U_ug=w(d_h, d_h), b_ug=np.zeros(d_h),
        W_re=w(d_h, 3 * d_in), U_re=w(d_h, d_h), b_re=np.zeros(d_h),
        W_h=w(d_h, 3 * d_in), U_h=w(d_h, d_h), b_h=np.zeros(d_h),
    )


def create_sentiment_model(vocab: Vocab, d_w: int = 32, d_h: int = 32,
                           seed: int = 0, max_sentences: int = 16,
                           max_words: int = 32) -> SentimentModel:
    rng = np.random.default_rng(seed)
    E = rng.uniform(-0.1, 0.1, size=(vocab.size + 1, d_w))

    def attn():
        return AttnParams(
            W_a=rng.uniform(-1.0, 1.0, size=(d_h, d_h)) / np.sqrt(d_h),
            b_a=np.zeros(d_h),
            ctx=rng.uniform(-0.1, 0.1, size=d_h),
        )

    return SentimentModel(
        vocab=vocab, E=E,
        word_gru=_gru_init(rng, d_w, d_h),
        sent_gru=_gru_init(rng, d_h, d_h),
        word_attn=attn(), sent_attn=attn(),
        w_o=rng.uniform(-0.1, 0.1, size=d_h), b_o=np.zeros(1),
        d_w=d_w, d_h=d_h, max_sentences=max_sentences, max_words=max_words,
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# single-step reference operations (also used by sanity tests)


def gru_step(params: GruParams, y_window, h_prev: np.ndarray) -> np.ndarray:
    """One gated recurrence step on a concatenated (prev, cur, next) window.

    Missing neighbors at sequence boundaries are zero vectors by contract;
    callers pass them explicitly.
    """
    y_hat = np.concatenate([np.asarray(y, dtype=float) for y in y_window])
    ug = _sigmoid(params.W_ug @ y_hat + params.U_ug @ h_prev + params.b_ug)
    re = _sigmoid(params.W_re @ y_hat + params.U_re @ h_prev + params.b_re)
    hh = np.tanh(params.W_h @ y_hat + re * (params.U_h @ h_prev) + params.b_h)
    return (1.0 - ug) * h_prev + ug * hh


def attention_pool(vectors, attn: AttnParams) -> tuple[np.ndarray, np.ndarray]:
    """Additive attention over a sequence of vectors.

    Returns (pooled, weights); weights are a probability vector over the
    sequence positions.
    """
    V = np.asarray(vectors, dtype=float)
    if V.ndim != 2 or V.shape[0] == 0:
        raise DataError("attention_pool needs a non-empty sequence of vectors")
    U = np.tanh(V @ attn.W_a.T + attn.b_a)
    logits = U @ attn.ctx
    logits = logits - logits.max()
    e = np.exp(logits)
    weights = e / e.sum()
    return weights @ V, weights


# ---------------------------------------------------------------------------
# batched forward / backward


def encode_review(model: SentimentModel, review: str) -> list[list[int]]:
    sents = tokenize(review)
    if not sents:
        raise DataError("review tokenizes to zero sentences")
    out = []
    for sent in sents[: model.max_sentences]:
        out.append([model.vocab.encode_word(w) for w in sent[: model.max_words]])
    return out


def _pad_batch(encoded: list[list[list[int]]], max_s: int, max_w: int):
    B = len(encoded)
    S = min(max(len(r) for r in encoded), max_s)
    T = min(max(len(s) for r in encoded for s in r), max_w)
    ids = np.zeros((B, S, T), dtype=np.int64)
    wmask = np.zeros((B, S, T))
    smask = np.zeros((B, S))
    for b, review in enumerate(encoded):
        for si, sent in enumerate(review[:S]):
            smask[b, si] = 1.0
            for ti, w in enumerate(sent[:T]):
                ids[b, si, ti] = w
                wmask[b, si, ti] = 1.0
    return ids, wmask, smask


def _gru_forward_batch(params: GruParams, X: np.ndarray, mask: np.ndarray):
    """Run the windowed gated layer over X (B, T, d_in) with a step mask.

    Masked steps freeze the hidden state.  Returns hidden states (B, T, d_h)
    and the cache needed for the backward pass.
    """
    B, T, d_in = X.shape
    d_h = params.U_ug.shape[0]
    Yhat = np.zeros((B, T, 3 * d_in))
    Yhat[:, :, d_in:2 * d_in] = X
    Yhat[:, 1:, :d_in] = X[:, :-1]
    Yhat[:, :-1, 2 * d_in:] = X[:, 1:]

    h = np.zeros((B, d_h))
    H = np.empty((B, T, d_h))
    steps = []
    for t in range(T):
        y = Yhat[:, t]
        h_prev = h
        ug = _sigmoid(y @ params.W_ug.T + h_prev @ params.U_ug.T + params.b_ug)
        re = _sigmoid(y @ params.W_re.T + h_prev @ params.U_re.T + params.b_re)
        uh = h_prev @ params.U_h.T
        hh = np.tanh(y @ params.W_h.T + re * uh + params.b_h)
        h_new = (1.0 - ug) * h_prev + ug * hh
        m = mask[:, t:t + 1]
        h = m * h_new + (1.0 - m) * h_prev
        H[:, t] = h
        steps.append((h_prev, ug, re, uh, hh))
    return H, (Yhat, steps, mask)


def _gru_backward_batch(params: GruParams, cache, dH: np.ndarray, grads, prefix: str):
    """Backprop through the gated layer; returns gradient w.r.t. X."""
    Yhat, steps, mask = cache
    B, T, d3 = Yhat.shape
    d_in = d3 // 3
    dYhat = np.zeros_like(Yhat)
    carry = np.zeros((B, params.U_ug.shape[0]))
    for t in range(T - 1, -1, -1):
        h_prev, ug, re, uh, hh = steps[t]
        m = mask[:, t:t + 1]
        dh = dH[:, t] + carry
        dstep = m * dh
        dh_prev = (1.0 - m) * dh
        dug = dstep * (hh - h_prev)
        dhh = dstep * ug
        dh_prev += dstep * (1.0 - ug)
        da_h = dhh * (1.0 - hh * hh)
        y = Yhat[:, t]
        grads[f"{prefix}.W_h"] += da_h.T @ y
        grads[f"{prefix}.b_h"] += da_h.sum(axis=0)
        dre = da_h * uh
        duh = da_h * re
        grads[f"{prefix}.U_h"] += duh.T @ h_prev
        dh_prev += duh @ params.U_h
        da_re = dre * re * (1.0 - re)
        grads[f"{prefix}.W_re"] += da_re.T @ y
        grads[f"{prefix}.b_re"] += da_re.sum(axis=0)
        grads[f"{prefix}.U_re"] += da_re.T @ h_prev
        dh_prev += da_re @ params.U_re
        da_ug = dug * ug * (1.0 - ug)
        grads[f"{prefix}.W_ug"] += da_ug.T @ y
        grads[f"{prefix}.b_ug"] += da_ug.sum(axis=0)
        grads[f"{prefix}.U_ug"] += da_ug.T @ h_prev
        dh_prev += da_ug @ params.U_ug
        dYhat[:, t] = da_ug @ params.W_ug + da_re @ params.W_re + da_h @ params.W_h
        carry = dh_prev
    dX = dYhat[:, :, d_in:2 * d_in].copy()
    dX[:, :-1] += dYhat[:, 1:, :d_in]
    dX[:, 1:] += dYhat[:, :-1, 2 * d_in:]
    return dX


def _attn_forward_batch(attn: AttnParams, H: np.ndarray, mask: np.ndarray):
    U = np.tanh(H @ attn.W_a.T + attn.b_a)
    logits = U @ attn.ctx
    z = np.where(mask > 0, logits, -1e30)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax) * mask
    denom = e.sum(axis=1, keepdims=True)
    alpha = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
    pooled = np.einsum("bt,btd->bd", alpha, H)
    return pooled, alpha, (U, alpha, H, mask)


def _attn_backward_batch(attn: AttnParams, cache, dpooled: np.ndarray, grads, prefix: str):
    U, alpha, H, mask = cache
    dalpha = np.einsum("bd,btd->bt", dpooled, H)
    dH = alpha[:, :, None] * dpooled[:, None, :]
    s = (alpha * dalpha).sum(axis=1, keepdims=True)
    dlogits = alpha * (dalpha - s)
    dU = dlogits[:, :, None] * attn.ctx[None, None, :]
    grads[f"{prefix}.ctx"] += np.einsum("bt,btd->d", dlogits, U)
    da = dU * (1.0 - U * U)
    grads[f"{prefix}.W_a"] += np.einsum("btd,bte->de", da, H)
    grads[f"{prefix}.b_a"] += da.sum(axis=(0, 1))
    dH += da @ attn.W_a
    return dH


def _forward_batch(model: SentimentModel, ids, wmask, smask, caches: bool):
    B, S, T = ids.shape
    X = model.E[ids] * wmask[..., None]
    Xf = X.reshape(B * S, T, model.d_w)
    mf = wmask.reshape(B * S, T)
    Hw, gru_w_cache = _gru_forward_batch(model.word_gru, Xf, mf)
    svec_flat, _, attn_w_cache = _attn_forward_batch(model.word_attn, Hw, mf)
    Sv = svec_flat.reshape(B, S, model.d_h) * smask[..., None]
    Hs, gru_s_cache = _gru_forward_batch(model.sent_gru, Sv, smask)
    doc, sent_weights, attn_s_cache = _attn_forward_batch(model.sent_attn, Hs, smask)
    act = doc @ model.w_o + model.b_o[0]
    sig = _sigmoid(act)
    score = 1.0 + 4.0 * sig
    cache = None
    if caches:
        cache = (ids, wmask, smask, gru_w_cache, attn_w_cache,
                 gru_s_cache, attn_s_cache, doc, sig)
    return score, sent_weights, cache


def _backward_batch(model: SentimentModel, cache, dscore: np.ndarray, grads):
    (ids, wmask, smask, gru_w_cache, attn_w_cache,
     gru_s_cache, attn_s_cache, doc, sig) = cache
    B, S, T = ids.shape
    dact = dscore * 4.0 * sig * (1.0 - sig)
    grads["w_o"] += dact @ doc
    grads["b_o"] += np.array([dact.sum()])
    ddoc = dact[:, None] * model.w_o[None, :]
    dHs = _attn_backward_batch(model.sent_attn, attn_s_cache, ddoc, grads, "sa")
    dSv = _gru_backward_batch(model.sent_gru, gru_s_cache, dHs, grads, "s")
    dSv = dSv * smask[..., None]
    dHw = _attn_backward_batch(model.word_attn, attn_w_cache,
                               dSv.reshape(B * S, model.d_h), grads, "wa")
    dXf = _gru_backward_batch(model.word_gru, gru_w_cache, dHw, grads, "w")
    dX = dXf.reshape(B, S, T, model.d_w) * wmask[..., None]
    np.add.at(grads["E"], ids.reshape(-1), dX.reshape(-1, model.d_w))


def _zero_grads(model: SentimentModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.params().items()}


def review_loss_and_grads(model: SentimentModel, encoded: list[list[int]],
                          rating: float):
    """Loss 0.5 * (rating - score)^2 for one review, with full gradients."""
    ids, wmask, smask = _pad_batch([encoded], model.max_sentences, model.max_words)
    score, _, cache = _forward_batch(model, ids, wmask, smask, caches=True)
    loss = 0.5 * float((rating - score[0]) ** 2)
    grads = _zero_grads(model)
    _backward_batch(model, cache, np.array([score[0] - rating]), grads)
    return loss, grads


# ---------------------------------------------------------------------------
# public scoring / training


def score_review(model: SentimentModel, review: str) -> float:
    """Sentiment score of one review, strictly inside (1, 5)."""
    encoded = encode_review(model, review)
    ids, wmask, smask = _pad_batch([encoded], model.max_sentences, model.max_words)
    score, _, _ = _forward_batch(model, ids, wmask, smask, caches=False)
    return float(score[0])


def review_attention(model: SentimentModel, review: str
                     ) -> tuple[list[np.ndarray], np.ndarray]:
    """Word weights per sentence and the sentence weights for one review."""
    encoded = encode_review(model, review)
    ids, wmask, smask = _pad_batch([encoded], model.max_sentences, model.max_words)
    B, S, T = ids.shape
    X = model.E[ids] * wmask[..., None]
    Xf = X.reshape(B * S, T, model.d_w)
    mf = wmask.reshape(B * S, T)
    Hw, _ = _gru_forward_batch(model.word_gru, Xf, mf)
    svec_flat, word_alpha, _ = _attn_forward_batch(model.word_attn, Hw, mf)
    Sv = svec_flat.reshape(B, S, model.d_h) * smask[..., None]
    Hs, _ = _gru_forward_batch(model.sent_gru, Sv, smask)
    _, sent_alpha, _ = _attn_forward_batch(model.sent_attn, Hs, smask)
    word_weights = [word_alpha[s][wmask[0, s] > 0] for s in range(S)
                    if smask[0, s] > 0]
    return word_weights, sent_alpha[0][smask[0] > 0]


def score_dataset(model: SentimentModel, ds: Dataset,
                  batch_size: int = 256) -> np.ndarray:
    """Scores for every interaction's review, aligned with ds.interactions.

    Identical texts share one forward pass.
    """
    texts = [it.review for it in ds.interactions]
    unique = sorted(set(texts))
    scores: dict[str, float] = {}
    for start in range(0, len(unique), batch_size):
        chunk = unique[start:start + batch_size]
        encoded = [encode_review(model, t) for t in chunk]
        ids, wmask, smask = _pad_batch(encoded, model.max_sentences, model.max_words)
        out, _, _ = _forward_batch(model, ids, wmask, smask, caches=False)
        for text, s in zip(chunk, out):
            scores[text] = float(s)
    return np.array([scores[t] for t in texts])


def train_sentiment(model: SentimentModel, train: Dataset, lr: float = 0.05,
                    epochs: int = 50, seed: int = 0,
                    batch_size: int = 64) -> SentimentModel:
    """Fit the scorer to ratings with adaptive per-parameter steps.

    Shuffled mini-batches; every parameter keeps an accumulated squared
    gradient (started at 1e-8) and steps by lr * g / sqrt(acc).  Runs are
    deterministic under the seed.  Returns the same model object.
    """
    if not train.interactions:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(seed)
    encoded = [encode_review(model, it.review) for it in train.interactions]
    ratings = np.array([float(it.rating) for it in train.interactions])
    count = len(encoded)
    params = model.params()
    accum = {k: np.full_like(v, 1e-8) for k, v in params.items()}

    model.loss_history = []
    for epoch in range(epochs):
        order = rng.permutation(count)
        total = 0.0
        for start in range(0, count, batch_size):
            sel = order[start:start + batch_size]
            batch = [encoded[j] for j in sel]
            ids, wmask, smask = _pad_batch(batch, model.max_sentences, model.max_words)
            score, _, cache = _forward_batch(model, ids, wmask, smask, caches=True)
            err = score - ratings[sel]
            total += 0.5 * float(err @ err)
            grads = _zero_grads(model)
            _backward_batch(model, cache, err, grads)
            if lr != 0.0:
                for key, g in grads.items():
                    acc = accum[key]
                    acc += g * g
                    params[key] -= lr * g / np.sqrt(acc)
        if not np.isfinite(total):
            raise TrainingError(f"sentiment loss diverged at epoch {epoch}")
        model.loss_history.append(total)
    return model


def sentiment_loss(model: SentimentModel, ds: Dataset) -> float:
    """Half the summed squared rating error over a dataset."""
    scores = score_dataset(model, ds)
    ratings = np.array([float(it.rating) for it in ds.interactions])
    err = scores - ratings
    return 0.5 * float(err @ err)
