"""Product embedding trainer: CBOW with concatenated context and full softmax.

The hidden layer is the concatenation of the context slots' embeddings, so
the output layer is a dense P x (c*D) matrix plus bias and the predictive
distribution is an exact softmax over the whole product vocabulary (no
sampling, no hierarchy).  Updates are per example with Adagrad.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ValidationError
from .io import read_checkpoint, write_checkpoint
from .numkit import Adagrad
from .validation import check_int, check_positive

_MASK = -1


def training_examples(items, context_size: int):
    """Expand one encoded basket into (target, context slots) pairs.

    Every position becomes a target once.  Its context is the rest of the
    basket ordered by in-receipt distance, ties broken toward the earlier
    position, truncated to `context_size` and padded with -1 masks.
    """
    c = check_int(context_size, "context_size", minimum=1)
    items = tuple(items)
    if len(items) < 2:
        raise ValidationError("a training basket needs at least 2 items")
    examples = []
    for t in range(len(items)):
        others = sorted((j for j in range(len(items)) if j != t),
                        key=lambda j: (abs(j - t), j))
        slots = [items[j] for j in others[:c]]
        slots.extend([_MASK] * (c - len(slots)))
        examples.append((items[t], tuple(slots)))
    return examples


def _example_arrays(baskets, context_size, with_users: bool):
    """Flatten baskets into dense target/context(/user) arrays.

    When with_users is set, anonymous baskets are skipped and the number of
    skipped baskets is reported alongside the arrays.
    """
    targets, contexts, users = [], [], []
    skipped = 0
    for basket in baskets:
        items = getattr(basket, "items", basket)
        if len(items) < 2:
            continue
        user = getattr(basket, "user", None)
        if with_users:
            if user is None:
                skipped += 1
                continue
            per_basket = training_examples(items, context_size)
            users.extend([user] * len(per_basket))
        else:
            per_basket = training_examples(items, context_size)
        for target, slots in per_basket:
            targets.append(target)
            contexts.append(slots)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    ctx = np.asarray(contexts, dtype=np.int64).reshape(-1, context_size) if targets else \
        np.empty((0, context_size), dtype=np.int64)
    u = np.asarray(users, dtype=np.int64).reshape(-1)
    return t, ctx, u, skipped


def _check_ids(targets, contexts, n_products: int, users=None, n_users=None):
    if targets.size == 0:
        raise ValidationError("no trainable baskets")
    if targets.min() < 0 or targets.max() >= n_products:
        raise ValidationError("target product id out of range")
    if contexts.max(initial=_MASK) >= n_products or contexts.min(initial=_MASK) < _MASK:
        raise ValidationError("context product id out of range")
    if users is not None and users.size:
        if users.min() < 0 or users.max() >= n_users:
            raise ValidationError("user id out of range")


def _sgd_epoch(order, targets, contexts, users, emb, emb_opt, out_w, out_w_opt,
               out_b, out_b_opt, user_emb, user_opt, buf):
    """One pass of per-example updates in the given order; returns mean loss.

    The user block (when present) occupies the leading slice of the hidden
    vector.  Repeated context products take sequential row updates, each
    seeing the accumulator state left by the previous one.
    """
    c = contexts.shape[1]
    dims = emb.shape[1]
    du = 0 if user_emb is None else user_emb.shape[1]
    h, scores, dh, g_w = buf["h"], buf["scores"], buf["dh"], buf["g_w"]
    total = 0.0
    for idx in order:
        t = targets[idx]
        ctx = contexts[idx]
        h[:] = 0.0
        if du:
            u = users[idx]
            h[:du] = user_emb[u]
        for s in range(c):
            p = ctx[s]
            if p >= 0:
                h[du + s * dims:du + (s + 1) * dims] = emb[p]
        np.dot(out_w, h, out=scores)
        scores += out_b
        m = scores.max()
        lt = scores[t] - m
        np.subtract(scores, m, out=scores)
        np.exp(scores, out=scores)
        z = scores.sum()
        total += math.log(z) - lt
        # scores now becomes the softmax error vector dz = p - onehot(t)
        np.divide(scores, z, out=scores)
        scores[t] -= 1.0
        # read W before updating it
        np.dot(out_w.T, scores, out=dh)
        np.multiply(scores[:, None], h[None, :], out=g_w)
        out_b_opt.step(out_b, scores)
        out_w_opt.step(out_w, g_w)
        if du:
            user_opt.step_row(user_emb, u, dh[:du])
        for s in range(c):
            p = ctx[s]
            if p >= 0:
                emb_opt.step_row(emb, p, dh[du + s * dims:du + (s + 1) * dims])
    return total / len(order)


def _batch_loss(targets, contexts, users, emb, out_w, out_b, user_emb):
    """Vectorized mean loss and dense gradients over a fixed batch.

    Used by gradient checks and diagnostics only, the training path applies
    per-example updates instead.  Repeated ids accumulate into shared rows.
    """
    n = targets.shape[0]
    if n == 0:
        raise ValidationError("empty batch")
    c = contexts.shape[1]
    dims = emb.shape[1]
    du = 0 if user_emb is None else user_emb.shape[1]
    hidden = np.zeros((n, du + c * dims), dtype=np.float64)
    if du:
        hidden[:, :du] = user_emb[users]
    mask = contexts >= 0
    for s in range(c):
        rows = np.nonzero(mask[:, s])[0]
        if rows.size:
            hidden[rows, du + s * dims:du + (s + 1) * dims] = emb[contexts[rows, s]]
    logits = hidden @ out_w.T + out_b
    shift = logits.max(axis=1, keepdims=True)
    expo = np.exp(logits - shift)
    z = expo.sum(axis=1)
    rows_all = np.arange(n)
    log_p_target = (logits[rows_all, targets] - shift[:, 0]) - np.log(z)
    loss = float(-log_p_target.mean())

    dz = expo / z[:, None]
    dz[rows_all, targets] -= 1.0
    dz /= n
    grads = {
        "output_bias": dz.sum(axis=0),
        "output_weights": dz.T @ hidden,
    }
    dh = dz @ out_w
    g_emb = np.zeros_like(emb)
    for s in range(c):
        rows = np.nonzero(mask[:, s])[0]
        if rows.size:
            np.add.at(g_emb, contexts[rows, s], dh[rows, du + s * dims:du + (s + 1) * dims])
    grads["embeddings"] = g_emb
    if du:
        g_user = np.zeros_like(user_emb)
        np.add.at(g_user, users, dh[:, :du])
        grads["user_embeddings"] = g_user
    return loss, grads


class ProductCBOW(BaseEstimator):
    """Learns one dense vector per product from co-purchase context.

    Parameters follow the sklearn convention: set in __init__, validated in
    fit.  The delivered representation is the input embedding table; the
    output layer exists only to shape training.
    """

    def __init__(self, n_dims: int = 128, context_size: int = 4, epochs: int = 50,
                 learning_rate: float = 1.0, initial_accumulator: float = 0.1,
                 seed: int = 0):
        self.n_dims = n_dims
        self.context_size = context_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.initial_accumulator = initial_accumulator
        self.seed = seed

    def _validate_params(self):
        check_int(self.n_dims, "n_dims", minimum=1)
        check_int(self.context_size, "context_size", minimum=1)
        check_int(self.epochs, "epochs", minimum=1)
        check_positive(self.learning_rate, "learning_rate")
        check_positive(self.initial_accumulator, "initial_accumulator")
        check_int(self.seed, "seed", minimum=0)

    def initialize(self, n_products: int) -> "ProductCBOW":
        """Allocate tensors: uniform(+-0.5/D) embeddings, zero output layer.

        The zero output layer makes the untrained predictive distribution
        exactly uniform, so the initial loss is ln(n_products).
        """
        self._validate_params()
        n_products = check_int(n_products, "n_products", minimum=2)
        self._rng = np.random.default_rng(self.seed)
        half = 0.5 / self.n_dims
        width = self.context_size * self.n_dims
        self.embeddings_ = self._rng.uniform(-half, half, size=(n_products, self.n_dims))
        self.output_weights_ = np.zeros((n_products, width), dtype=np.float64)
        self.output_bias_ = np.zeros(n_products, dtype=np.float64)
        self.n_products_ = n_products
        self.loss_history_ = []
        self.vocab_hash_ = None
        self._emb_opt = Adagrad(self.embeddings_.shape, self.learning_rate,
                                self.initial_accumulator)
        self._out_w_opt = Adagrad(self.output_weights_.shape, self.learning_rate,
                                  self.initial_accumulator)
        self._out_b_opt = Adagrad(self.output_bias_.shape, self.learning_rate,
                                  self.initial_accumulator)
        return self

    def _resolve_n_products(self, targets, contexts, vocab, n_products):
        if vocab is not None:
            return vocab.n_products
        if n_products is not None:
            return check_int(n_products, "n_products", minimum=2)
        if targets.size == 0:
            raise ValidationError("no trainable baskets")
        return int(max(targets.max(), contexts.max())) + 1

    def fit(self, X, y=None, vocab=None, n_products=None):
        """Train on encoded baskets (EncodedBasket objects or id tuples)."""
        self._validate_params()
        targets, contexts, _, _ = _example_arrays(X, self.context_size, with_users=False)
        if not hasattr(self, "embeddings_"):
            self.initialize(self._resolve_n_products(targets, contexts, vocab, n_products))
        elif not hasattr(self, "_emb_opt"):
            # model restored from a checkpoint: fresh optimizer state
            self._rng = np.random.default_rng(self.seed)
            self._emb_opt = Adagrad(self.embeddings_.shape, self.learning_rate,
                                    self.initial_accumulator)
            self._out_w_opt = Adagrad(self.output_weights_.shape, self.learning_rate,
                                      self.initial_accumulator)
            self._out_b_opt = Adagrad(self.output_bias_.shape, self.learning_rate,
                                      self.initial_accumulator)
        _check_ids(targets, contexts, self.n_products_)
        if vocab is not None:
            self.vocab_hash_ = vocab.content_hash()
        width = self.context_size * self.n_dims
        buf = {"h": np.empty(width), "scores": np.empty(self.n_products_),
               "dh": np.empty(width), "g_w": np.empty((self.n_products_, width))}
        for _ in range(self.epochs):
            order = self._rng.permutation(targets.shape[0])
            mean_loss = _sgd_epoch(order, targets, contexts, None,
                                   self.embeddings_, self._emb_opt,
                                   self.output_weights_, self._out_w_opt,
                                   self.output_bias_, self._out_b_opt,
                                   None, None, buf)
            self.loss_history_.append(float(mean_loss))
        self.n_examples_ = int(targets.shape[0])
        return self

    def loss_and_gradients(self, targets, contexts):
        """Mean loss and dense gradients for a batch, for verification."""
        targets = np.asarray(targets, dtype=np.int64).reshape(-1)
        contexts = np.asarray(contexts, dtype=np.int64)
        if contexts.ndim != 2 or contexts.shape[1] != self.context_size:
            raise ValidationError(
                f"contexts must be (n, {self.context_size}), got {contexts.shape}")
        _check_ids(targets, contexts, self.n_products_)
        return _batch_loss(targets, contexts, None, self.embeddings_,
                           self.output_weights_, self.output_bias_, None)

    def embedding_of(self, product: int) -> np.ndarray:
        if not hasattr(self, "embeddings_"):
            raise ValidationError("model is not initialized; call initialize or fit first")
        product = check_int(product, "product", minimum=0)
        if product >= self.n_products_:
            raise ValidationError(f"product id {product} out of range (P={self.n_products_})")
        return self.embeddings_[product].copy()

    def save(self, path) -> None:
        meta = {"model": "product_cbow", "params": self.get_params(),
                "n_products": self.n_products_, "vocab_hash": self.vocab_hash_,
                "loss_history": self.loss_history_}
        write_checkpoint(path, meta, {
            "embeddings": self.embeddings_,
            "output_weights": self.output_weights_,
            "output_bias": self.output_bias_,
        })

    @classmethod
    def load(cls, path) -> "ProductCBOW":
        meta, tensors = read_checkpoint(path)
        if meta.get("model") != "product_cbow":
            raise ValidationError(f"{path}: not a product_cbow checkpoint")
        model = cls(**meta["params"])
        model.embeddings_ = tensors["embeddings"]
        model.output_weights_ = tensors["output_weights"]
        model.output_bias_ = tensors["output_bias"].reshape(-1)
        model.n_products_ = model.embeddings_.shape[0]
        model.vocab_hash_ = meta.get("vocab_hash")
        model.loss_history_ = list(meta.get("loss_history", []))
        return model
