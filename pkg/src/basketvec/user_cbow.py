"""Joint user and product embedding trainer.

Same architecture as the product trainer except the hidden layer gains a
leading user slot: h = concat(user vector, c context product embeddings).
The user vector is trained jointly and is never masked; baskets without a
customer id are excluded from this stage.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .cbow import _batch_loss, _check_ids, _example_arrays, _sgd_epoch
from .errors import ValidationError
from .io import read_checkpoint, write_checkpoint
from .numkit import Adagrad
from .validation import check_int, check_positive


class UserProductCBOW(BaseEstimator):
    """Learns user vectors and product vectors in one pass.

    User vectors live in a narrower space than product vectors by default
    (32 vs 128) so they can feed the spend regressor unchanged.
    """

    def __init__(self, user_dims: int = 32, product_dims: int = 128,
                 context_size: int = 4, epochs: int = 50, learning_rate: float = 1.0,
                 initial_accumulator: float = 0.1, seed: int = 0):
        self.user_dims = user_dims
        self.product_dims = product_dims
        self.context_size = context_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.initial_accumulator = initial_accumulator
        self.seed = seed

    def _validate_params(self):
        check_int(self.user_dims, "user_dims", minimum=1)
        check_int(self.product_dims, "product_dims", minimum=1)
        check_int(self.context_size, "context_size", minimum=1)
        check_int(self.epochs, "epochs", minimum=1)
        check_positive(self.learning_rate, "learning_rate")
        check_positive(self.initial_accumulator, "initial_accumulator")
        check_int(self.seed, "seed", minimum=0)

    def initialize(self, n_products: int, n_users: int) -> "UserProductCBOW":
        """Allocate tensors; product rows are drawn first, then user rows."""
        self._validate_params()
        n_products = check_int(n_products, "n_products", minimum=2)
        n_users = check_int(n_users, "n_users", minimum=1)
        self._rng = np.random.default_rng(self.seed)
        width = self.user_dims + self.context_size * self.product_dims
        self.product_embeddings_ = self._rng.uniform(
            -0.5 / self.product_dims, 0.5 / self.product_dims,
            size=(n_products, self.product_dims))
        self.user_embeddings_ = self._rng.uniform(
            -0.5 / self.user_dims, 0.5 / self.user_dims, size=(n_users, self.user_dims))
        self.output_weights_ = np.zeros((n_products, width), dtype=np.float64)
        self.output_bias_ = np.zeros(n_products, dtype=np.float64)
        self.n_products_ = n_products
        self.n_users_ = n_users
        self.loss_history_ = []
        self.vocab_hash_ = None
        self.skipped_anonymous_ = 0
        self.user_example_counts_ = np.zeros(n_users, dtype=np.int64)
        self.user_transaction_counts_ = np.zeros(n_users, dtype=np.int64)
        self._prod_opt = Adagrad(self.product_embeddings_.shape, self.learning_rate,
                                 self.initial_accumulator)
        self._user_opt = Adagrad(self.user_embeddings_.shape, self.learning_rate,
                                 self.initial_accumulator)
        self._out_w_opt = Adagrad(self.output_weights_.shape, self.learning_rate,
                                  self.initial_accumulator)
        self._out_b_opt = Adagrad(self.output_bias_.shape, self.learning_rate,
                                  self.initial_accumulator)
        return self

    def fit(self, X, y=None, vocab=None, n_products=None, n_users=None):
        """Train on encoded baskets that carry a user id; others are skipped."""
        self._validate_params()
        X = list(X)
        targets, contexts, users, skipped = _example_arrays(
            X, self.context_size, with_users=True)
        if targets.size == 0:
            raise ValidationError("no trainable baskets with a user id")
        if not hasattr(self, "product_embeddings_"):
            if vocab is not None:
                p, u = vocab.n_products, vocab.n_users
            else:
                p = n_products if n_products is not None else int(
                    max(targets.max(), contexts.max())) + 1
                u = n_users if n_users is not None else int(users.max()) + 1
            self.initialize(p, u)
        _check_ids(targets, contexts, self.n_products_, users, self.n_users_)
        if vocab is not None:
            self.vocab_hash_ = vocab.content_hash()
        self.skipped_anonymous_ += skipped
        # one transaction per surviving basket, examples revisit every epoch
        for basket in X:
            user = getattr(basket, "user", None)
            items = getattr(basket, "items", basket)
            if user is not None and len(items) >= 2:
                self.user_transaction_counts_[user] += 1
        np.add.at(self.user_example_counts_, users, self.epochs)
        width = self.user_dims + self.context_size * self.product_dims
        buf = {"h": np.empty(width), "scores": np.empty(self.n_products_),
               "dh": np.empty(width), "g_w": np.empty((self.n_products_, width))}
        for _ in range(self.epochs):
            order = self._rng.permutation(targets.shape[0])
            mean_loss = _sgd_epoch(order, targets, contexts, users,
                                   self.product_embeddings_, self._prod_opt,
                                   self.output_weights_, self._out_w_opt,
                                   self.output_bias_, self._out_b_opt,
                                   self.user_embeddings_, self._user_opt, buf)
            self.loss_history_.append(float(mean_loss))
        self.n_examples_ = int(targets.shape[0])
        return self

    def loss_and_gradients(self, users, targets, contexts):
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        targets = np.asarray(targets, dtype=np.int64).reshape(-1)
        contexts = np.asarray(contexts, dtype=np.int64)
        if contexts.ndim != 2 or contexts.shape[1] != self.context_size:
            raise ValidationError(
                f"contexts must be (n, {self.context_size}), got {contexts.shape}")
        if users.shape[0] != targets.shape[0]:
            raise ValidationError("users and targets length mismatch")
        _check_ids(targets, contexts, self.n_products_, users, self.n_users_)
        loss, grads = _batch_loss(targets, contexts, users, self.product_embeddings_,
                                  self.output_weights_, self.output_bias_,
                                  self.user_embeddings_)
        grads["product_embeddings"] = grads.pop("embeddings")
        return loss, grads

    def optimized_users(self, min_transactions: int = 5) -> set[int]:
        """Users with enough receipts for their vector to be trusted."""
        min_transactions = check_int(min_transactions, "min_transactions", minimum=1)
        hits = np.nonzero(self.user_transaction_counts_ >= min_transactions)[0]
        return {int(u) for u in hits}

    def embedding_of(self, product: int) -> np.ndarray:
        if not hasattr(self, "product_embeddings_"):
            raise ValidationError("model is not initialized; call initialize or fit first")
        product = check_int(product, "product", minimum=0)
        if product >= self.n_products_:
            raise ValidationError(f"product id {product} out of range (P={self.n_products_})")
        return self.product_embeddings_[product].copy()

    def user_embedding_of(self, user: int) -> np.ndarray:
        if not hasattr(self, "user_embeddings_"):
            raise ValidationError("model is not initialized; call initialize or fit first")
        user = check_int(user, "user", minimum=0)
        if user >= self.n_users_:
            raise ValidationError(f"user id {user} out of range (U={self.n_users_})")
        return self.user_embeddings_[user].copy()

    def save(self, path) -> None:
        meta = {"model": "user_product_cbow", "params": self.get_params(),
                "n_products": self.n_products_, "n_users": self.n_users_,
                "vocab_hash": self.vocab_hash_, "loss_history": self.loss_history_,
                "skipped_anonymous": self.skipped_anonymous_}
        write_checkpoint(path, meta, {
            "product_embeddings": self.product_embeddings_,
            "user_embeddings": self.user_embeddings_,
            "output_weights": self.output_weights_,
            "output_bias": self.output_bias_,
            "user_example_counts": self.user_example_counts_.astype(np.float64),
            "user_transaction_counts": self.user_transaction_counts_.astype(np.float64),
        })

    @classmethod
    def load(cls, path) -> "UserProductCBOW":
        meta, tensors = read_checkpoint(path)
        if meta.get("model") != "user_product_cbow":
            raise ValidationError(f"{path}: not a user_product_cbow checkpoint")
        model = cls(**meta["params"])
        model.product_embeddings_ = tensors["product_embeddings"]
        model.user_embeddings_ = tensors["user_embeddings"]
        model.output_weights_ = tensors["output_weights"]
        model.output_bias_ = tensors["output_bias"].reshape(-1)
        model.user_example_counts_ = tensors["user_example_counts"].reshape(-1).astype(np.int64)
        model.user_transaction_counts_ = (
            tensors["user_transaction_counts"].reshape(-1).astype(np.int64))
        model.n_products_ = model.product_embeddings_.shape[0]
        model.n_users_ = model.user_embeddings_.shape[0]
        model.vocab_hash_ = meta.get("vocab_hash")
        model.loss_history_ = list(meta.get("loss_history", []))
        model.skipped_anonymous_ = int(meta.get("skipped_anonymous", 0))
        return model
