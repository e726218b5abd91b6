"""Co-purchase statistics and their weighted least-squares factorization.

Counts are distance weighted: every unordered pair of positions (a, b) in
one receipt contributes 1/|a-b| to its product pair, the whole receipt being
the window.  The factorizer learns two vector tables plus biases so that
w_i . wt_j + b_i + bt_j approximates ln X_ij under a capped power weight.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ParseError, ValidationError
from .io import read_checkpoint, write_checkpoint
from .numkit import Adagrad
from .validation import check_int, check_positive


class CooccurrenceTable:
    """Sparse symmetric pair counts, stored upper-triangle only."""

    def __init__(self, n_products: int):
        self.n_products = check_int(n_products, "n_products", minimum=1)
        self._data: dict[tuple[int, int], float] = {}

    def _key(self, i: int, j: int) -> tuple[int, int]:
        if i == j:
            raise ValidationError("diagonal co-occurrence entries are not allowed")
        if not (0 <= i < self.n_products and 0 <= j < self.n_products):
            raise ValidationError(f"product pair ({i}, {j}) out of range")
        return (i, j) if i < j else (j, i)

    def add(self, i: int, j: int, value: float) -> None:
        if not (value > 0.0 and math.isfinite(value)):
            raise ValidationError("co-occurrence increments must be positive and finite")
        key = self._key(i, j)
        self._data[key] = self._data.get(key, 0.0) + value

    def get(self, i: int, j: int) -> float:
        return self._data.get(self._key(i, j), 0.0)

    def pairs(self):
        """Stored (i, j, value) triples with i < j, in insertion order."""
        for (i, j), x in self._data.items():
            yield i, j, x

    def __len__(self) -> int:
        return len(self._data)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.n_products} {len(self._data)}\n")
            for (i, j) in sorted(self._data):
                fh.write(f"{i} {j} {self._data[(i, j)]:.17g}\n")

    @classmethod
    def load(cls, path) -> "CooccurrenceTable":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ParseError(f"{path}: malformed co-occurrence header", line=1)
            table = cls(int(header[0]))
            expected = int(header[1])
            for n, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise ParseError(f"{path}: expected 'i j value'", line=n)
                i, j, x = int(parts[0]), int(parts[1]), float(parts[2])
                if i >= j:
                    raise ParseError(f"{path}: expected i < j", line=n)
                key = table._key(i, j)
                if key in table._data:
                    raise ParseError(f"{path}: duplicate pair ({i}, {j})", line=n)
                if not (x > 0.0 and math.isfinite(x)):
                    raise ParseError(f"{path}: non-positive value", line=n)
                table._data[key] = x
        if len(table) != expected:
            raise ValidationError(f"{path}: header promises {expected} pairs, found {len(table)}")
        return table


def _accumulate(baskets, table: CooccurrenceTable) -> None:
    data = table._data
    n = table.n_products
    for basket in baskets:
        items = getattr(basket, "items", basket)
        length = len(items)
        for a in range(length):
            ia = items[a]
            if not 0 <= ia < n:
                raise ValidationError(f"product id {ia} out of range")
            for b in range(a + 1, length):
                ib = items[b]
                if ia == ib:
                    continue
                key = (ia, ib) if ia < ib else (ib, ia)
                data[key] = data.get(key, 0.0) + 1.0 / (b - a)


def build_cooccurrence(baskets, n_products: int, n_threads: int = 1) -> CooccurrenceTable:
    """Accumulate distance-weighted counts over encoded baskets.

    With n_threads > 1 the baskets are split into contiguous chunks whose
    partial tables are merged by summation in chunk order, so the result is
    identical to the sequential build.
    """
    n_threads = check_int(n_threads, "n_threads", minimum=1)
    baskets = list(baskets)
    table = CooccurrenceTable(n_products)
    if n_threads == 1 or len(baskets) < 2 * n_threads:
        _accumulate(baskets, table)
        return table
    chunk = (len(baskets) + n_threads - 1) // n_threads
    shards = [CooccurrenceTable(n_products) for _ in range(n_threads)]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        list(pool.map(lambda args: _accumulate(*args),
                      ((baskets[k * chunk:(k + 1) * chunk], shards[k])
                       for k in range(n_threads))))
    merged = table._data
    for shard in shards:
        for key, x in shard._data.items():
            merged[key] = merged.get(key, 0.0) + x
    return table


def weight_f(x: float, x_max: float = 100.0, alpha: float = 0.75) -> float:
    """Capped power weight; 1.0 at and beyond x_max."""
    if not (x > 0.0 and math.isfinite(x)):
        raise ValidationError("weight_f needs a positive finite count")
    if x >= x_max:
        return 1.0
    return (x / x_max) ** alpha


class CooccurrenceFactorization(BaseEstimator):
    """Product vectors from weighted least squares on log co-occurrence.

    Each stored pair contributes both orientations to the objective.  The
    delivered embedding is the sum of the two learned tables.
    """

    def __init__(self, n_dims: int = 128, epochs: int = 50, learning_rate: float = 1.0,
                 initial_accumulator: float = 0.1, x_max: float = 100.0,
                 alpha: float = 0.75, seed: int = 0):
        self.n_dims = n_dims
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.initial_accumulator = initial_accumulator
        self.x_max = x_max
        self.alpha = alpha
        self.seed = seed

    def _validate_params(self):
        check_int(self.n_dims, "n_dims", minimum=1)
        check_int(self.epochs, "epochs", minimum=1)
        check_positive(self.learning_rate, "learning_rate")
        check_positive(self.initial_accumulator, "initial_accumulator")
        check_positive(self.x_max, "x_max")
        check_positive(self.alpha, "alpha")
        check_int(self.seed, "seed", minimum=0)

    def initialize(self, n_products: int) -> "CooccurrenceFactorization":
        self._validate_params()
        n_products = check_int(n_products, "n_products", minimum=2)
        self._rng = np.random.default_rng(self.seed)
        half = 0.5 / self.n_dims
        self.main_vectors_ = self._rng.uniform(-half, half, size=(n_products, self.n_dims))
        self.context_vectors_ = self._rng.uniform(-half, half, size=(n_products, self.n_dims))
        self.main_bias_ = np.zeros(n_products, dtype=np.float64)
        self.context_bias_ = np.zeros(n_products, dtype=np.float64)
        self.n_products_ = n_products
        self.loss_history_ = []
        self._opts = {
            "w": Adagrad(self.main_vectors_.shape, self.learning_rate,
                         self.initial_accumulator),
            "wt": Adagrad(self.context_vectors_.shape, self.learning_rate,
                          self.initial_accumulator),
            "b": Adagrad(self.main_bias_.shape, self.learning_rate,
                         self.initial_accumulator),
            "bt": Adagrad(self.context_bias_.shape, self.learning_rate,
                          self.initial_accumulator),
        }
        return self

    def _pair_arrays(self, table: CooccurrenceTable):
        if len(table) == 0:
            raise ValidationError("empty co-occurrence table")
        triples = list(table.pairs())
        ii = np.array([t[0] for t in triples], dtype=np.int64)
        jj = np.array([t[1] for t in triples], dtype=np.int64)
        xx = np.array([t[2] for t in triples], dtype=np.float64)
        ff = np.array([weight_f(x, self.x_max, self.alpha) for x in xx])
        return ii, jj, ff, np.log(xx)

    def fit(self, X, y=None):
        """X is a CooccurrenceTable; per-pair Adagrad over shuffled pairs."""
        self._validate_params()
        table = X
        if not hasattr(self, "main_vectors_"):
            self.initialize(table.n_products)
        elif table.n_products != self.n_products_:
            raise ValidationError("table size does not match the initialized model")
        ii, jj, ff, log_x = self._pair_arrays(table)
        w, wt = self.main_vectors_, self.context_vectors_
        b, bt = self.main_bias_, self.context_bias_
        opts = self._opts
        for _ in range(self.epochs):
            order = self._rng.permutation(ii.shape[0])
            for idx in order:
                i, j = ii[idx], jj[idx]
                f, target = ff[idx], log_x[idx]
                # the two orientations touch disjoint rows (i != j always)
                for a, c in ((i, j), (j, i)):
                    r = 2.0 * f * (float(w[a] @ wt[c]) + b[a] + bt[c] - target)
                    gw = r * wt[c]
                    gwt = r * w[a]
                    opts["w"].step_row(w, a, gw)
                    opts["wt"].step_row(wt, c, gwt)
                    opts["b"].step_row(b, a, r)
                    opts["bt"].step_row(bt, c, r)
            self.loss_history_.append(self._objective(ii, jj, ff, log_x))
        return self

    def _objective(self, ii, jj, ff, log_x) -> float:
        w, wt = self.main_vectors_, self.context_vectors_
        b, bt = self.main_bias_, self.context_bias_
        r_fwd = np.einsum("nd,nd->n", w[ii], wt[jj]) + b[ii] + bt[jj] - log_x
        r_rev = np.einsum("nd,nd->n", w[jj], wt[ii]) + b[jj] + bt[ii] - log_x
        return float((ff * (r_fwd ** 2 + r_rev ** 2)).sum())

    def loss_and_gradients(self, table: CooccurrenceTable):
        """Full objective and dense gradients, for verification."""
        ii, jj, ff, log_x = self._pair_arrays(table)
        w, wt = self.main_vectors_, self.context_vectors_
        b, bt = self.main_bias_, self.context_bias_
        loss = self._objective(ii, jj, ff, log_x)
        g_w = np.zeros_like(w)
        g_wt = np.zeros_like(wt)
        g_b = np.zeros_like(b)
        g_bt = np.zeros_like(bt)
        for a, c in ((ii, jj), (jj, ii)):
            r = 2.0 * ff * (np.einsum("nd,nd->n", w[a], wt[c]) + b[a] + bt[c] - log_x)
            np.add.at(g_w, a, r[:, None] * wt[c])
            np.add.at(g_wt, c, r[:, None] * w[a])
            np.add.at(g_b, a, r)
            np.add.at(g_bt, c, r)
        return loss, {"main_vectors": g_w, "context_vectors": g_wt,
                      "main_bias": g_b, "context_bias": g_bt}

    def final_embeddings(self) -> np.ndarray:
        """The delivered representation: sum of the two tables."""
        return self.main_vectors_ + self.context_vectors_

    def save(self, path) -> None:
        meta = {"model": "cooccurrence_factorization", "params": self.get_params(),
                "n_products": self.n_products_, "loss_history": self.loss_history_}
        write_checkpoint(path, meta, {
            "main_vectors": self.main_vectors_,
            "context_vectors": self.context_vectors_,
            "main_bias": self.main_bias_,
            "context_bias": self.context_bias_,
        })

    @classmethod
    def load(cls, path) -> "CooccurrenceFactorization":
        meta, tensors = read_checkpoint(path)
        if meta.get("model") != "cooccurrence_factorization":
            raise ValidationError(f"{path}: not a cooccurrence_factorization checkpoint")
        model = cls(**meta["params"])
        model.main_vectors_ = tensors["main_vectors"]
        model.context_vectors_ = tensors["context_vectors"]
        model.main_bias_ = tensors["main_bias"].reshape(-1)
        model.context_bias_ = tensors["context_bias"].reshape(-1)
        model.n_products_ = model.main_vectors_.shape[0]
        model.loss_history_ = list(meta.get("loss_history", []))
        return model
