"""Per-(user, product) spend regression on top of pretrained embeddings.

The network concatenates one user row and one product row, passes the
result through two ReLU layers and a single linear readout, and trains with
mini-batch Adam on mean squared error.  Four experiment modes control which
of the two embedding tables keeps training: a frozen table is bitwise
untouched for the whole run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ValidationError
from .io import read_checkpoint, write_checkpoint
from .numkit import Adam
from .validation import check_int, check_matrix, check_positive


@dataclass(frozen=True)
class ExperimentMode:
    """One row of the freeze/continue experiment grid."""

    id: int
    continue_user: bool
    continue_prod: bool

    @classmethod
    def by_id(cls, mode_id: int) -> "ExperimentMode":
        if mode_id not in MODES:
            raise ValidationError(f"mode must be one of 1..4, got {mode_id}")
        return MODES[mode_id]


MODES = {
    1: ExperimentMode(1, False, False),
    2: ExperimentMode(2, False, True),
    3: ExperimentMode(3, True, False),
    4: ExperimentMode(4, True, True),
}


def r2_score(predictions, targets) -> float:
    """Coefficient of determination, 1 - SS_res/SS_tot."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ValidationError("predictions and targets length mismatch")
    if t.shape[0] < 2:
        raise ValidationError("r2_score needs at least 2 targets")
    mean = t.mean()
    ss_tot = float(((t - mean) ** 2).sum())
    if ss_tot == 0.0:
        raise ValidationError("r2_score is undefined for constant targets")
    ss_res = float(((t - p) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def split_dataset(X, y, test_fraction: float = 0.1, seed: int = 0):
    """Seeded row shuffle into train and held-out parts."""
    X = np.asarray(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError("X must be (n, 2) with one target per row")
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError("test_fraction must be in (0, 1)")
    n = X.shape[0]
    n_test = min(n - 1, max(1, int(round(n * test_fraction))))
    perm = np.random.default_rng(seed).permutation(n)
    test, train = perm[:n_test], perm[n_test:]
    return X[train], y[train], X[test], y[test]


def _he_uniform(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class SalesRegressor(BaseEstimator):
    """Feedforward spend predictor over (user id, product id) pairs.

    The embedding tables are copied from the supplied initial matrices, so
    callers can hand the same arrays to several regressors and compare
    freeze modes on equal footing.
    """

    def __init__(self, user_embeddings_init=None, product_embeddings_init=None,
                 continue_user: bool = True, continue_prod: bool = True,
                 hidden1: int | None = None, hidden2: int | None = None,
                 epochs: int = 35, learning_rate: float = 0.0025,
                 batch_size: int = 512, seed: int = 0):
        self.user_embeddings_init = user_embeddings_init
        self.product_embeddings_init = product_embeddings_init
        self.continue_user = continue_user
        self.continue_prod = continue_prod
        self.hidden1 = hidden1
        self.hidden2 = hidden2
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def _validate_params(self):
        check_int(self.epochs, "epochs", minimum=1)
        check_positive(self.learning_rate, "learning_rate")
        check_int(self.batch_size, "batch_size", minimum=1)
        check_int(self.seed, "seed", minimum=0)
        if self.hidden1 is not None:
            check_int(self.hidden1, "hidden1", minimum=1)
        if self.hidden2 is not None:
            check_int(self.hidden2, "hidden2", minimum=1)

    def _check_dataset(self, X, y=None):
        if not hasattr(self, "user_table_"):
            raise ValidationError("model is not initialized; call initialize or fit first")
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValidationError("X must be (n, 2) integer (user, product) pairs")
        if not np.issubdtype(X.dtype, np.integer):
            raise ValidationError("X must hold integer ids")
        X = X.astype(np.int64, copy=False)
        if X.shape[0] == 0:
            raise ValidationError("empty dataset")
        if X[:, 0].min() < 0 or X[:, 0].max() >= self.user_table_.shape[0]:
            raise ValidationError("user id outside the embedding table")
        if X[:, 1].min() < 0 or X[:, 1].max() >= self.product_table_.shape[0]:
            raise ValidationError("product id outside the embedding table")
        if y is None:
            return X, None
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ValidationError("X and y length mismatch")
        if not np.isfinite(y).all():
            raise ValidationError("targets must be finite")
        if y.min() < 0.0:
            raise ValidationError("spend targets must be nonnegative")
        return X, y

    def _setup(self):
        self._validate_params()
        if self.user_embeddings_init is None or self.product_embeddings_init is None:
            raise ValidationError("both embedding init tables are required")
        self.user_table_ = check_matrix(self.user_embeddings_init, "user embeddings").copy()
        self.product_table_ = check_matrix(self.product_embeddings_init,
                                           "product embeddings").copy()
        rng = np.random.default_rng(self.seed)
        d_in = self.user_table_.shape[1] + self.product_table_.shape[1]
        h1 = self.hidden1 if self.hidden1 is not None else d_in
        h2 = self.hidden2 if self.hidden2 is not None else max(1, d_in // 2)
        self.w1_ = _he_uniform(rng, d_in, h1)
        self.b1_ = np.zeros(h1, dtype=np.float64)
        self.w2_ = _he_uniform(rng, h1, h2)
        self.b2_ = np.zeros(h2, dtype=np.float64)
        self.w3_ = _he_uniform(rng, h2, 1)
        self.b3_ = np.zeros(1, dtype=np.float64)
        self.loss_history_ = []
        return rng

    def _forward(self, users, prods):
        e = np.concatenate([self.user_table_[users], self.product_table_[prods]], axis=1)
        z1 = e @ self.w1_ + self.b1_
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ self.w2_ + self.b2_
        a2 = np.maximum(z2, 0.0)
        pred = (a2 @ self.w3_ + self.b3_)[:, 0]
        return e, z1, a1, z2, a2, pred

    def _backward(self, batch, e, z1, a1, z2, a2, pred, y):
        users, prods = batch[:, 0], batch[:, 1]
        n = y.shape[0]
        dpred = (2.0 / n) * (pred - y)
        g = {}
        g["w3"] = a2.T @ dpred[:, None]
        g["b3"] = np.array([dpred.sum()])
        da2 = dpred[:, None] @ self.w3_.T
        dz2 = da2 * (z2 > 0.0)
        g["w2"] = a1.T @ dz2
        g["b2"] = dz2.sum(axis=0)
        da1 = dz2 @ self.w2_.T
        dz1 = da1 * (z1 > 0.0)
        g["w1"] = e.T @ dz1
        g["b1"] = dz1.sum(axis=0)
        du = self.user_table_.shape[1]
        de = dz1 @ self.w1_.T
        if self.continue_user:
            g_user = np.zeros_like(self.user_table_)
            np.add.at(g_user, users, de[:, :du])
            g["user_table"] = g_user
        if self.continue_prod:
            g_prod = np.zeros_like(self.product_table_)
            np.add.at(g_prod, prods, de[:, du:])
            g["prod_table"] = g_prod
        return g

    def _tensor(self, name):
        return {"w1": self.w1_, "b1": self.b1_, "w2": self.w2_, "b2": self.b2_,
                "w3": self.w3_, "b3": self.b3_, "user_table": self.user_table_,
                "prod_table": self.product_table_}[name]

    def fit(self, X, y):
        rng = self._setup()
        X, y = self._check_dataset(X, y)
        trainable = ["w1", "b1", "w2", "b2", "w3", "b3"]
        if self.continue_user:
            trainable.append("user_table")
        if self.continue_prod:
            trainable.append("prod_table")
        opts = {name: Adam(self._tensor(name).shape, self.learning_rate)
                for name in trainable}
        n = X.shape[0]
        for _ in range(self.epochs):
            perm = rng.permutation(n)
            sq_err_sum = 0.0
            for start in range(0, n, self.batch_size):
                batch = X[perm[start:start + self.batch_size]]
                yb = y[perm[start:start + self.batch_size]]
                e, z1, a1, z2, a2, pred = self._forward(batch[:, 0], batch[:, 1])
                sq_err_sum += float(((pred - yb) ** 2).sum())
                grads = self._backward(batch, e, z1, a1, z2, a2, pred, yb)
                for name in trainable:
                    opts[name].step(self._tensor(name), grads[name])
            self.loss_history_.append(sq_err_sum / n)
        return self

    def predict(self, X) -> np.ndarray:
        X, _ = self._check_dataset(X)
        return self._forward(X[:, 0], X[:, 1])[-1]

    def loss_and_gradients(self, X, y):
        """Full-batch loss and gradients for the trainable tensors only."""
        X, y = self._check_dataset(X, y)
        e, z1, a1, z2, a2, pred = self._forward(X[:, 0], X[:, 1])
        loss = float(((pred - y) ** 2).mean())
        return loss, self._backward(X, e, z1, a1, z2, a2, pred, y)

    def initialize(self) -> "SalesRegressor":
        """Build tables and dense layers without training (for inspection)."""
        self._setup()
        return self

    def save(self, path) -> None:
        params = {k: v for k, v in self.get_params().items()
                  if k not in ("user_embeddings_init", "product_embeddings_init")}
        meta = {"model": "sales_regressor", "params": params,
                "loss_history": self.loss_history_}
        write_checkpoint(path, meta, {
            "user_table": self.user_table_, "prod_table": self.product_table_,
            "w1": self.w1_, "b1": self.b1_, "w2": self.w2_, "b2": self.b2_,
            "w3": self.w3_, "b3": self.b3_,
        })

    @classmethod
    def load(cls, path) -> "SalesRegressor":
        meta, tensors = read_checkpoint(path)
        if meta.get("model") != "sales_regressor":
            raise ValidationError(f"{path}: not a sales_regressor checkpoint")
        model = cls(**meta["params"])
        model.user_table_ = tensors["user_table"]
        model.product_table_ = tensors["prod_table"]
        model.w1_ = tensors["w1"]
        model.b1_ = tensors["b1"].reshape(-1)
        model.w2_ = tensors["w2"]
        model.b2_ = tensors["b2"].reshape(-1)
        model.w3_ = tensors["w3"]
        model.b3_ = tensors["b3"].reshape(-1)
        model.loss_history_ = list(meta.get("loss_history", []))
        return model


def run_experiments(X, y, user_init, prod_init, epochs: int = 35,
                    learning_rate: float = 0.0025, batch_size: int = 512,
                    test_fraction: float = 0.1, seed: int = 0,
                    hidden1: int | None = None, hidden2: int | None = None):
    """Train all four freeze modes from identical inits and one shared split.

    Returns (rows, models): rows are dicts with mode id, the two flags and
    the held-out r2; models maps mode id to the trained regressor.
    """
    user_init = check_matrix(user_init, "user embeddings")
    prod_init = check_matrix(prod_init, "product embeddings")
    x_train, y_train, x_test, y_test = split_dataset(X, y, test_fraction, seed)
    rows = []
    models = {}
    for mode_id in sorted(MODES):
        mode = MODES[mode_id]
        model = SalesRegressor(
            user_embeddings_init=user_init, product_embeddings_init=prod_init,
            continue_user=mode.continue_user, continue_prod=mode.continue_prod,
            hidden1=hidden1, hidden2=hidden2, epochs=epochs,
            learning_rate=learning_rate, batch_size=batch_size, seed=seed)
        model.fit(x_train, y_train)
        r2 = r2_score(model.predict(x_test), y_test)
        rows.append({"mode": mode_id, "continue_user": mode.continue_user,
                     "continue_prod": mode.continue_prod, "r2": r2})
        models[mode_id] = model
    return rows, models


def write_report_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("mode,continue_user,continue_prod,r2\n")
        for row in rows:
            fh.write(f"{row['mode']},{str(row['continue_user']).lower()},"
                     f"{str(row['continue_prod']).lower()},{row['r2']:.17g}\n")


def format_report(rows) -> str:
    lines = ["mode  continue_user  continue_prod  r2",
             "----  -------------  -------------  ------"]
    for row in rows:
        lines.append(f"{row['mode']:>4}  {'yes' if row['continue_user'] else 'no':>13}  "
                     f"{'yes' if row['continue_prod'] else 'no':>13}  {row['r2']:.4f}")
    return "\n".join(lines)
