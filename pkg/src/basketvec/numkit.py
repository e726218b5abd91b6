"""Dense float64 kernels shared by all trainers.

Numerically stable softmax, Adagrad and Adam parameter updates, a central
finite-difference gradient checker, and the on-disk matrix formats.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .errors import ValidationError

_HEADER = struct.Struct("<qq")  # rows, cols as little-endian int64


def softmax(logits) -> np.ndarray:
    """Probabilities along the last axis, computed with a max shift."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValidationError("softmax requires finite logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class Adagrad:
    """Per-tensor Adagrad state.

    The accumulator starts strictly positive, so the update needs no
    epsilon in the denominator.  `step` mutates `params` in place:
    acc += g^2, then params -= lr * g / sqrt(acc).
    """

    def __init__(self, shape, learning_rate: float = 1.0, initial_accumulator: float = 0.1):
        if learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if initial_accumulator <= 0:
            raise ValidationError("initial_accumulator must be positive")
        self.learning_rate = float(learning_rate)
        self.initial_accumulator = float(initial_accumulator)
        self.accumulator = np.full(shape, float(initial_accumulator))

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if params.shape != grads.shape or params.shape != self.accumulator.shape:
            raise ValidationError("parameter/gradient shape mismatch")
        self.accumulator += grads * grads
        params -= self.learning_rate * grads / np.sqrt(self.accumulator)
        return params

    def step_row(self, params: np.ndarray, row, grad) -> None:
        """Sparse update of a single row (or element, for 1-D tensors)."""
        acc = self.accumulator[row] + grad * grad
        self.accumulator[row] = acc
        params[row] -= self.learning_rate * grad / np.sqrt(acc)


class Adam:
    """Per-tensor Adam state with the standard bias correction."""

    def __init__(self, shape, learning_rate: float = 0.0025, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        if learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValidationError("betas must lie in [0, 1)")
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if params.shape != grads.shape or params.shape != self.m.shape:
            raise ValidationError("parameter/gradient shape mismatch")
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grads
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
        return params


def check_gradient(f, analytic_grad, point, eps: float = 1e-5) -> float:
    """Compare an analytic gradient against central finite differences.

    Returns the max over coordinates of |a - n| / max(1, |a|, |n|) where
    n = (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps).
    """
    x = np.array(point, dtype=np.float64)
    g = np.asarray(analytic_grad, dtype=np.float64)
    if g.shape != x.shape:
        raise ValidationError("gradient/point shape mismatch")
    worst = 0.0
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(f(x))
        flat[i] = orig - eps
        f_minus = float(f(x))
        flat[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ValidationError("objective returned a non-finite value")
        numeric = (f_plus - f_minus) / (2.0 * eps)
        denom = max(1.0, abs(gflat[i]), abs(numeric))
        err = abs(gflat[i] - numeric) / denom
        if err > worst:
            worst = err
    return worst


def write_matrix(path, matrix) -> None:
    """Binary layout: int64 rows, int64 cols, then row-major float64, all little-endian."""
    a = np.ascontiguousarray(matrix, dtype="<f8")
    if a.ndim != 2:
        raise ValidationError("write_matrix expects a 2-D array")
    with open(path, "wb") as fh:
        _write_matrix_fh(fh, a)


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return _read_matrix_fh(fh)


def _write_matrix_fh(fh, a: np.ndarray) -> None:
    a = np.ascontiguousarray(a, dtype="<f8")
    if not np.all(np.isfinite(a)):
        raise ValidationError("refusing to write non-finite matrix entries")
    fh.write(_HEADER.pack(a.shape[0], a.shape[1]))
    fh.write(a.tobytes())


def _read_matrix_fh(fh, context: str = "matrix") -> np.ndarray:
    head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise ValidationError(f"{context}: truncated matrix header")
    rows, cols = _HEADER.unpack(head)
    if rows < 0 or cols < 0:
        raise ValidationError(f"{context}: invalid matrix shape ({rows}, {cols})")
    data = fh.read(rows * cols * 8)
    if len(data) != rows * cols * 8:
        raise ValidationError(f"{context}: truncated matrix data")
    a = np.frombuffer(data, dtype="<f8").reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{context}: non-finite entries")
    return a


def write_matrix_text(path, matrix) -> None:
    """One row per line, space-separated, 17 significant digits."""
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise ValidationError("write_matrix_text expects a 2-D array")
    with open(path, "w", encoding="utf-8") as fh:
        for row in a:
            fh.write(" ".join(format(v, ".17g") for v in row))
            fh.write("\n")


def read_matrix_text(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split()])
    a = np.asarray(rows, dtype=np.float64)
    if a.ndim != 2:
        raise ValidationError("matrix text file is empty or ragged")
    return a
