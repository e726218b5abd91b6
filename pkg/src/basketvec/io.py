"""Artifact serialization: checkpoint containers and text embedding tables.

A checkpoint is a single file holding a JSON header line followed by raw
tensors.  The header carries a format marker, arbitrary JSON metadata, and
a manifest of tensor names and shapes in storage order.  Float payloads are
written bit-exact, so save/load round-trips are byte identical.
"""

from __future__ import annotations

import json

import numpy as np

from .corpus import EncodedBasket
from .errors import ParseError, ValidationError
from .numkit import _read_matrix_fh, _write_matrix_fh

_MARKER = "basketvec-checkpoint"
_VERSION = 1


def write_checkpoint(path, meta: dict, tensors: dict) -> None:
    """Serialize `tensors` (name -> 1-D or 2-D float array) with JSON metadata."""
    try:
        json.dumps(meta)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"checkpoint metadata is not JSON serializable: {exc}") from None
    prepared = {}
    manifest = []
    for name, tensor in tensors.items():
        arr = np.asarray(tensor, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValidationError(f"tensor {name!r} must be 1-D or 2-D")
        prepared[name] = np.ascontiguousarray(arr)
        manifest.append({"name": name, "rows": int(arr.shape[0]), "cols": int(arr.shape[1])})
    header = {"format": _MARKER, "version": _VERSION, "meta": meta, "tensors": manifest}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for name in prepared:
            _write_matrix_fh(fh, prepared[name])


def read_checkpoint(path) -> tuple[dict, dict]:
    """Inverse of write_checkpoint; returns (meta, tensors)."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ValidationError(f"{path}: not a checkpoint file") from None
        if not isinstance(header, dict) or header.get("format") != _MARKER:
            raise ValidationError(f"{path}: not a checkpoint file")
        if header.get("version") != _VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
        tensors = {}
        for entry in header["tensors"]:
            arr = _read_matrix_fh(fh, context=f"{path}:{entry['name']}")
            if arr.shape != (entry["rows"], entry["cols"]):
                raise ValidationError(
                    f"{path}: tensor {entry['name']!r} shape {arr.shape} does not match manifest")
            tensors[entry["name"]] = arr
        if fh.read(1):
            raise ValidationError(f"{path}: trailing bytes after last tensor")
    return header["meta"], tensors


def write_encoded_corpus(path, baskets) -> None:
    """One basket per line: user id (or "-" for anonymous) then item ids."""
    with open(path, "w", encoding="utf-8") as fh:
        for b in baskets:
            user = "-" if b.user is None else str(b.user)
            fh.write(user + " " + " ".join(str(i) for i in b.items) + "\n")


def read_encoded_corpus(path) -> list[EncodedBasket]:
    baskets = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise ParseError(f"{path}: a basket needs a user field and 2+ items", line=n)
            try:
                user = None if parts[0] == "-" else int(parts[0])
                items = tuple(int(x) for x in parts[1:])
            except ValueError:
                raise ParseError(f"{path}: malformed encoded basket", line=n) from None
            baskets.append(EncodedBasket(user, items))
    return baskets


def write_embeddings_text(path, tokens, vectors) -> None:
    """Token-keyed embedding table: header "P D", then token + .17g floats."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValidationError("embedding table must be 2-D")
    if not np.isfinite(vectors).all():
        raise ValidationError("embedding table contains non-finite values")
    if len(tokens) != vectors.shape[0]:
        raise ValidationError(
            f"{len(tokens)} tokens but {vectors.shape[0]} embedding rows")
    for tok in tokens:
        if not tok or any(ch.isspace() for ch in tok):
            raise ValidationError(f"token {tok!r} is empty or contains whitespace")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{vectors.shape[0]} {vectors.shape[1]}\n")
        for tok, row in zip(tokens, vectors):
            fh.write(tok + " " + " ".join(f"{x:.17g}" for x in row) + "\n")


def read_embeddings_text(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValidationError(f"{path}: malformed embedding header")
        n, dims = int(header[0]), int(header[1])
        tokens = []
        vectors = np.empty((n, dims), dtype=np.float64)
        for i in range(n):
            parts = fh.readline().split()
            if len(parts) != dims + 1:
                raise ValidationError(f"{path}: malformed embedding row {i}")
            tokens.append(parts[0])
            vectors[i] = [float(x) for x in parts[1:]]
        if fh.readline().strip():
            raise ValidationError(f"{path}: trailing content after {n} rows")
    if not np.isfinite(vectors).all():
        raise ValidationError(f"{path}: non-finite embedding values")
    return tokens, vectors
