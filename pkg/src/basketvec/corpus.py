"""Transaction data model: receipts, vocabulary, encoding, and file ingestion.

A receipt ("basket") is an ordered list of product tokens plus an optional
customer id.  One-item receipts carry no co-purchase information and are
excluded from every training corpus.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError
from .validation import check_int, check_positive, check_probability

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Basket:
    """One receipt: ordered product tokens plus an optional customer id."""

    transaction_id: str
    user_id: str | None
    items: tuple[str, ...]


@dataclass(frozen=True)
class EncodedBasket:
    """A receipt after vocabulary encoding; tokens replaced by dense ids."""

    user: int | None
    items: tuple[int, ...]


class Vocabulary:
    """Bidirectional token/index maps for products and users.

    Product indices are dense 0..P-1 in first-appearance order, restricted
    to tokens whose occurrence count reaches `min_count`.  Users are indexed
    the same way but never filtered.
    """

    def __init__(self, product_tokens, product_counts, user_tokens, user_counts,
                 min_count: int = 1):
        self.product_tokens = list(product_tokens)
        self.product_counts = list(product_counts)
        self.user_tokens = list(user_tokens)
        self.user_counts = list(user_counts)
        self.min_count = min_count
        self.product_index = {tok: i for i, tok in enumerate(self.product_tokens)}
        self.user_index = {tok: i for i, tok in enumerate(self.user_tokens)}
        if len(self.product_index) != len(self.product_tokens):
            raise ValidationError("duplicate product tokens in vocabulary")
        if len(self.user_index) != len(self.user_tokens):
            raise ValidationError("duplicate user tokens in vocabulary")

    @property
    def n_products(self) -> int:
        return len(self.product_tokens)

    @property
    def n_users(self) -> int:
        return len(self.user_tokens)

    def content_hash(self) -> str:
        """Stable hex digest of the full token/index/count content."""
        h = hashlib.sha256()
        for tok, cnt in zip(self.product_tokens, self.product_counts):
            h.update(f"p\t{tok}\t{cnt}\n".encode("utf-8"))
        for tok, cnt in zip(self.user_tokens, self.user_counts):
            h.update(f"u\t{tok}\t{cnt}\n".encode("utf-8"))
        return h.hexdigest()

    def save(self, products_path, users_path) -> None:
        """One `token<TAB>index<TAB>count` line per entry."""
        for path, tokens, counts in ((products_path, self.product_tokens, self.product_counts),
                                     (users_path, self.user_tokens, self.user_counts)):
            with open(path, "w", encoding="utf-8") as fh:
                for i, (tok, cnt) in enumerate(zip(tokens, counts)):
                    fh.write(f"{tok}\t{i}\t{cnt}\n")

    @classmethod
    def load(cls, products_path, users_path, min_count: int = 1) -> "Vocabulary":
        def read(path):
            tokens, counts = [], []
            with open(path, encoding="utf-8") as fh:
                for n, line in enumerate(fh, start=1):
                    line = line.rstrip("\n")
                    if not line:
                        continue
                    parts = line.split("\t")
                    if len(parts) != 3:
                        raise ParseError(f"expected 'token<TAB>index<TAB>count' in {path}", line=n)
                    tok, idx, cnt = parts
                    if int(idx) != len(tokens):
                        raise ParseError(f"non-dense index {idx} in {path}", line=n)
                    tokens.append(tok)
                    counts.append(int(cnt))
            return tokens, counts

        p_tok, p_cnt = read(products_path)
        u_tok, u_cnt = read(users_path)
        return cls(p_tok, p_cnt, u_tok, u_cnt, min_count=min_count)


def parse_transactions(path, format: str = "jsonl") -> list[Basket]:
    """Read receipts from a JSONL or CSV export, preserving file and item order.

    No filtering happens here; singleton baskets are kept and removed later
    by `filter_trainable`.
    """
    if format == "jsonl":
        return _parse_jsonl(path)
    if format == "csv":
        return _parse_csv(path)
    raise ValidationError(f"unknown transactions format {format!r}")


def _parse_jsonl(path) -> list[Basket]:
    baskets = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=n) from None
            if not isinstance(record, dict):
                raise ParseError("record is not a JSON object", line=n)
            tx = record.get("tx")
            if not isinstance(tx, str) or not tx:
                raise ParseError("missing or invalid 'tx' field", line=n)
            user = record.get("user")
            if user is not None and not isinstance(user, str):
                raise ParseError("'user' must be a string when present", line=n)
            items = record.get("items")
            if not isinstance(items, list) or not items or not all(
                    isinstance(it, str) and it for it in items):
                raise ParseError("'items' must be a non-empty list of product tokens", line=n)
            baskets.append(Basket(tx, user, tuple(items)))
    return baskets


_CSV_FIELDS = ("transaction_id", "user_id", "product", "position")


def _parse_csv(path) -> list[Basket]:
    order: list[str] = []
    rows: dict[str, list[tuple[int, str]]] = {}
    users: dict[str, str | None] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        if tuple(reader.fieldnames) != _CSV_FIELDS:
            raise ParseError(
                f"expected header {','.join(_CSV_FIELDS)}, got {','.join(reader.fieldnames)}",
                line=1)
        for record in reader:
            n = reader.line_num
            tx = record["transaction_id"]
            if not tx:
                raise ParseError("empty transaction_id", line=n)
            user = record["user_id"] or None
            try:
                pos = int(record["position"])
            except (TypeError, ValueError):
                raise ParseError(f"invalid position {record['position']!r}", line=n) from None
            product = record["product"]
            if not product:
                raise ParseError("empty product token", line=n)
            if tx not in rows:
                order.append(tx)
                rows[tx] = []
                users[tx] = user
            elif users[tx] != user:
                raise ParseError(f"transaction {tx!r} has conflicting user ids", line=n)
            if any(p == pos for p, _ in rows[tx]):
                raise ParseError(f"duplicate position {pos} in transaction {tx!r}", line=n)
            rows[tx].append((pos, product))
    baskets = []
    for tx in order:
        items = tuple(product for _, product in sorted(rows[tx]))
        baskets.append(Basket(tx, users[tx], items))
    return baskets


def filter_trainable(baskets) -> list[Basket]:
    """Drop singleton receipts; order is preserved and the call is idempotent."""
    return [b for b in baskets if len(b.items) >= 2]


def build_vocabulary(baskets, min_count: int = 1) -> Vocabulary:
    """Index products (first-appearance order, count >= min_count) and users."""
    min_count = check_int(min_count, "min_count", minimum=1)
    baskets = list(baskets)
    if not baskets:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    product_counts: dict[str, int] = {}
    user_counts: dict[str, int] = {}
    for b in baskets:
        for tok in b.items:
            product_counts[tok] = product_counts.get(tok, 0) + 1
        if b.user_id is not None:
            user_counts[b.user_id] = user_counts.get(b.user_id, 0) + 1
    kept = [(tok, cnt) for tok, cnt in product_counts.items() if cnt >= min_count]
    if not kept:
        raise ValidationError("empty vocabulary: no product reaches min_count")
    return Vocabulary(
        product_tokens=[tok for tok, _ in kept],
        product_counts=[cnt for _, cnt in kept],
        user_tokens=list(user_counts.keys()),
        user_counts=list(user_counts.values()),
        min_count=min_count,
    )


def encode_baskets(baskets, vocab: Vocabulary, strict: bool = False) -> list[EncodedBasket]:
    """Replace tokens by vocabulary ids.

    Unknown products are dropped (real feeds contain discontinued SKUs);
    baskets left with fewer than 2 items are removed.  With strict=True any
    unknown token raises instead.
    """
    encoded = []
    warned: set[str] = set()
    for b in baskets:
        items = []
        for tok in b.items:
            idx = vocab.product_index.get(tok)
            if idx is None:
                if strict:
                    raise ValidationError(f"unknown product token {tok!r}")
                if tok not in warned:
                    warned.add(tok)
                    log.warning("dropping unknown product token %r", tok)
                continue
            items.append(idx)
        if len(items) < 2:
            continue
        user = None
        if b.user_id is not None:
            user = vocab.user_index.get(b.user_id)
            if user is None:
                if strict:
                    raise ValidationError(f"unknown user token {b.user_id!r}")
                if b.user_id not in warned:
                    warned.add(b.user_id)
                    log.warning("dropping unknown user token %r", b.user_id)
        encoded.append(EncodedBasket(user, tuple(items)))
    return encoded


def decode_items(items, vocab: Vocabulary) -> tuple[str, ...]:
    """Inverse of product encoding for one id sequence."""
    return tuple(vocab.product_tokens[i] for i in items)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the planted-group synthetic corpus generator.

    Products are partitioned into groups; each basket picks a seed product
    from its user's affine group with probability `user_group_affinity`,
    then fills the remaining slots from the seed's group with probability
    `within_group_prob`, otherwise uniformly from all products.
    """

    n_groups: int = 5
    products_per_group: int = 20
    n_users: int = 100
    n_baskets: int = 1000
    basket_len_range: tuple[int, int] = (2, 6)
    within_group_prob: float = 0.9
    user_group_affinity: float = 0.8
    spend_base: float = 10.0
    seed: int = 0

    def validate(self) -> None:
        check_int(self.n_groups, "n_groups", minimum=1)
        check_int(self.products_per_group, "products_per_group", minimum=1)
        check_int(self.n_users, "n_users", minimum=1)
        check_int(self.n_baskets, "n_baskets", minimum=1)
        lo, hi = self.basket_len_range
        check_int(lo, "basket_len_range.min", minimum=2)
        check_int(hi, "basket_len_range.max", minimum=lo)
        check_probability(self.within_group_prob, "within_group_prob")
        check_probability(self.user_group_affinity, "user_group_affinity")
        check_positive(self.spend_base, "spend_base")
        check_int(self.seed, "seed", minimum=0)

    @property
    def n_products(self) -> int:
        return self.n_groups * self.products_per_group


def _synthetic_names(spec: SyntheticSpec) -> tuple[list[str], list[str]]:
    products = [f"p{i:04d}" for i in range(spec.n_products)]
    users = [f"u{i:04d}" for i in range(spec.n_users)]
    return products, users


def generate_synthetic(spec: SyntheticSpec):
    """Deterministic planted-group corpus.

    Returns (baskets, product_group, user_group) where the two maps are the
    ground truth oracles used by the test suite.  No singleton baskets are
    generated (basket_len_range.min >= 2).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    products, users = _synthetic_names(spec)
    ppg = spec.products_per_group
    product_group = {tok: i // ppg for i, tok in enumerate(products)}
    user_group = {tok: int(g) for tok, g in zip(users, rng.integers(0, spec.n_groups, size=spec.n_users))}

    lo, hi = spec.basket_len_range
    baskets = []
    for b in range(spec.n_baskets):
        user = users[int(rng.integers(0, spec.n_users))]
        length = int(rng.integers(lo, hi + 1))
        if rng.random() < spec.user_group_affinity:
            seed_group = user_group[user]
        else:
            seed_group = int(rng.integers(0, spec.n_groups))
        items = [products[seed_group * ppg + int(rng.integers(0, ppg))]]
        for _ in range(length - 1):
            if rng.random() < spec.within_group_prob:
                items.append(products[seed_group * ppg + int(rng.integers(0, ppg))])
            else:
                items.append(products[int(rng.integers(0, spec.n_products))])
        baskets.append(Basket(f"t{b:06d}", user, tuple(items)))
    return baskets, product_group, user_group


def synthetic_spend(baskets, product_group: dict[str, int], spec: SyntheticSpec):
    """Per-(user, product) spend targets for the sales regressor.

    amount = group base price * (1 + user multiplier), one row per distinct
    (user, product) pair in first-appearance order.  Group g's base price is
    spend_base * (1 + g); user multipliers are drawn once from U(0, 2) on a
    stream derived from the corpus seed, so user identity carries real
    predictive power.

    Returns (rows, user_multiplier) with rows of (user, product, amount).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed + 1)
    _, users = _synthetic_names(spec)
    multipliers = {tok: float(m) for tok, m in zip(users, rng.uniform(0.0, 2.0, size=spec.n_users))}

    rows = []
    seen: set[tuple[str, str]] = set()
    for b in baskets:
        if b.user_id is None or b.user_id not in multipliers:
            continue
        for tok in b.items:
            key = (b.user_id, tok)
            if key in seen:
                continue
            seen.add(key)
            price = spec.spend_base * (1.0 + product_group[tok])
            rows.append((b.user_id, tok, price * (1.0 + multipliers[b.user_id])))
    return rows, multipliers
