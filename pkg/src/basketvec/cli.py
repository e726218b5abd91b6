"""Command line pipeline: synth, ingest, train, cluster, basket, sales, export.

Every stage reads and writes named artifacts under one output directory, so
the full pipeline is a sequence of subcommands sharing --out.  Settings are
resolved flag-first, then config file (INI), then built-in defaults.  Exit
codes: 0 success, 2 user error, 1 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .cbow import ProductCBOW
from .concepts import ConceptKMeans
from .cooccur import CooccurrenceFactorization, build_cooccurrence
from .errors import BasketVecError, ValidationError
from .io import (read_checkpoint, read_embeddings_text, read_encoded_corpus,
                 write_embeddings_text, write_encoded_corpus)
from .numkit import read_matrix, write_matrix
from .recommend import EmbeddingSpace, market_basket
from .salesnet import (MODES, SalesRegressor, format_report, r2_score,
                       run_experiments, split_dataset, write_report_csv)
from .user_cbow import UserProductCBOW

log = logging.getLogger("basketvec")

_SOURCES = ("p2e", "prove", "u2e")


def load_config(path) -> dict:
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        try:
            parser.read_file(fh)
        except configparser.Error as exc:
            raise ValidationError(f"bad config file {path}: {exc}") from None
    return {section: dict(parser[section]) for section in parser.sections()}


def _cast_like(raw: str, default):
    """Parse a config string to the type of the built-in default."""
    if isinstance(default, bool):
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ValidationError(f"expected a number, got {raw!r}") from None
    return raw


class Settings:
    """Flag > config > default resolution for one parsed invocation."""

    def __init__(self, args):
        self.args = args
        self.config = load_config(args.config) if getattr(args, "config", None) else {}

    def get(self, section: str, key: str, default, flag: str | None = None):
        if flag is not None:
            override = getattr(self.args, flag, None)
            if override is not None:
                return override
        raw = self.config.get(section, {}).get(key)
        if raw is None:
            return default
        return _cast_like(raw, default)

    @property
    def out_dir(self) -> Path:
        out = Path(self.get("global", "out_dir", "out", flag="out"))
        out.mkdir(parents=True, exist_ok=True)
        return out

    @property
    def seed(self) -> int:
        return self.get("global", "seed", 0, flag="seed")

    @property
    def threads(self) -> int:
        if self.deterministic:
            return 1
        return self.get("global", "threads", 1, flag="threads")

    @property
    def deterministic(self) -> bool:
        return self.get("global", "deterministic", False, flag="deterministic")


def _write_loss_csv(path, losses) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(losses, start=1):
            fh.write(f"{epoch},{loss:.17g}\n")


def _load_vocab(out: Path) -> corpus_mod.Vocabulary:
    products = out / "products.vocab"
    users = out / "users.vocab"
    if not products.exists() or not users.exists():
        raise ValidationError(f"no ingested corpus under {out}, run ingest first")
    return corpus_mod.Vocabulary.load(products, users)


def _load_corpus(out: Path):
    path = out / "corpus.enc"
    if not path.exists():
        raise ValidationError(f"missing {path}, run ingest first")
    return read_encoded_corpus(path)


def _load_table(out: Path, name: str, tokens: list[str]) -> np.ndarray:
    """Text embedding table remapped into token order."""
    path = out / name
    if not path.exists():
        raise ValidationError(f"missing {path}, run the producing stage first")
    file_tokens, vectors = read_embeddings_text(path)
    if file_tokens == tokens:
        return vectors
    index = {tok: i for i, tok in enumerate(file_tokens)}
    missing = [tok for tok in tokens if tok not in index]
    if missing:
        raise ValidationError(f"{path} lacks embeddings for {len(missing)} tokens "
                              f"(first: {missing[0]!r})")
    return vectors[[index[tok] for tok in tokens]]


def cmd_synth(settings: Settings) -> int:
    get = lambda key, default, flag: settings.get("synth", key, default, flag=flag)
    spec = corpus_mod.SyntheticSpec(
        n_groups=get("n_groups", 5, "n_groups"),
        products_per_group=get("products_per_group", 20, "products_per_group"),
        n_users=get("n_users", 100, "n_users"),
        n_baskets=get("n_baskets", 1000, "n_baskets"),
        basket_len_range=(get("min_items", 2, "min_items"),
                          get("max_items", 6, "max_items")),
        within_group_prob=get("within_group_prob", 0.9, "within_group_prob"),
        user_group_affinity=get("user_group_affinity", 0.8, "user_group_affinity"),
        spend_base=get("spend_base", 10.0, "spend_base"),
        seed=settings.seed,
    )
    baskets, product_group, user_group = corpus_mod.generate_synthetic(spec)
    rows, _ = corpus_mod.synthetic_spend(baskets, product_group, spec)
    out = settings.out_dir
    with open(out / "transactions.jsonl", "w", encoding="utf-8") as fh:
        for b in baskets:
            fh.write(json.dumps({"tx": b.transaction_id, "user": b.user_id,
                                 "items": list(b.items)}) + "\n")
    with open(out / "product_groups.csv", "w", encoding="utf-8") as fh:
        fh.write("product,group\n")
        for tok, group in product_group.items():
            fh.write(f"{tok},{group}\n")
    with open(out / "user_groups.csv", "w", encoding="utf-8") as fh:
        fh.write("user,group\n")
        for tok, group in user_group.items():
            fh.write(f"{tok},{group}\n")
    with open(out / "spend.csv", "w", encoding="utf-8") as fh:
        fh.write("user,product,amount\n")
        for user, product, amount in rows:
            fh.write(f"{user},{product},{amount:.17g}\n")
    print(f"baskets={len(baskets)} products={spec.n_products} "
          f"users={spec.n_users} spend_rows={len(rows)}")
    return 0


def cmd_ingest(settings: Settings) -> int:
    out = settings.out_dir
    path = getattr(settings.args, "transactions", None) or str(out / "transactions.jsonl")
    fmt = settings.get("corpus", "format", "jsonl", flag="format")
    min_count = settings.get("corpus", "min_count", 1, flag="min_count")
    strict = settings.get("corpus", "strict", False, flag="strict")
    baskets = corpus_mod.parse_transactions(path, format=fmt)
    trainable = corpus_mod.filter_trainable(baskets)
    vocab = corpus_mod.build_vocabulary(trainable, min_count=min_count)
    encoded = corpus_mod.encode_baskets(trainable, vocab, strict=strict)
    vocab.save(out / "products.vocab", out / "users.vocab")
    write_encoded_corpus(out / "corpus.enc", encoded)
    print(f"baskets={len(baskets)} singletons_dropped={len(baskets) - len(trainable)} "
          f"products={vocab.n_products} users={vocab.n_users} encoded={len(encoded)}")
    return 0


def _train_p2e(settings: Settings, out, vocab, encoded) -> None:
    model = ProductCBOW(
        n_dims=settings.get("p2e", "dims", 128, flag="dims"),
        context_size=settings.get("p2e", "context_size", 4),
        epochs=settings.get("p2e", "epochs", 50, flag="epochs"),
        learning_rate=settings.get("p2e", "learning_rate", 1.0),
        initial_accumulator=settings.get("p2e", "initial_accumulator", 0.1),
        seed=settings.seed,
    )
    model.fit(encoded, vocab=vocab)
    model.save(out / "p2e.ckpt")
    write_embeddings_text(out / "p2e.txt", vocab.product_tokens, model.embeddings_)
    _write_loss_csv(out / "p2e.loss.csv", model.loss_history_)
    print(f"stage=p2e examples={model.n_examples_} "
          f"final_loss={model.loss_history_[-1]:.6f}")


def _train_prove(settings: Settings, out, vocab, encoded) -> None:
    table = build_cooccurrence(encoded, vocab.n_products, n_threads=settings.threads)
    table.save(out / "prove.cooc.txt")
    model = CooccurrenceFactorization(
        n_dims=settings.get("prove", "dims", 128, flag="dims"),
        epochs=settings.get("prove", "epochs", 50, flag="epochs"),
        learning_rate=settings.get("prove", "learning_rate", 1.0),
        initial_accumulator=settings.get("prove", "initial_accumulator", 0.1),
        x_max=settings.get("prove", "x_max", 100.0),
        alpha=settings.get("prove", "alpha", 0.75),
        seed=settings.seed,
    )
    model.fit(table)
    model.save(out / "prove.ckpt")
    write_embeddings_text(out / "prove.txt", vocab.product_tokens,
                          model.final_embeddings())
    _write_loss_csv(out / "prove.loss.csv", model.loss_history_)
    print(f"stage=prove pairs={len(table)} final_loss={model.loss_history_[-1]:.6f}")


def _train_u2e(settings: Settings, out, vocab, encoded) -> None:
    model = UserProductCBOW(
        user_dims=settings.get("u2e", "user_dims", 32),
        product_dims=settings.get("u2e", "product_dims", 128, flag="dims"),
        context_size=settings.get("u2e", "context_size", 4),
        epochs=settings.get("u2e", "epochs", 50, flag="epochs"),
        learning_rate=settings.get("u2e", "learning_rate", 1.0),
        initial_accumulator=settings.get("u2e", "initial_accumulator", 0.1),
        seed=settings.seed,
    )
    model.fit(encoded, vocab=vocab)
    model.save(out / "u2e.ckpt")
    write_embeddings_text(out / "u2e.txt", vocab.product_tokens,
                          model.product_embeddings_)
    write_embeddings_text(out / "u2e.users.txt", vocab.user_tokens,
                          model.user_embeddings_)
    _write_loss_csv(out / "u2e.loss.csv", model.loss_history_)
    min_tx = settings.get("u2e", "min_transactions", 5)
    passing = len(model.optimized_users(min_tx))
    print(f"stage=u2e anonymous_skipped={model.skipped_anonymous_} "
          f"optimized_users={passing}/{model.n_users_} (min_transactions={min_tx}) "
          f"final_loss={model.loss_history_[-1]:.6f}")


def cmd_train(settings: Settings) -> int:
    out = settings.out_dir
    vocab = _load_vocab(out)
    encoded = _load_corpus(out)
    stage = settings.args.stage
    if stage == "p2e":
        _train_p2e(settings, out, vocab, encoded)
    elif stage == "prove":
        _train_prove(settings, out, vocab, encoded)
    elif stage == "u2e":
        _train_u2e(settings, out, vocab, encoded)
    else:
        raise ValidationError(f"unknown stage {stage!r}")
    return 0


def cmd_cluster(settings: Settings) -> int:
    out = settings.out_dir
    vocab = _load_vocab(out)
    source = settings.get("concepts", "source", "p2e", flag="source")
    if source not in _SOURCES:
        raise ValidationError(f"source must be one of {_SOURCES}")
    vectors = _load_table(out, f"{source}.txt", vocab.product_tokens)
    model = ConceptKMeans(
        n_clusters=settings.get("concepts", "k", 5, flag="k"),
        seed=settings.seed,
        max_iters=settings.get("concepts", "max_iters", 100),
        normalize=settings.get("concepts", "normalize", False, flag="normalize"),
    )
    labels = model.fit_predict(vectors)
    write_matrix(out / "concepts.centroids.mat", model.centroids_)
    with open(out / "concepts.assignments.csv", "w", encoding="utf-8") as fh:
        fh.write("product,concept\n")
        for tok, label in zip(vocab.product_tokens, labels):
            fh.write(f"{tok},{label}\n")
    meta = {"source": source, "k": model.n_clusters, "normalize": model.normalize,
            "inertia": model.inertia_, "iterations": model.n_iter_}
    with open(out / "concepts.meta.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
    print(f"clusters={model.n_clusters} inertia={model.inertia_:.6f} "
          f"iterations={model.n_iter_}")
    return 0


def _load_concepts(out: Path):
    meta_path = out / "concepts.meta.json"
    if not meta_path.exists():
        raise ValidationError(f"missing {meta_path}, run cluster first")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    centroids = read_matrix(out / "concepts.centroids.mat")
    return ConceptKMeans.from_centroids(centroids, normalize=meta["normalize"]), meta


def cmd_basket(settings: Settings) -> int:
    out = settings.out_dir
    concepts, meta = _load_concepts(out)
    vocab = _load_vocab(out)
    vectors = _load_table(out, f"{meta['source']}.txt", vocab.product_tokens)
    space = EmbeddingSpace(vectors, vocab.product_tokens)
    query = space.id_of(settings.args.product)
    k = settings.args.k
    entries = market_basket(space, concepts, query, k,
                            over_fetch=settings.args.over_fetch)
    payload = {"query": settings.args.product, "k": k,
               "basket": [{"product": vocab.product_tokens[e.product],
                           "similarity": e.similarity, "concept": e.concept}
                          for e in entries]}
    print(json.dumps(payload, sort_keys=True))
    return 0


def _load_spend(out: Path, vocab) -> tuple[np.ndarray, np.ndarray]:
    path = out / "spend.csv"
    if not path.exists():
        raise ValidationError(f"missing {path}")
    pairs, amounts = [], []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "user,product,amount":
            raise ValidationError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            user_tok, product_tok, amount = line.split(",")
            user = vocab.user_index.get(user_tok)
            product = vocab.product_index.get(product_tok)
            if user is None or product is None:
                skipped += 1
                continue
            pairs.append((user, product))
            amounts.append(float(amount))
    if not pairs:
        raise ValidationError(f"{path}: no spend rows map into the vocabulary")
    if skipped:
        log.warning("skipped %d spend rows with out-of-vocabulary tokens", skipped)
    return np.array(pairs, dtype=np.int64), np.array(amounts, dtype=np.float64)


def cmd_sales(settings: Settings) -> int:
    out = settings.out_dir
    vocab = _load_vocab(out)
    x, y = _load_spend(out, vocab)
    source = settings.get("salesnet", "products", "p2e", flag="products")
    if source not in _SOURCES:
        raise ValidationError(f"products source must be one of {_SOURCES}")
    user_init = _load_table(out, "u2e.users.txt", vocab.user_tokens)
    prod_init = _load_table(out, f"{source}.txt", vocab.product_tokens)
    epochs = settings.get("salesnet", "epochs", 35, flag="epochs")
    learning_rate = settings.get("salesnet", "learning_rate", 0.0025)
    batch_size = settings.get("salesnet", "batch_size", 512, flag="batch_size")
    test_fraction = settings.get("salesnet", "test_fraction", 0.1, flag="test_fraction")
    mode_arg = settings.args.mode
    if mode_arg == "all":
        rows, models = run_experiments(
            x, y, user_init, prod_init, epochs=epochs, learning_rate=learning_rate,
            batch_size=batch_size, test_fraction=test_fraction, seed=settings.seed)
        write_report_csv(rows, out / "report.csv")
        report = format_report(rows)
        with open(out / "report.txt", "w", encoding="utf-8") as fh:
            fh.write(report + "\n")
        for mode_id, model in models.items():
            model.save(out / f"sales.mode{mode_id}.ckpt")
        print(report)
    else:
        mode = MODES[int(mode_arg)]
        x_train, y_train, x_test, y_test = split_dataset(x, y, test_fraction,
                                                         settings.seed)
        model = SalesRegressor(
            user_embeddings_init=user_init, product_embeddings_init=prod_init,
            continue_user=mode.continue_user, continue_prod=mode.continue_prod,
            epochs=epochs, learning_rate=learning_rate, batch_size=batch_size,
            seed=settings.seed)
        model.fit(x_train, y_train)
        r2 = r2_score(model.predict(x_test), y_test)
        model.save(out / f"sales.mode{mode.id}.ckpt")
        print(f"mode={mode.id} continue_user={mode.continue_user} "
              f"continue_prod={mode.continue_prod} r2={r2:.6f}")
    return 0


def cmd_export(settings: Settings) -> int:
    out = settings.out_dir
    vocab = _load_vocab(out)
    meta, tensors = read_checkpoint(settings.args.checkpoint)
    kind = meta.get("model")
    table = settings.args.table
    if kind == "product_cbow":
        tokens, vectors = vocab.product_tokens, tensors["embeddings"]
    elif kind == "cooccurrence_factorization":
        tokens = vocab.product_tokens
        vectors = tensors["main_vectors"] + tensors["context_vectors"]
    elif kind == "user_product_cbow":
        if table == "user":
            tokens, vectors = vocab.user_tokens, tensors["user_embeddings"]
        else:
            tokens, vectors = vocab.product_tokens, tensors["product_embeddings"]
    else:
        raise ValidationError(f"cannot export embeddings from a {kind!r} checkpoint")
    if len(tokens) != vectors.shape[0]:
        raise ValidationError("checkpoint size does not match the vocabulary")
    write_embeddings_text(settings.args.output, tokens, vectors)
    print(f"exported {vectors.shape[0]} x {vectors.shape[1]} to {settings.args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="INI config file with per-stage sections")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="artifact directory (default: out)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                        default=argparse.SUPPRESS,
                        help="force single-threaded, bitwise-reproducible runs")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(
        prog="basketvec", parents=[common],
        description="Product/user embeddings, basket generation and spend prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a planted-group synthetic corpus")
    p.add_argument("--n-groups", type=int, dest="n_groups")
    p.add_argument("--products-per-group", type=int, dest="products_per_group")
    p.add_argument("--n-users", type=int, dest="n_users")
    p.add_argument("--n-baskets", type=int, dest="n_baskets")
    p.add_argument("--min-items", type=int, dest="min_items")
    p.add_argument("--max-items", type=int, dest="max_items")
    p.add_argument("--within-group-prob", type=float, dest="within_group_prob")
    p.add_argument("--user-group-affinity", type=float, dest="user_group_affinity")
    p.add_argument("--spend-base", type=float, dest="spend_base")

    p = sub.add_parser("ingest", parents=[common],
                       help="parse transactions, build vocabulary, encode corpus")
    p.add_argument("--transactions", help="input file (default: <out>/transactions.jsonl)")
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--min-count", type=int, dest="min_count")
    p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=None)

    p = sub.add_parser("train", parents=[common], help="train one embedding stage")
    p.add_argument("--stage", choices=_SOURCES, required=True)
    p.add_argument("--dims", type=int)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("cluster", parents=[common],
                       help="k-means concepts over trained embeddings")
    p.add_argument("--k", type=int)
    p.add_argument("--source", choices=_SOURCES)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=None)

    p = sub.add_parser("basket", parents=[common],
                       help="complementary products for one query")
    p.add_argument("--product", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--over-fetch", action="store_true", dest="over_fetch")

    p = sub.add_parser("sales", parents=[common],
                       help="train the spend regressor (one mode or all four)")
    p.add_argument("--mode", choices=("1", "2", "3", "4", "all"), default="all")
    p.add_argument("--products", choices=_SOURCES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--test-fraction", type=float, dest="test_fraction")

    p = sub.add_parser("export", parents=[common],
                       help="write a checkpoint's embeddings as text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--table", choices=("product", "user"), default="product")

    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "cluster": cmd_cluster,
    "basket": cmd_basket,
    "sales": cmd_sales,
    "export": cmd_export,
}


def main(argv=None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                            format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return _COMMANDS[args.command](Settings(args))
    except BasketVecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # pragma: no cover - internal failure path
        import traceback
        traceback.print_exc()
        return 1


def entrypoint() -> None:
    sys.exit(main())
