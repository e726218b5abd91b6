"""Product and user embeddings from retail transaction streams.

Trainers for three embedding flavors (context prediction, joint user and
product training, co-occurrence factorization), k-means concept discovery,
complementary basket generation, and a feedforward spend regressor, all
deterministic under explicit seeds.
"""

from .cbow import ProductCBOW, training_examples
from .concepts import ConceptKMeans
from .cooccur import (CooccurrenceFactorization, CooccurrenceTable,
                      build_cooccurrence, weight_f)
from .corpus import (Basket, EncodedBasket, SyntheticSpec, Vocabulary,
                     build_vocabulary, encode_baskets, filter_trainable,
                     generate_synthetic, parse_transactions, synthetic_spend)
from .errors import BasketVecError, ParseError, ValidationError
from .numkit import Adagrad, Adam, check_gradient, softmax
from .recommend import (BasketEntry, EmbeddingSpace, combine_embeddings,
                        cosine_similarity, market_basket, top_k_similar,
                        top_k_similar_to_vector)
from .salesnet import (MODES, ExperimentMode, SalesRegressor, r2_score,
                       run_experiments, split_dataset)
from .user_cbow import UserProductCBOW

__version__ = "0.1.0"

__all__ = [
    "Adagrad", "Adam", "Basket", "BasketEntry", "BasketVecError",
    "ConceptKMeans", "CooccurrenceFactorization", "CooccurrenceTable",
    "EmbeddingSpace", "EncodedBasket", "ExperimentMode", "MODES", "ParseError",
    "ProductCBOW", "SalesRegressor", "SyntheticSpec", "UserProductCBOW",
    "ValidationError", "Vocabulary", "build_cooccurrence", "build_vocabulary",
    "check_gradient", "combine_embeddings", "cosine_similarity",
    "encode_baskets", "filter_trainable", "generate_synthetic", "market_basket",
    "parse_transactions", "r2_score", "run_experiments", "softmax",
    "split_dataset", "synthetic_spend", "top_k_similar",
    "top_k_similar_to_vector", "training_examples", "weight_f",
]
