import numpy as np
import pytest

import basketvec as bv


@pytest.fixture(scope="session")
def planted():
    """Small planted-group corpus shared by the trainer tests.

    3 groups x 8 products, 1500 baskets.  Big enough that group structure
    is recoverable, small enough that a handful of training epochs stays
    under a second or two.
    """
    spec = bv.SyntheticSpec(n_groups=3, products_per_group=8, n_users=30,
                            n_baskets=1500, within_group_prob=0.9,
                            user_group_affinity=0.8, seed=5)
    baskets, product_group, user_group = bv.generate_synthetic(spec)
    vocab = bv.build_vocabulary(baskets)
    encoded = bv.encode_baskets(baskets, vocab)
    return {
        "spec": spec,
        "baskets": baskets,
        "vocab": vocab,
        "encoded": encoded,
        "product_group": product_group,
        "user_group": user_group,
        "group_of_id": np.array([product_group[t] for t in vocab.product_tokens]),
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(123)
