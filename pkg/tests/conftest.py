"""Shared fixtures: the curated toy corpus and predictors trained on it.

Corpus construction and training are the slow parts of the suite, so both
are session-scoped and memoized per seed.
"""

import pytest

from blockmol import diffusion
from blockmol.chem import Vocab
from blockmol.data import toy_tokens
from blockmol.fragment import FragmentConfig, pad_and_partition

CORPUS_SIZE = 500
TRAIN_L = 48
TRAIN_K = 8
TRAIN_DIM = 24
TRAIN_WINDOW = 12
TRAIN_LR = 0.1
TRAIN_EPOCHS = 5


@pytest.fixture(scope="session")
def toy500():
    return toy_tokens(CORPUS_SIZE)


@pytest.fixture(scope="session")
def vocab(toy500):
    return Vocab.build(toy500)


@pytest.fixture(scope="session")
def corpus(toy500, vocab):
    cfg = FragmentConfig(TRAIN_L, TRAIN_K)
    return [pad_and_partition(t, cfg, vocab) for t in toy500]


@pytest.fixture(scope="session")
def trained(vocab, corpus):
    """Factory: trained(seed) -> (params, history), memoized."""
    cache = {}

    def build(seed: int):
        if seed not in cache:
            params = diffusion.PredictorParams.init(
                len(vocab), dim=TRAIN_DIM, window=TRAIN_WINDOW, seed=seed)
            cache[seed] = diffusion.train(
                params, corpus, epochs=TRAIN_EPOCHS, lr=TRAIN_LR, seed=seed)
        return cache[seed]

    return build


@pytest.fixture(scope="session")
def distinct_prefixes(toy500):
    """Distinct first-block token prefixes of the corpus (block 0 holds BOS
    plus TRAIN_K - 1 tokens)."""
    seen, out = set(), []
    for toks in toy500:
        key = tuple(t.text for t in toks[: TRAIN_K - 1])
        if key not in seen:
            seen.add(key)
            out.append(list(toks[: TRAIN_K - 1]))
    return out
