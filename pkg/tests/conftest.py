import numpy as np
import pytest

from mvr.records import CaptionRecord, TokenizedCaption
from mvr.vectors import EmbeddingVector

from mock_servers import ChatHandler, EmbedHandler, MockServer

WORD_POOL = (
    "man woman jacket coat shirt trousers jeans shoes sneakers hair bag "
    "backpack red blue black white green tall short young walking looking "
    "carrying striped plaid leather denim glasses hat scarf umbrella phone"
).split()


def engineered_caption(raw_sims, words=None, caption_id="cap") -> TokenizedCaption:
    """Token vectors built so cos(token_i, sentence) equals raw_sims[i].

    Sentence vector is the first basis direction; each token vector lives in
    the plane spanned by it and a fresh orthogonal axis.
    """
    n = len(raw_sims)
    words = words or [WORD_POOL[i % len(WORD_POOL)] for i in range(n)]
    dim = n + 1
    sentence = np.zeros(dim)
    sentence[0] = 1.0
    tokens = []
    for i, sim in enumerate(raw_sims):
        v = np.zeros(dim)
        v[0] = sim
        v[i + 1] = np.sqrt(max(0.0, 1.0 - sim * sim))
        tokens.append(EmbeddingVector(v))
    return TokenizedCaption(
        caption=CaptionRecord(id=caption_id, person_id="p0", text=" ".join(words)),
        words=tuple(words),
        token_vectors=tuple(tokens),
        sentence_vector=EmbeddingVector(sentence),
    )


def random_tokenized_caption(rng, dim=8, max_words=12, caption_id="cap") -> TokenizedCaption:
    n = int(rng.integers(1, max_words + 1))
    words = [WORD_POOL[i] for i in rng.choice(len(WORD_POOL), size=n, replace=False)]
    return TokenizedCaption(
        caption=CaptionRecord(id=caption_id, person_id="p0", text=" ".join(words)),
        words=tuple(words),
        token_vectors=tuple(EmbeddingVector(rng.standard_normal(dim)) for _ in range(n)),
        sentence_vector=EmbeddingVector(rng.standard_normal(dim)),
    )


@pytest.fixture
def embed_server():
    server = MockServer(EmbedHandler)
    yield server
    server.shutdown()


@pytest.fixture
def chat_server():
    server = MockServer(ChatHandler)
    yield server
    server.shutdown()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def vec(*values) -> EmbeddingVector:
    return EmbeddingVector(np.asarray(values, dtype=np.float64))


@pytest.fixture
def make_vec():
    return vec
