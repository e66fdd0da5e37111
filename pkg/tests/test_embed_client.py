import numpy as np
import pytest

from mvr.embed_client import embed_remote, embed_tokens_remote, resolve_endpoint
from mvr.errors import DimMismatchError, ServiceError

from mock_servers import MOCK_DIM, embed_text


class TestEmbedRemote:
    def test_same_text_same_vector(self, embed_server):
        a, b = embed_remote(["a man in red", "a man in red"], endpoint=embed_server.url)
        assert np.array_equal(a.values, b.values)

    def test_order_preserved(self, embed_server):
        texts = ["first text", "second text", "third text"]
        vectors = embed_remote(texts, endpoint=embed_server.url)
        assert len(vectors) == 3
        for text, vector in zip(texts, vectors):
            expected = embed_text(text).astype(np.float64)
            assert np.allclose(vector.values, expected, atol=1e-7)

    def test_uniform_dim(self, embed_server):
        vectors = embed_remote(["a", "b", "c"], endpoint=embed_server.url)
        assert {v.dim for v in vectors} == {MOCK_DIM}

    def test_wrong_count_is_service_error(self, embed_server):
        embed_server.add_fault("wrong_count")
        with pytest.raises(ServiceError):
            embed_remote(["a", "b", "c"], endpoint=embed_server.url, retries=0)

    def test_transient_failure_retried(self, embed_server):
        embed_server.add_fault("http500")
        vectors = embed_remote(["hello world"], endpoint=embed_server.url, retries=2)
        assert len(vectors) == 1
        assert embed_server.request_counts["/embed/text"] == 2

    def test_exhausted_retries_carry_metadata(self, embed_server):
        for _ in range(5):
            embed_server.add_fault("http500")
        with pytest.raises(ServiceError) as exc_info:
            embed_remote(["x"], endpoint=embed_server.url, retries=1)
        assert exc_info.value.attempts == 2
        assert exc_info.value.last_status == 500

    def test_dim_mismatch_with_expected(self, embed_server):
        with pytest.raises(DimMismatchError):
            embed_remote(["x"], endpoint=embed_server.url, expected_dim=MOCK_DIM + 1)

    def test_empty_list_rejected(self, embed_server):
        with pytest.raises(ValueError):
            embed_remote([], endpoint=embed_server.url)

    def test_batching_preserves_order(self, embed_server):
        texts = [f"text number {i}" for i in range(23)]
        whole = embed_remote(texts, endpoint=embed_server.url)
        batched = embed_remote(texts, endpoint=embed_server.url, batch_size=4)
        for a, b in zip(whole, batched):
            assert np.array_equal(a.values, b.values)

    def test_endpoint_env_fallback(self, embed_server, monkeypatch):
        monkeypatch.setenv("MVR_EMBED_ENDPOINT", embed_server.url)
        assert resolve_endpoint() == embed_server.url
        vectors = embed_remote(["via env"])
        assert len(vectors) == 1

    def test_no_endpoint_anywhere(self, monkeypatch):
        monkeypatch.delenv("MVR_EMBED_ENDPOINT", raising=False)
        with pytest.raises(ServiceError):
            embed_remote(["x"])


class TestEmbedTokensRemote:
    def test_words_and_vectors_aligned(self, embed_server):
        results = embed_tokens_remote(
            ["A man in a RED coat", "one two"], endpoint=embed_server.url
        )
        assert len(results) == 2
        words, vectors = results[0]
        assert words == ["a", "man", "in", "a", "red", "coat"]
        assert len(vectors) == len(words)
        assert all(v.dim == MOCK_DIM for v in vectors)

    def test_deterministic_per_word(self, embed_server):
        (w1, v1), = embed_tokens_remote(["red coat"], endpoint=embed_server.url)
        (w2, v2), = embed_tokens_remote(["red coat"], endpoint=embed_server.url)
        assert w1 == w2
        for a, b in zip(v1, v2):
            assert np.array_equal(a.values, b.values)


class TestContractAgainstMock:
    def test_mock_passes_shared_contract(self, embed_server):
        from mvr.contract import check_embed_contract

        assert check_embed_contract(embed_server.url) == []
