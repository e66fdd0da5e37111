"""Encoder backends.

``hash:<dim>`` is a deterministic featurizer: per-word unit vectors from a
text hash, sentences as the normalized mean of word vectors, images hashed by
file content. It needs no weights, so exports and the embed service work in
any environment; real deployments pass a CLIP checkpoint instead.

Word-level semantics: sub-word pieces are mean-pooled into whole-word vectors
so keyword extraction downstream operates on words. Token vectors default to
the encoder's input token-embedding table; ``contextual=True`` switches to
last-layer hidden states where the backend has them.
"""
from __future__ import annotations

import hashlib
import re
from pathlib import Path

import numpy as np

_WORD_RE = re.compile(r"[A-Za-z0-9']+")


def split_words(text: str) -> list[str]:
    return [w.lower() for w in _WORD_RE.findall(text)]


class HashEncoder:
    """Deterministic hash featurizer (no model weights required)."""

    tokenization_scheme = "lowercase-words-v1"
    normalized = True

    def __init__(self, dim: int = 64):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.name = f"hash:{dim}"
        self.checkpoint = "builtin"

    def _word_vector(self, word: str) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            words = split_words(text) or [text]
            mean = np.mean([self._word_vector(w) for w in words], axis=0)
            norm = np.linalg.norm(mean)
            if norm == 0.0:
                mean = self._word_vector(text)
                norm = 1.0
            out[i] = (mean / norm).astype(np.float32)
        return out

    def encode_text_tokens(self, text: str) -> tuple[list[str], np.ndarray]:
        words = split_words(text)
        if not words:
            return [], np.zeros((0, self.dim), dtype=np.float32)
        vectors = np.stack([self._word_vector(w) for w in words]).astype(np.float32)
        return words, vectors

    def encode_images(self, paths: list) -> np.ndarray:
        out = np.empty((len(paths), self.dim), dtype=np.float32)
        for i, path in enumerate(paths):
            digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
            out[i] = self._word_vector(f"image:{digest}").astype(np.float32)
        return out


class ClipEncoder:
    """Frozen CLIP checkpoint via transformers (weights must be available)."""

    normalized = True

    def __init__(self, model_id: str, device: str = "cpu", contextual: bool = False):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise RuntimeError(
                "transformers/torch are required for CLIP export; install the "
                "'models' extra or use a hash:<dim> encoder"
            ) from exc
        self.name = model_id
        self.checkpoint = model_id
        self.contextual = contextual
        self.tokenization_scheme = f"clip-bpe-words({model_id})"
        self._torch = torch
        self._device = device
        try:
            self._model = CLIPModel.from_pretrained(model_id).to(device).eval()
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise RuntimeError(f"failed to load model {model_id!r}: {exc}") from exc
        self.dim = int(self._model.config.projection_dim)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        torch = self._torch
        inputs = self._processor(
            text=texts, return_tensors="pt", padding=True, truncation=True
        ).to(self._device)
        with torch.no_grad():
            features = self._model.get_text_features(**inputs)
            features = features / features.norm(dim=-1, keepdim=True)
        return features.cpu().numpy().astype(np.float32)

    def encode_text_tokens(self, text: str) -> tuple[list[str], np.ndarray]:
        """Whole-word vectors: sub-word pieces mean-pooled per word."""
        torch = self._torch
        tokenizer = self._processor.tokenizer
        encoding = tokenizer(
            text, return_offsets_mapping=True, truncation=True, return_tensors="pt"
        )
        ids = encoding["input_ids"][0]
        offsets = encoding["offset_mapping"][0].tolist()
        with torch.no_grad():
            if self.contextual:
                hidden = self._model.text_model(
                    input_ids=ids[None].to(self._device)
                ).last_hidden_state[0]
            else:
                table = self._model.text_model.embeddings.token_embedding
                hidden = table(ids.to(self._device))
        hidden = hidden.cpu().numpy()

        words: list[str] = []
        pieces: list[list[int]] = []
        for i, (start, end) in enumerate(offsets):
            if end <= start:  # special tokens
                continue
            piece = text[start:end]
            if words and start > 0 and not text[start - 1].isspace():
                words[-1] += piece
                pieces[-1].append(i)
            else:
                words.append(piece)
                pieces.append([i])
        vectors = np.stack(
            [hidden[idx].mean(axis=0) for idx in pieces]
        ).astype(np.float32) if pieces else np.zeros((0, hidden.shape[1]), dtype=np.float32)
        return [w.lower() for w in words], vectors

    def encode_images(self, paths: list) -> np.ndarray:
        torch = self._torch
        from PIL import Image

        images = [Image.open(p).convert("RGB") for p in paths]
        inputs = self._processor(images=images, return_tensors="pt").to(self._device)
        with torch.no_grad():
            features = self._model.get_image_features(**inputs)
            features = features / features.norm(dim=-1, keepdim=True)
        return features.cpu().numpy().astype(np.float32)


def select_encoder(model_id: str, device: str = "cpu", contextual: bool = False):
    """hash:<dim> gives the builtin featurizer; anything else loads CLIP."""
    if model_id.startswith("hash:"):
        return HashEncoder(dim=int(model_id.split(":", 1)[1]))
    return ClipEncoder(model_id, device=device, contextual=contextual)
