"""Image and text embedders behind one small interface.

The ``hash`` embedder is fully deterministic and dependency-light: text
vectors are seeded from a digest of the rendered label, image vectors
from decoded pixel statistics. It exists so the export format, ordering,
and determinism guarantees can be exercised without model weights. Real
scoring uses the ``clip:<model-name>`` embedder, which needs the
optional torch/transformers extra.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageReadError, JobValidationError

HASH_DIM = 70  # 8x8 grayscale thumbnail + per-channel mean/std


class HashEmbedder:
    """Deterministic stand-in embedder for dry runs and tests."""

    name = "hash"
    dimension = HASH_DIM

    def embed_texts(self, texts: list[str], batch_size: int = 32) -> np.ndarray:
        out = np.empty((len(texts), HASH_DIM), dtype=np.float32)
        for i, text in enumerate(texts):
            seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
            rng = np.random.Generator(np.random.PCG64(seed))
            out[i] = rng.standard_normal(HASH_DIM).astype(np.float32)
        return out

    def embed_images(self, paths: list[Path], batch_size: int = 32) -> np.ndarray:
        out = np.empty((len(paths), HASH_DIM), dtype=np.float32)
        for i, path in enumerate(paths):
            try:
                with Image.open(path) as img:
                    rgb = img.convert("RGB")
                    thumb = np.asarray(rgb.convert("L").resize((8, 8), Image.NEAREST), dtype=np.float64)
                    pixels = np.asarray(rgb, dtype=np.float64)
            except (OSError, UnidentifiedImageError) as exc:
                raise ImageReadError(f"cannot read image {path}: {exc}") from None
            stats = np.concatenate(
                [pixels.mean(axis=(0, 1)) / 255.0, pixels.std(axis=(0, 1)) / 255.0]
            )
            out[i] = np.concatenate([thumb.reshape(-1) / 255.0, stats]).astype(np.float32)
        return out


class ClipEmbedder:
    """CLIP text/image towers via huggingface transformers."""

    def __init__(self, model_name: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise JobValidationError(
                "clip models need the optional extra: pip install 'flab-export[clip]'"
            ) from exc
        self._torch = torch
        self.name = model_name
        self.model = CLIPModel.from_pretrained(model_name).eval()
        self.processor = CLIPProcessor.from_pretrained(model_name)

    def embed_texts(self, texts: list[str], batch_size: int = 32) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for start in range(0, len(texts), batch_size):
                batch = texts[start : start + batch_size]
                inputs = self.processor(text=batch, return_tensors="pt", padding=True)
                chunks.append(self.model.get_text_features(**inputs).cpu().numpy())
        return np.concatenate(chunks).astype(np.float32)

    def embed_images(self, paths: list[Path], batch_size: int = 32) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for start in range(0, len(paths), batch_size):
                batch = []
                for path in paths[start : start + batch_size]:
                    try:
                        with Image.open(path) as img:
                            batch.append(img.convert("RGB"))
                    except (OSError, UnidentifiedImageError) as exc:
                        raise ImageReadError(f"cannot read image {path}: {exc}") from None
                inputs = self.processor(images=batch, return_tensors="pt")
                chunks.append(self.model.get_image_features(**inputs).cpu().numpy())
        return np.concatenate(chunks).astype(np.float32)


def get_embedder(model_id: str):
    if model_id == "hash":
        return HashEmbedder()
    if model_id.startswith("clip:"):
        return ClipEmbedder(model_id.split(":", 1)[1])
    raise JobValidationError(f"unknown model identifier {model_id!r}; use 'hash' or 'clip:<name>'")
