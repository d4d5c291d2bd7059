"""Context vectors: progress-report text -> fixed-dimension unit vector.

Provider embeddings are large (1536 for the default embedding model), so
the per-arm design matrices would be 1536x1536. Reports are instead
projected through a fixed Gaussian random projection into ``target_dim``
dimensions and L2-normalized. The projection matrix is generated once
from ``projection_seed`` and reused for the whole run, so identical
reports always produce identical context vectors and pairwise similarity
is approximately preserved.
"""
from __future__ import annotations

import numpy as np

from .bandit import DimensionError


class DegenerateContextError(ValueError):
    """Projection produced an (unusable) all-zero context."""


class FeatureProjector:
    """Fixed seeded projection from provider embeddings to bandit contexts."""

    def __init__(self, target_dim: int, projection_seed: int):
        if target_dim < 1:
            raise ValueError(f"target_dim must be >= 1, got {target_dim}")
        self.target_dim = target_dim
        self.projection_seed = projection_seed
        self._matrix: np.ndarray | None = None

    def _ensure_matrix(self, source_dim: int) -> np.ndarray:
        if self._matrix is None:
            rng = np.random.default_rng(self.projection_seed)
            self._matrix = rng.standard_normal((self.target_dim, source_dim)) / np.sqrt(
                self.target_dim
            )
        elif self._matrix.shape[1] != source_dim:
            raise DimensionError(
                f"embedding dimension changed mid-run: {source_dim} != {self._matrix.shape[1]}"
            )
        return self._matrix

    def project(self, embedding) -> np.ndarray:
        v = np.asarray(embedding, dtype=np.float64).ravel()
        projected = self._ensure_matrix(v.size) @ v
        norm = float(np.linalg.norm(projected))
        if norm == 0.0:
            raise DegenerateContextError("projected context is the zero vector")
        return projected / norm

    def extract(self, text: str, embedder) -> np.ndarray:
        """Embed ``text`` and project it to a unit-norm context vector."""
        return self.project(embedder.embed(text).vector)
