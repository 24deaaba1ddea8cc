"""PCA projection of tile embeddings and fixed-length district summaries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encfeat import Encoder, embed
from .hyperlocal import ScoreModel, score_tiles
from .neural import ShapeError
from .synthworld import TileTable


@dataclass
class PcaProjector:
    mean: np.ndarray
    components: np.ndarray  # (n_components, dim), orthonormal rows
    explained_variance_ratio: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def fit_pca(embeddings, n_components: int = 3) -> PcaProjector:
    """Eigendecomposition of the sample covariance; each component's largest-|.| entry is positive."""
    X = np.asarray(embeddings, dtype=np.float64)
    n, dim = X.shape
    if n_components < 1 or n_components > dim:
        raise ValueError(f"n_components must be in [1, {dim}]")
    if n < n_components + 1:
        raise ValueError(f"need at least {n_components + 1} points, got {n}")
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False).reshape(dim, dim)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = evals.sum()
    if total <= 0:
        raise ValueError("zero covariance: all points identical")
    comps = evecs[:, :n_components].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return PcaProjector(mean, comps, evals[:n_components] / total)


def pca_apply(p: PcaProjector, embedding) -> np.ndarray:
    e = np.asarray(embedding, dtype=np.float64)
    if e.shape[-1] != p.mean.shape[0]:
        raise ShapeError(f"embedding width {e.shape[-1]} != {p.mean.shape[0]}")
    return (e - p.mean) @ p.components.T


Member = tuple[Encoder, PcaProjector]


def project_tiles(members: Sequence[Member], tiles) -> np.ndarray:
    """Per-tile projections of every member side by side: shape (n_tiles, sum of components)."""
    if not members:
        raise ValueError("empty ensemble")
    return np.hstack([pca_apply(p, embed(enc, tiles)) for enc, p in members])


def summarize(proj: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """``[mean per coordinate, population std per coordinate, score sum]`` for one district."""
    if len(proj) == 0:
        raise ValueError("empty district")
    return np.concatenate([proj.mean(axis=0), proj.std(axis=0), [scores.sum()]])


def ensemble_feature(members: Sequence[Member], score_model: ScoreModel, tiles: TileTable) -> np.ndarray:
    """District vector of length 2 * (total components) + 1 for the district's tiles.

    With M members of 3 components this is ``[mu_1..mu_M, sigma_1..sigma_M, sum f]``,
    length 6M + 1.
    """
    if len(tiles) == 0:
        raise ValueError("empty district")
    return summarize(project_tiles(members, tiles), score_tiles(score_model, tiles))


def district_feature(member: Member, score_model: ScoreModel, tiles: TileTable) -> np.ndarray:
    return ensemble_feature([member], score_model, tiles)


def feature_matrix(proj: np.ndarray, scores: np.ndarray, groups: Sequence[np.ndarray]) -> np.ndarray:
    """Stack ``summarize`` over many districts given as row-index arrays into precomputed tiles."""
    return np.array([summarize(proj[g], scores[g]) for g in groups])


def save_matrix(path, ids, matrix: np.ndarray) -> None:
    """District id followed by the representation values, comma-separated with a header."""
    cols = ["district"] + [f"r{k}" for k in range(matrix.shape[1])]
    lines = [",".join(cols)]
    for i, row in zip(ids, matrix):
        lines.append(",".join([str(i)] + [repr(float(v)) for v in row]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
