"""Data exports for external plotting: embedding dumps, PCA, scatter data.

Nothing here renders anything; the outputs are rows and matrices meant
for whatever plotting stack the user prefers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import CorpusManifest, PooledCorpus
from .errors import ValidationError
from .frontend import FeatureScaler, FrontendConfig, featurize, pool_time
from .metrics import EvalPairs, system_aggregate
from .seeding import named_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingDump:
    """Pooled embeddings for a subset of samples from several labeled sets."""

    set_labels: tuple[str, ...]
    sample_ids: tuple[str, ...]
    roles: tuple[str, ...]  # "train" or "test" flag per row
    embeddings: np.ndarray  # (N, D)
    truncated_sets: tuple[str, ...]  # sets smaller than the requested n


def select_samples(n_total: int, n_wanted: int, seed: int, label: str) -> list[int]:
    """Deterministic without-replacement choice of row indices for one set."""
    n_take = min(n_wanted, n_total)
    perm = named_rng(seed, f"export/{label}").permutation(n_total)
    return sorted(perm[:n_take].tolist())


def export_embeddings(
    sets: list[tuple[str, CorpusManifest | PooledCorpus, str, str]],
    frontend_config: FrontendConfig,
    scaler: FeatureScaler | None,
    n_per_set: int = 100,
    seed: int = 0,
) -> EmbeddingDump:
    """Pool-and-collect embeddings from each (label, corpus, split, role) set.

    Takes n_per_set random samples per set (the whole set when smaller,
    recorded in truncated_sets); the choice is a pure function of
    (seed, label).
    """
    if n_per_set < 1:
        raise ValidationError("n_per_set must be >= 1")
    labels, ids, roles, rows = [], [], [], []
    truncated = []
    for label, corpus, split, role in sets:
        samples = corpus.samples(split)
        if not samples:
            raise ValueError(f"set {label!r} has no samples in split {split!r}")
        if len(samples) < n_per_set:
            truncated.append(label)
            logger.info("set %r has %d < %d samples; taking all", label, len(samples), n_per_set)
        for i in select_samples(len(samples), n_per_set, seed, label):
            sample = samples[i]
            labels.append(label)
            ids.append(sample.sample_id)
            roles.append(role)
            rows.append(pool_time(featurize(sample, frontend_config, scaler)))
    return EmbeddingDump(
        set_labels=tuple(labels),
        sample_ids=tuple(ids),
        roles=tuple(roles),
        embeddings=np.stack(rows),
        truncated_sets=tuple(truncated),
    )


def pca_2d(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project (N, D) points onto their top two principal axes.

    Returns (projection (N, 2), components (2, D), mean (D,)); the
    projection is exact for point clouds lying in a 2-D affine subspace:
    mean + projection @ components reconstructs them.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2 or points.shape[1] < 2:
        raise ValidationError(f"pca_2d needs at least 2 points of dim >= 2, got {points.shape}")
    mean = points.mean(axis=0)
    centered = points - mean
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    return centered @ components.T, components, mean


@dataclass(frozen=True)
class DistributionData:
    """The data behind a true-vs-predicted scatter for one test set."""

    utterances: EvalPairs
    systems: EvalPairs | None  # per-system means when system ids exist


def distribution_data(pairs: EvalPairs) -> DistributionData:
    """Per-utterance (true, pred) rows plus the per-system scatter."""
    systems = system_aggregate(pairs) if pairs.has_systems else None
    return DistributionData(utterances=pairs, systems=systems)
