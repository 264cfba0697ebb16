"""Feature vocabulary, vector extraction, and the differentially private
federated normalization step.

Features are raw API call counts plus a configurable set of custom
aggregates (string-argument lengths, distinct counts, list-return lengths).
Normalization statistics are estimated from clipped per-client sums with
central Gaussian noise, so no client ever reveals its raw feature values.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .accountant import epsilon_for
from .errors import ConfigError, FormatVersionError, ValidationError
from .manifest import ApiManifest
from .telemetry import ScriptTrace

VOCAB_FORMAT = "fp-vocab"
STATS_FORMAT = "fp-normstats"
FORMAT_VERSION = 1

# Lower bound on per-feature scale; keeps constant features from dividing by
# zero after normalization.
SCALE_FLOOR = 1e-6


@dataclass(frozen=True)
class FeatureDescriptor:
    kind: str  # "call_count" | "custom"
    api: str
    custom_field: str | None = None

    def name(self) -> str:
        if self.kind == "call_count":
            return self.api
        return f"{self.api}#{self.custom_field}"


@dataclass(frozen=True)
class FeatureVocabulary:
    """Canonically ordered feature descriptors; fixes the vector layout."""

    entries: tuple[FeatureDescriptor, ...]

    @property
    def dimension(self) -> int:
        return len(self.entries)

    def sha256(self) -> str:
        payload = json.dumps(
            [[e.kind, e.api, e.custom_field] for e in self.entries],
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class FeatureVector:
    values: np.ndarray
    label: bool
    script_id: str
    site: str


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    scale: np.ndarray
    clip_bound: float
    noise_multiplier: float
    epsilon_spent: float

    def __post_init__(self):
        if np.any(self.scale < SCALE_FLOOR):
            raise ValidationError("scale entries must be >= the scale floor")


def build_vocabulary(manifest: ApiManifest) -> FeatureVocabulary:
    """Deterministic vocabulary from the manifest: one call-count feature per
    monitored API plus one feature per custom aggregate descriptor."""
    entries = [FeatureDescriptor("call_count", api) for api in manifest.all_monitored()]
    entries += [
        FeatureDescriptor("custom", api, fld) for api, fld in manifest.custom_features
    ]
    entries.sort(key=lambda e: (e.kind, e.api, e.custom_field or ""))
    if len(set(entries)) != len(entries):
        raise ConfigError("duplicate feature descriptor after manifest expansion")
    return FeatureVocabulary(entries=tuple(entries))


def extract_features(
    trace: ScriptTrace, vocab: FeatureVocabulary, label: bool
) -> FeatureVector:
    """Project a trace's aggregates onto the vocabulary; absent APIs are 0."""
    values = np.zeros(vocab.dimension, dtype=np.float64)
    for i, entry in enumerate(vocab.entries):
        agg = trace.aggregates.get(entry.api)
        if agg is None:
            continue
        if entry.kind == "call_count":
            values[i] = agg.call_count
        else:
            values[i] = getattr(agg, entry.custom_field)
    return FeatureVector(values=values, label=label, script_id=trace.script_id, site=trace.site)


def stack_vectors(vectors: list[FeatureVector]) -> tuple[np.ndarray, np.ndarray]:
    """Stack vectors into (X, y) arrays for training."""
    if not vectors:
        raise ValidationError("cannot stack an empty vector list")
    X = np.stack([v.values for v in vectors]).astype(np.float64)
    y = np.array([1.0 if v.label else 0.0 for v in vectors], dtype=np.float64)
    return X, y


def client_summary(
    values: np.ndarray, clip_bound: float
) -> tuple[np.ndarray, np.ndarray, int]:
    """What a single client contributes to normalization: per-feature sums of
    clipped values and clipped squares, plus its example count."""
    clipped = np.clip(values, -clip_bound, clip_bound)
    return clipped.sum(axis=0), (clipped**2).sum(axis=0), values.shape[0]


def dp_federated_normalize(
    shards: list[np.ndarray],
    clip_bound: float,
    noise_multiplier: float,
    seed: int = 0,
    delta: float = 1e-5,
) -> NormalizationStats:
    """Estimate per-feature mean and scale from client shards under central DP.

    Each shard is an (n_i, d) array of one client's feature values.  Clients
    contribute clipped sums; the server adds Gaussian noise scaled to the
    clip bound before forming mean and standard deviation.  With
    ``noise_multiplier`` 0 and no values outside the clip bound, the result
    equals the exact pooled statistics.
    """
    if not shards:
        raise ValidationError("at least one client shard is required")
    if clip_bound <= 0:
        raise ConfigError("clip_bound must be positive")
    if noise_multiplier < 0:
        raise ConfigError("noise_multiplier must be nonnegative")

    dim = shards[0].shape[1]
    sum_values = np.zeros(dim)
    sum_squares = np.zeros(dim)
    count = 0
    for shard in shards:
        if shard.ndim != 2 or shard.shape[1] != dim:
            raise ValidationError("all shards must be 2-D with a common feature dimension")
        s, q, n = client_summary(shard, clip_bound)
        sum_values += s
        sum_squares += q
        count += n

    if noise_multiplier > 0:
        rng = np.random.default_rng(seed)
        sum_values = sum_values + rng.normal(0.0, noise_multiplier * clip_bound, dim)
        sum_squares = sum_squares + rng.normal(0.0, noise_multiplier * clip_bound**2, dim)
        count_noisy = count + rng.normal(0.0, noise_multiplier)
        # Three Gaussian releases at this multiplier; client-level sensitivity
        # is bounded by the per-client clipping above.
        epsilon = epsilon_for(sigma=noise_multiplier, rounds=3, q=1.0, delta=delta)
    else:
        count_noisy = float(count)
        epsilon = math.inf

    denom = max(count_noisy, 1.0)
    mean = sum_values / denom
    variance = np.maximum(sum_squares / denom - mean**2, 0.0)
    scale = np.maximum(np.sqrt(variance), SCALE_FLOOR)
    return NormalizationStats(
        mean=mean,
        scale=scale,
        clip_bound=float(clip_bound),
        noise_multiplier=float(noise_multiplier),
        epsilon_spent=float(epsilon),
    )


def pooled_stats_oracle(data: np.ndarray, clip_bound: float) -> tuple[np.ndarray, np.ndarray]:
    """Single-machine reference: pooled mean/std of the clipped data."""
    clipped = np.clip(data, -clip_bound, clip_bound)
    mean = clipped.mean(axis=0)
    std = np.sqrt(np.maximum((clipped**2).mean(axis=0) - mean**2, 0.0))
    return mean, np.maximum(std, SCALE_FLOOR)


def public_clip_bound(X: np.ndarray, percentile: float = 99.0) -> float:
    """Clip bound from public data: the requested percentile of all values."""
    bound = float(np.percentile(X, percentile))
    return max(bound, 1.0)


def apply_normalization(v: FeatureVector, stats: NormalizationStats) -> FeatureVector:
    """Return a copy of ``v`` with values shifted/scaled by ``stats``.

    Not idempotent: normalizing twice shifts by the mean again.
    """
    if v.values.shape[0] != stats.mean.shape[0]:
        raise ValidationError(
            f"dimension mismatch: vector {v.values.shape[0]}, stats {stats.mean.shape[0]}"
        )
    return FeatureVector(
        values=(v.values - stats.mean) / stats.scale,
        label=v.label,
        script_id=v.script_id,
        site=v.site,
    )


def normalize_matrix(X: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    if X.shape[1] != stats.mean.shape[0]:
        raise ValidationError("dimension mismatch between matrix and stats")
    return (X - stats.mean) / stats.scale


def _float_list(arr: np.ndarray) -> list[float]:
    return [float(x) for x in arr]


def vocabulary_to_obj(vocab: FeatureVocabulary) -> dict:
    return {
        "format": VOCAB_FORMAT,
        "version": FORMAT_VERSION,
        "entries": [[e.kind, e.api, e.custom_field] for e in vocab.entries],
    }


def vocabulary_from_obj(obj: dict) -> FeatureVocabulary:
    if obj.get("format") != VOCAB_FORMAT or obj.get("version") != FORMAT_VERSION:
        raise FormatVersionError("not a recognized vocabulary document")
    return FeatureVocabulary(
        entries=tuple(FeatureDescriptor(kind, api, fld) for kind, api, fld in obj["entries"])
    )


def stats_to_obj(stats: NormalizationStats) -> dict:
    return {
        "format": STATS_FORMAT,
        "version": FORMAT_VERSION,
        "mean": _float_list(stats.mean),
        "scale": _float_list(stats.scale),
        "clip_bound": stats.clip_bound,
        "noise_multiplier": stats.noise_multiplier,
        "epsilon_spent": "inf" if math.isinf(stats.epsilon_spent) else stats.epsilon_spent,
    }


def stats_from_obj(obj: dict) -> NormalizationStats:
    if obj.get("format") != STATS_FORMAT or obj.get("version") != FORMAT_VERSION:
        raise FormatVersionError("not a recognized normalization-stats document")
    eps = obj["epsilon_spent"]
    return NormalizationStats(
        mean=np.array(obj["mean"], dtype=np.float64),
        scale=np.array(obj["scale"], dtype=np.float64),
        clip_bound=float(obj["clip_bound"]),
        noise_multiplier=float(obj["noise_multiplier"]),
        epsilon_spent=math.inf if eps == "inf" else float(eps),
    )
