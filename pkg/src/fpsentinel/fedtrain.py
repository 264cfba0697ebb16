"""Detector training: centralized logistic-regression pre-training on public
crawl data, then differentially private federated fine-tuning on sharded
user data.

Each round samples clients without replacement; sampled clients run local
SGD from the global parameters, their parameter deltas are L2-clipped, and
the server averages them with Gaussian noise scaled to the clip norm.
Privacy is accounted at client level with the RDP accountant.

Randomness contract: every random stream is derived from the config seed
with a fixed tag (sampling, noise, or per-client local shuffling), so runs
are reproducible and per-client work can be parallelized without changing
results.  Aggregation accumulates in sampled-client-id order.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .accountant import calibrate_noise as _calibrate_sigma
from .accountant import epsilon_for
from .errors import ConfigError, FormatVersionError, InfeasibleBudgetError, ValidationError
from .features import FeatureVector, stack_vectors
from .telemetry import WebsiteRecord

CHECKPOINT_FORMAT = "fp-model"
CHECKPOINT_VERSION = 1

# Stream tags for deterministic seed derivation.
_TAG_SAMPLE = 0
_TAG_NOISE = 1
_TAG_LOCAL = 2


@dataclass
class ModelParams:
    weights: np.ndarray
    bias: float

    def copy(self) -> "ModelParams":
        return ModelParams(weights=self.weights.copy(), bias=float(self.bias))

    def as_delta_base(self) -> np.ndarray:
        return np.concatenate([self.weights, [self.bias]])


@dataclass(frozen=True)
class TrainingConfig:
    rounds: int = 100
    clients_per_round: int = 1000
    total_clients: int = 1_000_000
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0
    local_epochs: int = 1
    local_lr: float = 0.1
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise ConfigError("rounds must be nonnegative")
        if self.clients_per_round < 1 or self.total_clients < 1:
            raise ConfigError("client counts must be positive")
        if self.clients_per_round > self.total_clients:
            raise ConfigError("clients_per_round cannot exceed total_clients")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ConfigError("noise_multiplier must be nonnegative")
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ConfigError("local_epochs and batch_size must be positive")
        if self.local_lr < 0:
            raise ConfigError("local_lr must be nonnegative")

    @property
    def sampling_rate(self) -> float:
        return self.clients_per_round / self.total_clients


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 1e-5

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must be in (0, 1)")


@dataclass
class ClientShard:
    client_id: int
    vectors: list[FeatureVector] = field(default_factory=list)


@dataclass
class ClientUpdate:
    delta: np.ndarray
    norm: float
    empty: bool = False


def local_rng(seed: int, client_id: int, round_idx: int = 0) -> np.random.Generator:
    """Generator driving one client's local shuffles in one round."""
    return np.random.default_rng(np.random.SeedSequence((seed, _TAG_LOCAL, client_id, round_idx)))


def _draw_perms(rng: np.random.Generator, n: int, epochs: int) -> np.ndarray:
    return np.stack([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)


def sgd_train(
    params: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
) -> ModelParams:
    """Mini-batch SGD on cross-entropy from the given parameters."""
    if epochs == 0:
        return params.copy()
    perms = _draw_perms(rng, X.shape[0], epochs)
    w, b = kernels.sgd_epochs(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        params.weights.astype(np.float64),
        float(params.bias),
        perms,
        float(lr),
        int(batch_size),
    )
    return ModelParams(weights=w, bias=float(b))


def pretrain_centralized(
    public_vectors: list[FeatureVector],
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
) -> ModelParams:
    """Non-private logistic-regression training on the public corpus.

    Initialization is all-zero, so ``epochs=0`` returns zeros.  Single-class
    data trains but emits a warning since the classifier cannot calibrate.
    """
    if not public_vectors:
        raise ValidationError("pre-training requires a nonempty vector list")
    X, y = stack_vectors(public_vectors)
    if not np.all(np.isfinite(X)):
        raise ValidationError("pre-training features must be finite")
    if len(np.unique(y)) < 2:
        warnings.warn("pre-training data contains a single class", stacklevel=2)
    init = ModelParams(weights=np.zeros(X.shape[1]), bias=0.0)
    rng = np.random.default_rng(seed)
    return sgd_train(init, X, y, epochs, lr, batch_size, rng)


def zipf_probabilities(ranks: np.ndarray, exponent: float) -> np.ndarray:
    """Closed-form Zipf visit probabilities over website ranks."""
    mass = ranks.astype(np.float64) ** (-exponent)
    return mass / mass.sum()


def partition_clients(
    vectors: list[FeatureVector],
    websites: list[WebsiteRecord],
    total_clients: int,
    zipf_exponent: float = 1.0,
    seed: int = 0,
    visits_per_client: int = 10,
) -> list[ClientShard]:
    """Shard vectors across simulated clients by rank-weighted site visits.

    Each client draws ``visits_per_client`` sites from a Zipf distribution
    over the website ranks and receives every vector observed on the drawn
    sites.  Vectors are shared by reference; shards may be empty when a
    client only drew script-free sites.
    """
    if total_clients < 1:
        raise ConfigError("total_clients must be >= 1")
    if zipf_exponent <= 0:
        raise ConfigError("zipf_exponent must be positive")
    if visits_per_client < 1:
        raise ConfigError("visits_per_client must be >= 1")
    ordered = sorted(websites, key=lambda w: (w.rank, w.site))
    ranks = np.array([w.rank for w in ordered], dtype=np.float64)
    probs = zipf_probabilities(ranks, zipf_exponent)
    by_site: dict[str, list[FeatureVector]] = {}
    for vector in vectors:
        by_site.setdefault(vector.site, []).append(vector)
    rng = np.random.default_rng(np.random.SeedSequence((seed, _TAG_SAMPLE)))
    shards = []
    n_sites = len(ordered)
    for client_id in range(total_clients):
        drawn = rng.choice(n_sites, size=visits_per_client, replace=True, p=probs)
        shard_vectors: list[FeatureVector] = []
        for site_idx in sorted(set(int(i) for i in drawn)):
            shard_vectors.extend(by_site.get(ordered[site_idx].site, ()))
        shards.append(ClientShard(client_id=client_id, vectors=shard_vectors))
    return shards


def local_train(
    params: ModelParams,
    shard: ClientShard,
    cfg: TrainingConfig,
    round_idx: int = 0,
) -> ClientUpdate:
    """One client's contribution: local SGD from the global parameters.

    Returns the parameter delta with its pre-clip norm; an empty shard
    yields a zero update flagged as empty.
    """
    base = params.as_delta_base()
    if not shard.vectors:
        return ClientUpdate(delta=np.zeros_like(base), norm=0.0, empty=True)
    X, y = stack_vectors(shard.vectors)
    rng = local_rng(cfg.seed, shard.client_id, round_idx)
    trained = sgd_train(params, X, y, cfg.local_epochs, cfg.local_lr, cfg.batch_size, rng)
    delta = trained.as_delta_base() - base
    return ClientUpdate(delta=delta, norm=float(np.linalg.norm(delta)))


def clip_update(update: ClientUpdate, clip_norm: float) -> ClientUpdate:
    """Scale the delta so its L2 norm is at most the clip norm."""
    if clip_norm <= 0:
        raise ConfigError("clip norm must be positive")
    norm = float(np.linalg.norm(update.delta))
    if norm <= clip_norm or norm == 0.0:
        return ClientUpdate(delta=update.delta.copy(), norm=norm, empty=update.empty)
    scaled = update.delta * (clip_norm / norm)
    return ClientUpdate(delta=scaled, norm=float(np.linalg.norm(scaled)), empty=update.empty)


def aggregate_with_noise(
    updates: list[ClientUpdate],
    clip_norm: float,
    noise_multiplier: float,
    clients_per_round: int,
    seed: int | np.random.Generator = 0,
) -> np.ndarray:
    """Average clipped updates with per-coordinate Gaussian noise of standard
    deviation ``noise_multiplier * clip_norm``."""
    if not updates:
        raise ValidationError("cannot aggregate an empty update list")
    total = np.zeros_like(updates[0].delta)
    for update in updates:
        total = total + update.delta
    if noise_multiplier > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        total = total + rng.normal(0.0, noise_multiplier * clip_norm, total.shape[0])
    return total / clients_per_round


def calibrate_noise(budget: PrivacyBudget, rounds: int, q: float) -> float:
    """Noise multiplier meeting the budget for ``rounds`` releases at rate q."""
    return _calibrate_sigma(budget.epsilon, budget.delta, rounds, q)


def run_federated_training(
    init: ModelParams,
    shards: list[ClientShard],
    cfg: TrainingConfig,
    budget: PrivacyBudget | None = None,
) -> tuple[ModelParams, float]:
    """Run the federated rounds and return the final model and spent epsilon.

    When a budget is supplied the configured noise multiplier is checked
    against it up front; an over-budget configuration fails before any round
    runs.
    """
    if not shards:
        raise ValidationError("federated training requires at least one shard")
    if len(shards) != cfg.total_clients:
        raise ConfigError(
            f"shard count {len(shards)} does not match total_clients {cfg.total_clients}"
        )
    delta_for_account = budget.delta if budget is not None else 1e-5
    if cfg.rounds == 0:
        return init.copy(), 0.0
    epsilon_spent = epsilon_for(
        cfg.noise_multiplier, cfg.rounds, cfg.sampling_rate, delta_for_account
    )
    if budget is not None and epsilon_spent > budget.epsilon:
        raise InfeasibleBudgetError(
            f"infeasible privacy budget: config spends epsilon={epsilon_spent:.4g} "
            f"> budget {budget.epsilon}"
        )

    params = init.copy()
    sample_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _TAG_SAMPLE)))
    for round_idx in range(cfg.rounds):
        sampled = sample_rng.choice(cfg.total_clients, size=cfg.clients_per_round, replace=False)
        updates = []
        for client_id in sorted(int(c) for c in sampled):
            update = local_train(params, shards[client_id], cfg, round_idx=round_idx)
            update = clip_update(update, cfg.clip_norm)
            assert update.norm <= cfg.clip_norm + 1e-9
            updates.append(update)
        noise_rng = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, _TAG_NOISE, round_idx))
        )
        delta_global = aggregate_with_noise(
            updates, cfg.clip_norm, cfg.noise_multiplier, cfg.clients_per_round, noise_rng
        )
        params = ModelParams(
            weights=params.weights + delta_global[:-1],
            bias=float(params.bias + delta_global[-1]),
        )
    return params, float(epsilon_spent)


def predict(params: ModelParams, vector: FeatureVector) -> float:
    """Fingerprinting probability of one feature vector."""
    if vector.values.shape[0] != params.weights.shape[0]:
        raise ValidationError(
            f"dimension mismatch: vector {vector.values.shape[0]}, "
            f"model {params.weights.shape[0]}"
        )
    return float(
        kernels.sigmoid_scores(vector.values.reshape(1, -1), params.weights, params.bias)[0]
    )


def predict_matrix(params: ModelParams, X: np.ndarray) -> np.ndarray:
    if X.shape[1] != params.weights.shape[0]:
        raise ValidationError("dimension mismatch between matrix and model")
    return kernels.sigmoid_scores(np.ascontiguousarray(X, dtype=np.float64),
                                  params.weights, params.bias)


def checkpoint_to_obj(
    params: ModelParams,
    vocab_sha256: str,
    epsilon_spent: float,
    norm_stats_obj: dict | None = None,
) -> dict:
    obj = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "vocab_sha256": vocab_sha256,
        "weights": [float(w) for w in params.weights],
        "bias": float(params.bias),
        "epsilon_spent": "inf" if math.isinf(epsilon_spent) else float(epsilon_spent),
    }
    if norm_stats_obj is not None:
        obj["norm_stats"] = norm_stats_obj
    return obj


def save_checkpoint(path, **kwargs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_to_obj(**kwargs), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_checkpoint(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format") != CHECKPOINT_FORMAT or obj.get("version") != CHECKPOINT_VERSION:
        raise FormatVersionError("not a recognized model checkpoint")
    obj["params"] = ModelParams(
        weights=np.array(obj["weights"], dtype=np.float64), bias=float(obj["bias"])
    )
    if obj["epsilon_spent"] == "inf":
        obj["epsilon_spent"] = math.inf
    return obj
