"""Learning-based modeling attack on arbiter-style PUFs.

The attacker sees challenge/response pairs and fits a logistic-regression
model on the standard parity features (suffix products of the signed
switch bits) plus a bias term. For REAP-NVM datasets the pair selector is
appended one-hot and the level as a scaled scalar, so the attacker has the
full challenge; per-pair level interactions are deliberately not part of
the feature map, since this is the canonical linear attack, not a bespoke
one.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .device import Challenge, CrpRecord, N_LEVELS, N_PAIRS, N_STAGES, crps_to_arrays

LEARNING_RATE = 0.01
BATCH_SIZE = 128
MAX_EPOCHS = 200
#: Training stops once the epoch-mean loss changes less than this.
LOSS_PLATEAU = 1e-5

APUF_FEATURE_WIDTH = N_STAGES + 1
REAP_FEATURE_WIDTH = APUF_FEATURE_WIDTH + N_PAIRS + 1


class Source(str, Enum):
    """Which PUF design a dataset was collected from."""

    APUF = "apuf"
    REAP_NVM = "reap-nvm"


def feature_width(source: Source) -> int:
    return APUF_FEATURE_WIDTH if source is Source.APUF else REAP_FEATURE_WIDTH


@dataclass(eq=False)
class AttackDataset:
    """Featurized CRPs ready for training."""

    features: np.ndarray
    labels: np.ndarray
    source: Source

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels length mismatch")
        want = feature_width(self.source)
        if self.features.shape[1] != want:
            raise ValueError(
                f"{self.source.value} features must be {want}-wide, got {self.features.shape[1]}"
            )

    def __len__(self) -> int:
        return self.labels.size


@dataclass(frozen=True)
class AttackResult:
    """Outcome of one train/evaluate run."""

    train_size: int
    test_accuracy: float
    epochs: int
    seed: int
    train_accuracy: float = float("nan")


def parity_features(bits: np.ndarray) -> np.ndarray:
    """Suffix-product transform: feature k is the product of (1 - 2*bit_i)
    for i >= k. Linear models over these features span the additive
    arbiter delay family."""
    signs = 1.0 - 2.0 * np.asarray(bits, dtype=float)
    return np.cumprod(signs[:, ::-1], axis=1)[:, ::-1]


def featurize_arrays(
    bits: np.ndarray, pairs: np.ndarray, levels: np.ndarray, source: Source
) -> np.ndarray:
    n = bits.shape[0]
    parts = [parity_features(bits), np.ones((n, 1))]
    if source is Source.REAP_NVM:
        one_hot = np.zeros((n, N_PAIRS))
        one_hot[np.arange(n), pairs] = 1.0
        half_span = (N_LEVELS - 1) / 2.0
        scaled_level = ((levels - half_span) / half_span).reshape(n, 1)
        parts += [one_hot, scaled_level]
    return np.concatenate(parts, axis=1)


def featurize(challenge: Challenge, source: Source = Source.APUF) -> np.ndarray:
    """Feature vector for one challenge; deterministic."""
    return featurize_arrays(
        challenge.switch_bits[None, :],
        np.array([challenge.pair_index]),
        np.array([challenge.level]),
        source,
    )[0]


def dataset_from_crps(records: list[CrpRecord], source: Source) -> AttackDataset:
    bits, pairs, levels, responses = crps_to_arrays(records)
    return AttackDataset(featurize_arrays(bits, pairs, levels, source), responses, source)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -30.0, 30.0)))


def _log_loss(features: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    p = np.clip(_sigmoid(features @ weights), 1e-12, 1.0 - 1e-12)
    return float(-(labels * np.log(p) + (1 - labels) * np.log(1 - p)).mean())


def predict(weights: np.ndarray, features: np.ndarray) -> np.ndarray:
    return (features @ weights > 0).astype(np.uint8)


def accuracy(weights: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
    return float((predict(weights, features) == labels).mean())


def train(
    dataset: AttackDataset,
    train_size: int,
    seed: int,
    *,
    learning_rate: float = LEARNING_RATE,
    batch_size: int = BATCH_SIZE,
    max_epochs: int = MAX_EPOCHS,
    loss_plateau: float = LOSS_PLATEAU,
) -> tuple[np.ndarray, AttackResult]:
    """Fit logistic regression by mini-batch gradient descent.

    The last 20% of the dataset is held out; training samples are drawn by
    seeded shuffling within the leading 80% only, so the split boundary is
    never crossed. Training runs until the epoch loss plateaus or the epoch
    cap is hit. Deterministic for a given seed.
    """
    n = len(dataset)
    test_size = max(1, n // 5)
    pool_size = n - test_size
    if train_size < 1 or train_size > pool_size:
        raise ValueError(
            f"train_size must be in [1, {pool_size}] for a dataset of {n} records"
        )
    test_x = dataset.features[pool_size:]
    test_y = dataset.labels[pool_size:]

    rng = np.random.default_rng(seed)
    chosen = rng.permutation(pool_size)[:train_size]
    train_x = dataset.features[chosen]
    train_y = dataset.labels[chosen].astype(float)

    weights = np.zeros(train_x.shape[1])
    previous_loss = np.inf
    epochs_run = 0
    for epoch in range(max_epochs):
        order = rng.permutation(train_size)
        for start in range(0, train_size, batch_size):
            idx = order[start : start + batch_size]
            xb = train_x[idx]
            grad = xb.T @ (_sigmoid(xb @ weights) - train_y[idx]) / idx.size
            weights -= learning_rate * grad
        epochs_run = epoch + 1
        loss = _log_loss(train_x, train_y, weights)
        if abs(previous_loss - loss) < loss_plateau:
            break
        previous_loss = loss

    result = AttackResult(
        train_size=train_size,
        test_accuracy=accuracy(weights, test_x, test_y),
        epochs=epochs_run,
        seed=seed,
        train_accuracy=accuracy(weights, train_x, dataset.labels[chosen]),
    )
    return weights, result


def attack_curve(
    dataset: AttackDataset, sizes: list[int], seed: int
) -> list[AttackResult]:
    """One train/evaluate run per training-set size, on disjoint seeds."""
    if sorted(sizes) != list(sizes):
        raise ValueError("sizes must be increasing")
    return [train(dataset, size, seed + i)[1] for i, size in enumerate(sizes)]
