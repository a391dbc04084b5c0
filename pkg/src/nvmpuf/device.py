"""Behavioral simulation of the REAP-NVM arbiter design.

A device is a 128-stage arbiter with an NVM cell pair between the switch
stages. Challenges carry 138 bits: 128 switch bits, 7 bits selecting one
of 128 cell pairs, 3 bits selecting the multi-level target. Evaluation
races two signal copies through the switch network (standard additive
delay model with four delay parameters per stage), adds the selected
pair's differential NVM delay at the configured level, and arbitrates the
sign. Only the selected pair is written; the pair used by the previous
challenge is reset to the default level. Wear counters track every set
pulse and reset.

The two cells of a pair sit on opposite race lines, so only their delay
difference matters. Each cell's delay is a shared strictly-increasing base
ramp plus a cell-specific per-level perturbation; the two cells of a pair
take complementary perturbations, making the pair differential a
pair-specific zero-sum pattern over the levels, with exactly half the
levels pulling each way and magnitudes from well below to well above the
stage-delay spread. A per-pair intercept plus a global level trend (the
strongest structure a linear attack can represent) captures none of it,
which is the multi-level cells' contribution against modeling attacks,
while the weakest-magnitude levels keep the switch race decisive for a
fair share of challenges.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_STAGES = 128
N_PAIRS = 128
N_CELLS = 2 * N_PAIRS
N_LEVELS = 8

#: Per-cell delay model shape parameters (units of nvm_scale).
NVM_OFFSET_SIGMA = 0.2
#: Half of each pair's differential perturbation magnitudes, one per level,
#: used with both signs (units of nvm_scale). Mixed so some levels leave the
#: switch race decisive and others dominate it.
NVM_PATTERN_MAGNITUDES = (1.2, 2.0, 3.0, 4.5)
#: Base ramp step between levels; must exceed the largest perturbation swing
#: so every row stays strictly increasing.
NVM_BASE_STEP = 10.0


@dataclass(eq=False)
class Challenge:
    """One 138-bit challenge: switch bits, pair selector, target level."""

    switch_bits: np.ndarray
    pair_index: int
    level: int

    def __post_init__(self) -> None:
        bits = np.asarray(self.switch_bits, dtype=np.uint8)
        if bits.shape != (N_STAGES,) or np.any(bits > 1):
            raise ValueError(f"switch_bits must be {N_STAGES} bits")
        if not 0 <= self.pair_index < N_PAIRS:
            raise ValueError(f"pair_index must be in [0, {N_PAIRS}), got {self.pair_index}")
        if not 0 <= self.level < N_LEVELS:
            raise ValueError(f"level must be in [0, {N_LEVELS}), got {self.level}")
        self.switch_bits = bits

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Challenge":
        return cls(
            rng.integers(0, 2, N_STAGES, dtype=np.uint8),
            int(rng.integers(0, N_PAIRS)),
            int(rng.integers(0, N_LEVELS)),
        )


@dataclass(eq=False)
class CrpRecord:
    """One challenge with its single-bit response."""

    challenge: Challenge
    response: int


@dataclass(eq=False)
class PufInstance:
    """A simulated device: delay parameters plus mutable wear state.

    Wear counters only ever grow; evaluation mutates them, so a device is
    single-writer. Everything the response depends on is stored explicitly,
    which makes snapshots reproducible.
    """

    stage_deltas: np.ndarray
    nvm_delay_table: np.ndarray
    default_level: int = 0
    noise_sigma: float = 0.0
    nvm_enabled: bool = True
    wear_set: np.ndarray = field(default_factory=lambda: np.zeros(N_CELLS, dtype=np.int64))
    wear_reset: np.ndarray = field(default_factory=lambda: np.zeros(N_CELLS, dtype=np.int64))
    last_used_pair: int | None = None

    def __post_init__(self) -> None:
        self.stage_deltas = np.asarray(self.stage_deltas, dtype=float)
        self.nvm_delay_table = np.asarray(self.nvm_delay_table, dtype=float)
        if self.stage_deltas.shape != (N_STAGES, 4):
            raise ValueError(f"stage_deltas must be ({N_STAGES}, 4)")
        if self.nvm_delay_table.shape != (N_CELLS, N_LEVELS):
            raise ValueError(f"nvm_delay_table must be ({N_CELLS}, {N_LEVELS})")
        if np.any(np.diff(self.nvm_delay_table, axis=1) <= 0):
            raise ValueError("nvm_delay_table rows must be strictly increasing in level")

    def total_set_pulses(self) -> int:
        return int(self.wear_set.sum())

    def total_resets(self) -> int:
        return int(self.wear_reset.sum())


def default_nvm_scale(variation_sigma: float) -> float:
    # Same order as the total stage-delay spread across 2*N_STAGES draws.
    return variation_sigma * float(np.sqrt(2 * N_STAGES))


def new_device(
    seed: int,
    variation_sigma: float = 1.0,
    noise_sigma: float = 0.0,
    *,
    nvm_scale: float | None = None,
    nvm_enabled: bool = True,
) -> PufInstance:
    """Draw a device from the process-variation model; deterministic per seed.

    Stage deltas are i.i.d. Gaussian. Cell delays are a shared base ramp
    (``NVM_BASE_STEP`` per level) plus a Gaussian per-cell offset and a
    per-level perturbation: each pair draws a random per-level ordering of
    the signed magnitudes ``+/-NVM_PATTERN_MAGNITUDES``, applied with
    opposite signs to its two cells. The shared ramp keeps every row
    strictly increasing; the perturbations carry the pair differential.
    """
    if variation_sigma < 0 or noise_sigma < 0:
        raise ValueError("sigmas must be nonnegative")
    stage_ss, nvm_ss = np.random.SeedSequence(seed).spawn(2)
    stage_deltas = np.random.default_rng(stage_ss).normal(
        0.0, variation_sigma, (N_STAGES, 4)
    )
    if nvm_scale is None:
        nvm_scale = default_nvm_scale(variation_sigma)
    rng = np.random.default_rng(nvm_ss)
    offsets = rng.normal(0.0, NVM_OFFSET_SIGMA, N_CELLS)
    signed = np.array(
        [m for mag in NVM_PATTERN_MAGNITUDES for m in (mag, -mag)], dtype=float
    )
    if signed.size != N_LEVELS:
        raise RuntimeError("pattern magnitudes must cover all levels")
    patterns = rng.permuted(np.tile(signed, (N_PAIRS, 1)), axis=1)
    perturbations = np.empty((N_CELLS, N_LEVELS))
    perturbations[0::2] = patterns / 2.0
    perturbations[1::2] = -patterns / 2.0
    # The shared nominal level ladder survives a zero perturbation scale
    # (no process variation leaves identical, still level-monotone cells)
    # and always dominates the largest perturbation swing.
    ramp = NVM_BASE_STEP * max(nvm_scale, 1.0) * np.arange(N_LEVELS)
    table = ramp[None, :] + nvm_scale * (offsets[:, None] + perturbations)
    return PufInstance(
        stage_deltas=stage_deltas,
        nvm_delay_table=table,
        noise_sigma=noise_sigma,
        nvm_enabled=nvm_enabled,
    )


def pulses_for_level(level: int | np.ndarray) -> int | np.ndarray:
    """Set pulses charged for writing a target level; a level-0 write still
    costs one pulse."""
    return np.maximum(level, 1)


def _delay_differences(stage_deltas: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Top-minus-bottom arrival-time difference after the switch ladder.

    ``bits`` has shape (n, N_STAGES); bit 0 keeps the lines parallel, bit 1
    crosses them.
    """
    n = bits.shape[0]
    top = np.zeros(n)
    bottom = np.zeros(n)
    for i in range(N_STAGES):
        a, b, c, d = stage_deltas[i]
        crossed = bits[:, i] == 1
        new_top = np.where(crossed, bottom + c, top + a)
        new_bottom = np.where(crossed, top + d, bottom + b)
        top, bottom = new_top, new_bottom
    return top - bottom


def _nvm_differentials(device: PufInstance, pairs: np.ndarray, levels: np.ndarray) -> np.ndarray:
    table = device.nvm_delay_table
    return table[2 * pairs, levels] - table[2 * pairs + 1, levels]


def _apply_wear(device: PufInstance, pairs: np.ndarray, levels: np.ndarray) -> None:
    pulses = pulses_for_level(levels).astype(np.int64)
    np.add.at(device.wear_set, 2 * pairs, pulses)
    np.add.at(device.wear_set, 2 * pairs + 1, pulses)
    previous = np.empty_like(pairs)
    previous[0] = -1 if device.last_used_pair is None else device.last_used_pair
    previous[1:] = pairs[:-1]
    changed = (previous >= 0) & (previous != pairs)
    np.add.at(device.wear_reset, 2 * previous[changed], 1)
    np.add.at(device.wear_reset, 2 * previous[changed] + 1, 1)
    device.last_used_pair = int(pairs[-1])


def _responses(
    device: PufInstance,
    bits: np.ndarray,
    pairs: np.ndarray,
    levels: np.ndarray,
    noise_rng: np.random.Generator | None,
) -> np.ndarray:
    delta = _delay_differences(device.stage_deltas, bits)
    if device.nvm_enabled:
        delta = delta + _nvm_differentials(device, pairs, levels)
    if device.noise_sigma > 0:
        if noise_rng is None:
            raise ValueError("noise_sigma > 0 requires a noise seed or generator")
        delta = delta + noise_rng.normal(0.0, device.noise_sigma, delta.size)
    return (delta > 0).astype(np.uint8)


def _noise_generator(
    noise: int | np.random.Generator | None,
) -> np.random.Generator | None:
    if noise is None or isinstance(noise, np.random.Generator):
        return noise
    return np.random.default_rng(noise)


def evaluate(
    device: PufInstance,
    challenge: Challenge,
    noise_seed: int | np.random.Generator | None = None,
) -> int:
    """Evaluate one challenge, updating wear state.

    The selected pair's cells take ``max(level, 1)`` set pulses; if a
    different pair was used by the previous challenge, that pair's cells
    take one reset each and return to the default level. With
    ``noise_sigma == 0`` the response is a pure function of device and
    challenge.
    """
    pairs = np.array([challenge.pair_index])
    levels = np.array([challenge.level])
    _apply_wear(device, pairs, levels)
    response = _responses(
        device,
        challenge.switch_bits[None, :],
        pairs,
        levels,
        _noise_generator(noise_seed),
    )
    return int(response[0])


def evaluate_batch(
    device: PufInstance,
    bits: np.ndarray,
    pairs: np.ndarray,
    levels: np.ndarray,
    noise_seed: int | np.random.Generator | None = None,
    *,
    track_wear: bool = True,
) -> np.ndarray:
    """Vectorized evaluation of many challenges in order.

    Produces the same responses and wear as evaluating one by one.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    pairs = np.asarray(pairs, dtype=np.int64)
    levels = np.asarray(levels, dtype=np.int64)
    if track_wear and bits.shape[0]:
        _apply_wear(device, pairs, levels)
    return _responses(device, bits, pairs, levels, _noise_generator(noise_seed))


def random_challenges(
    n: int, seed_or_rng: int | np.random.Generator, *, baseline_apuf: bool = False
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniform random challenges as (bits, pairs, levels) arrays.

    Baseline APUF mode zeroes the pair and level fields so datasets match
    the classic 128-bit arbiter format.
    """
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else np.random.default_rng(seed_or_rng)
    )
    bits = rng.integers(0, 2, (n, N_STAGES), dtype=np.uint8)
    pairs = rng.integers(0, N_PAIRS, n, dtype=np.int64)
    levels = rng.integers(0, N_LEVELS, n, dtype=np.int64)
    if baseline_apuf:
        pairs[:] = 0
        levels[:] = 0
    return bits, pairs, levels


def gen_crps(
    device: PufInstance,
    n: int,
    seed: int,
    *,
    noise_seed: int | None = None,
    baseline_apuf: bool = False,
) -> list[CrpRecord]:
    """Generate ``n`` uniform random CRPs with wear tracking.

    The challenge stream is determined by ``seed`` alone, so two devices
    given the same seed see identical challenges; the noise stream is
    independent (derived from ``noise_seed`` when given, otherwise from a
    separate child of ``seed``).
    """
    if n < 1:
        raise ValueError("need at least one challenge")
    challenge_ss, default_noise_ss = np.random.SeedSequence(seed).spawn(2)
    noise_ss = (
        np.random.SeedSequence(noise_seed) if noise_seed is not None else default_noise_ss
    )
    bits, pairs, levels = random_challenges(
        n, np.random.default_rng(challenge_ss), baseline_apuf=baseline_apuf
    )
    responses = evaluate_batch(
        device, bits, pairs, levels, np.random.default_rng(noise_ss)
    )
    return [
        CrpRecord(Challenge(bits[i], int(pairs[i]), int(levels[i])), int(responses[i]))
        for i in range(n)
    ]


def crps_to_arrays(
    records: list[CrpRecord],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    bits = np.stack([r.challenge.switch_bits for r in records])
    pairs = np.array([r.challenge.pair_index for r in records], dtype=np.int64)
    levels = np.array([r.challenge.level for r in records], dtype=np.int64)
    responses = np.array([r.response for r in records], dtype=np.uint8)
    return bits, pairs, levels, responses


# ---------------------------------------------------------------------------
# Dataset and snapshot files
# ---------------------------------------------------------------------------
#
# CRP datasets are JSON lines, one record per line:
#   {"c": "<32 hex chars>", "p": <0-127>, "l": <0-7>, "r": 0|1}
# The hex field encodes the 128 switch bits most-significant-first.


def bits_to_hex(bits: np.ndarray) -> str:
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return format(value, "032x")


def hex_to_bits(text: str) -> np.ndarray:
    value = int(text, 16)
    return np.array(
        [(value >> (N_STAGES - 1 - i)) & 1 for i in range(N_STAGES)], dtype=np.uint8
    )


def crps_to_jsonl(records: list[CrpRecord]) -> str:
    lines = []
    for r in records:
        lines.append(
            json.dumps(
                {
                    "c": bits_to_hex(r.challenge.switch_bits),
                    "p": r.challenge.pair_index,
                    "l": r.challenge.level,
                    "r": r.response,
                },
                separators=(",", ":"),
            )
        )
    return "\n".join(lines) + "\n"


def crps_from_jsonl(text: str) -> list[CrpRecord]:
    records = []
    for line in text.splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        records.append(
            CrpRecord(
                Challenge(hex_to_bits(doc["c"]), int(doc["p"]), int(doc["l"])),
                int(doc["r"]),
            )
        )
    return records


def save_crps(records: list[CrpRecord], path: str | Path) -> None:
    Path(path).write_text(crps_to_jsonl(records))


def load_crps(path: str | Path) -> list[CrpRecord]:
    return crps_from_jsonl(Path(path).read_text())


def device_to_document(device: PufInstance) -> dict:
    return {
        "format": "nvmpuf-device-v1",
        "default_level": device.default_level,
        "noise_sigma": device.noise_sigma,
        "nvm_enabled": device.nvm_enabled,
        "stage_deltas": [[float(x) for x in row] for row in device.stage_deltas],
        "nvm_delay_table": [[float(x) for x in row] for row in device.nvm_delay_table],
        "wear_set": [int(x) for x in device.wear_set],
        "wear_reset": [int(x) for x in device.wear_reset],
        "last_used_pair": device.last_used_pair,
    }


def device_from_document(doc: dict) -> PufInstance:
    return PufInstance(
        stage_deltas=np.array(doc["stage_deltas"], dtype=float),
        nvm_delay_table=np.array(doc["nvm_delay_table"], dtype=float),
        default_level=int(doc.get("default_level", 0)),
        noise_sigma=float(doc.get("noise_sigma", 0.0)),
        nvm_enabled=bool(doc.get("nvm_enabled", True)),
        wear_set=np.array(doc["wear_set"], dtype=np.int64),
        wear_reset=np.array(doc["wear_reset"], dtype=np.int64),
        last_used_pair=(
            None if doc.get("last_used_pair") is None else int(doc["last_used_pair"])
        ),
    )


def save_device(device: PufInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(device_to_document(device), indent=2) + "\n")


def load_device(path: str | Path) -> PufInstance:
    return device_from_document(json.loads(Path(path).read_text()))
