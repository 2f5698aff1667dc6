"""Multi-hop needle-in-a-haystack protocol over synthetic attention.

A chain of ``hops`` frames is planted in the video. In round ``r`` only hop
``r`` carries a signal, and only if every earlier hop was found: finding a clue
is what makes the next one visible. Each round scores the video with segmented
attention over overlapping chunks and keeps a single frame.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ..scoring import ChunkConfig, SegmentConfig, segmented_scores, select_top_k
from ..utils import render_csv
from .oracle import BiasOracle, BiasOracleConfig

NIAH_CHUNK = ChunkConfig(chunk_frames=512, n_repeat=8, n_selected_frames=1)
NIAH_SEGMENT = SegmentConfig(clip_size=1)
DEFAULT_NOISE_SCALE = 0.5


@dataclass(frozen=True)
class NiahInstance:
    """One planted reasoning chain.

    Attributes:
        total_frames: Frames in the video.
        hop_frames: Planted frames, in chain order.
        signals: Logit boost of each hop once it is reachable.
        seed: Seed the instance and its noise derive from.
        noise_scale: Standard deviation of the attention noise.
    """

    total_frames: int
    hop_frames: Tuple[int, ...]
    signals: Tuple[float, ...]
    seed: int
    noise_scale: float = DEFAULT_NOISE_SCALE

    def __post_init__(self):
        if not self.hop_frames:
            raise ValueError("at least one hop is required")
        if len(set(self.hop_frames)) != len(self.hop_frames):
            raise ValueError(f"hop frames must be distinct, got {self.hop_frames}")
        if len(self.signals) != len(self.hop_frames):
            raise ValueError(f"{len(self.signals)} signals for {len(self.hop_frames)} hops")
        if any(not 0 <= f < self.total_frames for f in self.hop_frames):
            raise ValueError(f"hop frames {self.hop_frames} outside [0, {self.total_frames})")

    @property
    def hops(self) -> int:
        return len(self.hop_frames)


def make_instance(
    total_frames: int,
    hops: int,
    signal: float,
    seed: int,
    noise_scale: float = DEFAULT_NOISE_SCALE,
) -> NiahInstance:
    """Plant ``hops`` distinct frames drawn from ``seed``."""
    if hops < 1 or hops > total_frames:
        raise ValueError(f"hops must be in [1, {total_frames}], got {hops}")
    placement = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    frames = placement.choice(total_frames, size=hops, replace=False)
    return NiahInstance(total_frames, tuple(int(f) for f in frames), (float(signal),) * hops, seed, noise_scale)


@dataclass(frozen=True)
class NiahResult:
    recovered: bool
    found: Tuple[bool, ...]
    ranks: Tuple[int, ...]
    selected: Tuple[int, ...]


def niah_run(
    instance: NiahInstance,
    chunk_cfg: ChunkConfig = NIAH_CHUNK,
    segment_cfg: SegmentConfig = NIAH_SEGMENT,
) -> NiahResult:
    """Follow the chain for ``hops`` rounds.

    Returns:
        Recovery flag (last hop found), per-round found flags, the rank of
        each hop in its round and the frame selected in each round.
    """
    children = np.random.SeedSequence(instance.seed).spawn(1 + instance.hops)
    found: List[bool] = []
    ranks: List[int] = []
    selected: List[int] = []
    for round_index, hop in enumerate(instance.hop_frames):
        reachable = all(found)
        signal = instance.signals[round_index] if reachable else 0.0
        cfg = BiasOracleConfig(total_frames=instance.total_frames, needle_frame=hop, needle_signal=signal)
        noise = instance.noise_scale * np.random.default_rng(children[1 + round_index]).standard_normal(
            (1, 1, 1, instance.total_frames)
        )
        oracle = BiasOracle(cfg, noise=noise)
        table = segmented_scores(oracle, instance.total_frames, segment_cfg, chunk_cfg)
        choice = select_top_k(table, chunk_cfg.n_selected_frames).frames
        found.append(hop in choice)
        ranks.append(table.rank_of(hop))
        selected.append(choice[0])
        logger.debug(f"seed {instance.seed} round {round_index}: hop {hop} rank {ranks[-1]}")
    return NiahResult(all(found), tuple(found), tuple(ranks), tuple(selected))


NIAH_HEADER = ("experiment", "seed", "total_frames", "hops", "signal", "noise_scale", "recovered", "hop_ranks")


def niah_rows(
    total_frames: int,
    hops: int,
    signal: float,
    seeds: Sequence[int],
    noise_scale: float = DEFAULT_NOISE_SCALE,
    chunk_cfg: ChunkConfig = NIAH_CHUNK,
    segment_cfg: SegmentConfig = NIAH_SEGMENT,
) -> List[Tuple]:
    """One :data:`NIAH_HEADER` row per seed."""
    rows = []
    for seed in seeds:
        instance = make_instance(total_frames, hops, signal, seed, noise_scale)
        result = niah_run(instance, chunk_cfg, segment_cfg)
        rows.append((
            "niah", seed, total_frames, hops, float(signal), float(noise_scale),
            result.recovered, ";".join(str(r) for r in result.ranks),
        ))
    return rows


def recovery_rate(
    total_frames: int,
    hops: int,
    signal: float,
    seeds: Sequence[int],
    noise_scale: float = DEFAULT_NOISE_SCALE,
    chunk_cfg: ChunkConfig = NIAH_CHUNK,
    segment_cfg: SegmentConfig = NIAH_SEGMENT,
) -> float:
    """Fraction of ``seeds`` whose chain is fully recovered."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    rows = niah_rows(total_frames, hops, signal, seeds, noise_scale, chunk_cfg, segment_cfg)
    rate = sum(row[6] for row in rows) / len(rows)
    logger.info(f"NIAH T={total_frames} hops={hops} signal={signal}: recovery {rate:.3f}")
    return rate


def niah_report(rows: Sequence[Tuple]) -> str:
    return render_csv(NIAH_HEADER, rows)
