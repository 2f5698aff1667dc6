"""Select frames from a synthetic long video, then compress the survivors layer by layer.

Run with ``python end_to_end.py``; pass ``-v`` for the library's INFO logs.
"""

import sys

import numpy as np
from loguru import logger

from vtcomp import (
    ChunkConfig,
    CompressionSchedule,
    SegmentConfig,
    build_plan,
    prefill_report,
    segmented_scores,
    select_top_k,
)
from vtcomp.bench import BiasOracleConfig, gen_bias_attention
from vtcomp.cost import CHARGE_OUTPUT, LVBENCH_QUERY_TOKENS
from vtcomp.toy import ToyConfig, forward, init_params
from vtcomp.utils import configure_logging

TOTAL_FRAMES = 1024
SELECTED = 32


def main(verbosity: int = 0) -> None:
    configure_logging(verbosity)

    # A mid-video event competing with a strong end-of-context bias.
    oracle = gen_bias_attention(
        BiasOracleConfig(
            total_frames=TOTAL_FRAMES,
            end_bias=4.0,
            needle_frame=400,
            needle_signal=3.0,
            noise_scale=0.2,
            seed=1,
        )
    )
    table = segmented_scores(oracle, TOTAL_FRAMES, SegmentConfig(clip_size=1), ChunkConfig(n_selected_frames=SELECTED))
    selection = select_top_k(table, SELECTED)
    logger.info(f"needle rank {table.rank_of(400)}, selected {selection.frames[:8]} ...")
    print(f"needle frame 400 ranked {table.rank_of(400)} of {TOTAL_FRAMES}")

    # Run the selected frames through a toy decoder with a cosine drop plan.
    config = ToyConfig(num_layers=4, num_heads=2, model_width=32, mlp_width=64)
    rng = np.random.default_rng(0)
    video = rng.standard_normal((SELECTED, 16, config.model_width))
    question = rng.standard_normal((4, config.model_width))
    plan = build_plan(CompressionSchedule.cosine(16, config.num_layers))
    trace = forward(init_params(config, seed=0), config, video, question, plan)
    print(f"video tokens entering each layer: {trace.video_totals}")

    report = prefill_report([1024, 2048, 4096], LVBENCH_QUERY_TOKENS, CompressionSchedule.cosine(16, 28),
                            charge=CHARGE_OUTPUT)
    for frames, _, baseline, compressed, reduction in report.rows():
        print(f"{frames:5d} frames: {baseline:7.1f} -> {compressed:7.1f} TFLOPs ({reduction:.1%} saved)")


if __name__ == "__main__":
    main(sys.argv[1:].count("-v"))
