from importlib import metadata

try:
    __version__ = metadata.version("vtcomp")
except metadata.PackageNotFoundError:
    __version__ = "0.x" # backup

from .utils import configure_logging

configure_logging()

from .cost import ModelDims, prefill_report
from .plan import DropPlan, DropStrategy, apply_drop, apply_plan, build_plan
from .schedule import CompressionSchedule, ScheduleKind, build_stepwise_matching
from .scoring import (
    ChunkConfig,
    FrameScoreTable,
    QuestionAttention,
    SegmentConfig,
    global_score,
    segmented_scores,
    select_top_k,
)

__all__ = [
    "__version__",
    "ChunkConfig",
    "CompressionSchedule",
    "DropPlan",
    "DropStrategy",
    "FrameScoreTable",
    "ModelDims",
    "QuestionAttention",
    "ScheduleKind",
    "SegmentConfig",
    "apply_drop",
    "apply_plan",
    "build_plan",
    "build_stepwise_matching",
    "global_score",
    "prefill_report",
    "segmented_scores",
    "select_top_k",
]
