from .niah import NiahInstance, NiahResult, make_instance, niah_report, niah_rows, niah_run, recovery_rate
from .oracle import (
    BiasOracle,
    BiasOracleConfig,
    BiasResult,
    bias_experiment,
    bias_report,
    bias_sweep,
    frozen_bias_fixture,
    gen_bias_attention,
)

__all__ = [
    "BiasOracle",
    "BiasOracleConfig",
    "BiasResult",
    "NiahInstance",
    "NiahResult",
    "bias_experiment",
    "bias_report",
    "bias_sweep",
    "frozen_bias_fixture",
    "gen_bias_attention",
    "make_instance",
    "niah_report",
    "niah_rows",
    "niah_run",
    "recovery_rate",
]
