"""Oracle-driven expression annotation and the image operations it relies on."""

from .oracles import HttpOracle, OracleError, OracleTimeout, OracleUnavailable, ScriptedOracle
from .pipeline import (
    CaptionCandidate,
    ExpressionCandidate,
    Oracles,
    PipelineAborted,
    PipelineConfig,
    run_pipeline,
    stage1_caption,
    stage2_synthesize,
    stage2_validate,
)

__all__ = [
    "CaptionCandidate",
    "ExpressionCandidate",
    "HttpOracle",
    "OracleError",
    "OracleTimeout",
    "OracleUnavailable",
    "Oracles",
    "PipelineAborted",
    "PipelineConfig",
    "ScriptedOracle",
    "run_pipeline",
    "stage1_caption",
    "stage2_synthesize",
    "stage2_validate",
]
