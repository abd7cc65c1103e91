"""Knowledge bases with vector, graph and custom retrieval, research reports
and RAG evaluation, backed by the sagekb C++ engine."""

from ._sagekb import (
    Engine,
    SageKbError,
    aggregate,
    concept_ratio,
    faithfulness_ratio,
    parse_correctness,
    parse_verdict,
    synthetic_dataset,
)

__all__ = [
    "Engine",
    "SageKbError",
    "aggregate",
    "concept_ratio",
    "faithfulness_ratio",
    "parse_correctness",
    "parse_verdict",
    "synthetic_dataset",
]
