"""Invariant inference and explainable anomaly detection for web API logs.

The package learns an augmented entity model of an application (API calls,
database tables, session environments), infers how those entities join,
proposes per-call invariants, keeps only the ones all training traffic
satisfies, and then flags and explains any call that breaks them.
"""

from .config import PipelineConfig, load_config
from .detector import check_corpus, evaluate_metrics
from .dsl import Invariant, evaluate, explain, parse_invariant, print_invariant
from .errors import ApivetError
from .relations import Relationship
from .schema import SchemaBundle, flatten_api_signature, parse_create_table

__version__ = "0.1.0"

__all__ = [
    "ApivetError",
    "Invariant",
    "PipelineConfig",
    "Relationship",
    "SchemaBundle",
    "check_corpus",
    "evaluate",
    "evaluate_metrics",
    "explain",
    "flatten_api_signature",
    "load_config",
    "parse_create_table",
    "parse_invariant",
    "print_invariant",
    "__version__",
]
