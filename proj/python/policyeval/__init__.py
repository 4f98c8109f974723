"""Policy-conditioned LLM classifier evaluation utilities.

Thin wrapper over the native module: prompt rendering, response parsing,
classification metrics, and explanation-divergence statistics.
"""

try:
    from ._policyeval import *  # noqa: F401,F403  (installed package layout)
    from ._policyeval import __doc__ as _native_doc
except ImportError:
    from _policyeval import *  # noqa: F401,F403  (in-tree build on PYTHONPATH)
    from _policyeval import __doc__ as _native_doc

__all__ = [
    "PolicyText",
    "RenderedPrompt",
    "ScoreTriple",
    "KsResult",
    "EmbeddingMatrix",
    "PolicyevalError",
    "load_policy",
    "render",
    "list_ablation_suite",
    "guided_thoughts",
    "strip_thinking",
    "parse_response",
    "invalid_rate",
    "score_positive_class",
    "majority_vote",
    "average_over_runs",
    "delta",
    "cos_dist",
    "cross_model_distribution",
    "sdv",
    "scmd",
    "reduce_pca",
    "trustworthiness",
    "cohesion_scores",
    "ks_two_sample",
    "crossing_verdict",
    "significance_stars",
]
