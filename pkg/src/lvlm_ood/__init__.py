"""Out-of-distribution detection evaluation for generative vision-language models.

Prompts a model to classify an image over a closed class list plus a rejection class with
per-class confidences, parses the free-text answer, turns confidences into OoD scores, and
reports AUROC, FPR@TPR, ECE and AURC. A two-stage mode first asks the model for near and far
auxiliary class names and then classifies against the enlarged list.
"""

from .benchmark import BenchmarkManifest, Role, Sample, builtin_benchmarks, load_manifest, stratified_subsample
from .metrics import EvalRecord, MetricsReport, aurc, auroc, build_report, ece, fpr_at_tpr
from .parse import FailureCase, FailureCode, ParsedResponse, parse_response, parse_suggestions
from .score import ProbMap, normalize, score_max, score_maxsub, score_sumsub
from .suggestions import SuggestionSet, SuggestionSource
from .vocab import REJECTION_CLASS, ClassTag, ClassVocabulary, EffectiveVocab

__version__ = "0.1.0"

__all__ = [
    "BenchmarkManifest", "Role", "Sample", "builtin_benchmarks", "load_manifest", "stratified_subsample",
    "EvalRecord", "MetricsReport", "aurc", "auroc", "build_report", "ece", "fpr_at_tpr",
    "FailureCase", "FailureCode", "ParsedResponse", "parse_response", "parse_suggestions",
    "ProbMap", "normalize", "score_max", "score_maxsub", "score_sumsub",
    "SuggestionSet", "SuggestionSource", "REJECTION_CLASS", "ClassTag", "ClassVocabulary", "EffectiveVocab",
]
