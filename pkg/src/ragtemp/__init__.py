"""Temperature and context-perturbation robustness harness for RAG question answering."""
from .config import RunConfig, load_config
from .dataset import QASample, SamplePlan, load_dataset, stratified_sample
from .llm import GenerationRequest, entropy, generate, temperature_softmax
from .metrics import bertscore_greedy, exact_match, rouge, token_f1
from .perturb import PerturbationKind, apply_perturbation, perturb_count, replay_edits
from .pipeline import expand_conditions, resume, run_benchmark
from .stats import aggregate_condition, baseline_cv, fragile_samples, per_sample_stats

__version__ = "0.1.0"

__all__ = [
    "GenerationRequest", "PerturbationKind", "QASample", "RunConfig", "SamplePlan",
    "aggregate_condition", "apply_perturbation", "baseline_cv", "bertscore_greedy",
    "entropy", "exact_match", "expand_conditions", "fragile_samples", "generate",
    "load_config", "load_dataset", "per_sample_stats", "perturb_count", "replay_edits",
    "resume", "rouge", "run_benchmark", "stratified_sample", "temperature_softmax", "token_f1",
]
