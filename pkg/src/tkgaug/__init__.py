"""Augmenting temporal knowledge graphs with filtered false negatives and hard negatives."""
from .data import Dataset, Quadruple, TkgIndex, add_inverse_relations, build_indices, load_dataset
from .evaluation import EvalReport, evaluate, preference_profile, rank, rank_fluctuation
from .filtering import CandidateNegative, FilterParams, filter_all, recovery_rate
from .model import ModelConfig, ModelState, init_model
from .scoring import ScoringParams, perturb_and_classify, score_candidates, triangle_scores
from .training import TrainSchedule, build_augmented_sets, run_two_stage

__version__ = "0.1.0"

__all__ = [
    "CandidateNegative", "Dataset", "EvalReport", "FilterParams", "ModelConfig", "ModelState",
    "Quadruple", "ScoringParams", "TkgIndex", "TrainSchedule", "add_inverse_relations",
    "build_augmented_sets", "build_indices", "evaluate", "filter_all", "init_model", "load_dataset",
    "perturb_and_classify", "preference_profile", "rank", "rank_fluctuation", "recovery_rate",
    "run_two_stage", "score_candidates", "triangle_scores",
]
