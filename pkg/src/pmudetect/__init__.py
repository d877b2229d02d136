"""Unsupervised detection of professional malicious users in rating data.

Professional malicious users blackmail retailers with fake feedback while
masking it: a glowing rating over a scathing review, or a one-star rating
over a glowing review, never both negatives at once.  This package profiles
the gap between a rating-side score and a review-side sentiment score,
learns a structured attention metric over the resulting profile vectors,
and clusters users to flag the malicious ones.  An evaluation harness
covers baselines, threshold sweeps, metric/attention ablations, and the
effect of dropping flagged users on classic recommenders.
"""

from .config import RunConfig, load_config
from .data import (Dataset, Interaction, SynthConfig, dataset_stats,
                   generate_synthetic, load_dataset, save_dataset, split)
from .detect import DetectionReport, kmeans_metric, label_pmu, run_mmd
from .errors import ConfigError, DataError, SamplingError, TrainingError
from .evaluate import (Confusion, RankingResult, ablation_suite,
                       baseline_kmeanspp, baseline_sod, confusion,
                       enhancement_experiment, rank_eval, sen_spe_f, sweep)
from .lfm import FactorModel, lfm_loss, rating_score, train_lfm
from .metric import (MetricModel, ProfileVector, attention_vector, distance,
                     init_metric, mlc_loss, profile_vector, psd_project,
                     sample_triplets, train_mlc)
from .profiling import (CandidateSet, GapVector, candidate_set, gap_vector,
                        sentiment_gap)
from .recommenders import train_recommender
from .sentiment import (SentimentModel, Vocab, attention_pool, build_vocab,
                        create_sentiment_model, gru_step, score_review,
                        train_sentiment)

__version__ = "0.1.0"
