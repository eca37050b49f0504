"""Locally private recommendation pipeline.

Bloom-filter encoding and two-round randomized response on the client,
neural decoding and Kmeans clustering on the recommender side, plus the
attack games used to measure what the reports leak.
"""
from .attacks import (
    AttackResult,
    AttackSetup,
    AveragingResult,
    bayes_guess,
    run_advanced_game,
    run_averaging_game,
    run_basic_game,
    single_bit_flip_prob,
)
from .bloom import BloomEncoder, BloomParams, bits_from_hex, bits_to_hex, contains, encode, optimal_k, optimal_m
from .clustering import (
    ClusteringResult,
    KMeans,
    clustering_utility,
    elbow_scan,
    kmeans,
    matched_accuracy,
    profile_features,
)
from .decoder import (
    ClassificationReport,
    MlpConfig,
    MLPDecoder,
    ProfileDecoder,
    classification_report,
    decode_profile,
    evaluate,
    load_model,
    predict,
    save_model,
    train,
)
from .experiment import ExperimentConfig, ExperimentReport, run_pipeline, run_sweep, run_tradeoff
from .perturbation import (
    BudgetReport,
    ClientState,
    PrivacyParams,
    RandomizedResponse,
    ReportRecord,
    budget,
    channel_probs,
    epsilon1_of_f,
    epsilon2_of,
    f_of_epsilon1,
    irr,
    perturb_report,
    prr,
)
from .profiles import LabeledDataset, Profile, Taxonomy, builtin_taxonomy, generate_dataset, read_dataset, write_dataset

__version__ = "0.1.0"
