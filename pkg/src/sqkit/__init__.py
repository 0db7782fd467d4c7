"""sqkit: train, run, and benchmark subjective speech-quality predictors.

The pieces compose in pipeline order: corpora (manifests, splits, pooling,
synthetic fixtures) feed the frontend (audio to frame features), models
score feature matrices, training fits them, inference runs them in
parametric or retrieval modes, and metrics/aggregation compare everything
across test sets. The `sqkit` command drives the same functions from
recipe config files.
"""

from .corpus import (
    CorpusManifest,
    PooledCorpus,
    Sample,
    SynthSpec,
    generate_synthetic_corpus,
    load_corpus_dir,
    load_manifest,
    load_sidecar,
    pool,
    save_corpus_dir,
    save_manifest,
    split_random,
    subsample,
)
from .errors import (
    AudioFormatError,
    CheckpointError,
    ManifestError,
    SqkitError,
    UndefinedCorrelationError,
    UndefinedRatioError,
    ValidationError,
)
from .export import (
    DistributionData,
    EmbeddingDump,
    distribution_data,
    export_embeddings,
    pca_2d,
    select_samples,
)
from .frontend import (
    EmbeddingMatrix,
    FeatureScaler,
    FrontendConfig,
    extract_dsp,
    featurize,
    load_audio,
    load_precomputed,
    load_scaler,
    mel_center_frequencies,
    mel_filterbank,
    pad_repetitive,
    pool_time,
    resample_to_16k,
    save_precomputed,
    save_precomputed_text,
    save_scaler,
    write_wav,
)
from .inference import (
    Datastore,
    KnnConfig,
    NeighborSet,
    build_datastore,
    domain_embedding_retrieval_predict,
    knn_predict,
    knn_weights,
    load_datastore,
    nearest_dataset_id,
    parametric_predict,
    predict_split,
    retrieve_neighbors,
    save_datastore,
)
from .metrics import (
    DEFAULT_METRIC_KEYS,
    BenchCell,
    BenchMatrix,
    EvalPairs,
    MetricReport,
    aggregate,
    best_score_difference,
    best_score_ratio,
    compute_report,
    mse,
    pearson,
    spearman,
    system_aggregate,
)
from .model import (
    AlignNetParams,
    HeadParams,
    ScorePrediction,
    alignnet_backward,
    alignnet_forward,
    alignnet_raw,
    copy_params,
    head_backward,
    head_forward,
    head_raw,
    init_alignnet,
    init_head,
    load_params,
    params_equal,
    save_params,
    zero_grads,
)
from .seeding import named_rng
from .training import (
    CheckpointLedger,
    MdfResult,
    SeedSummary,
    TrainConfig,
    TrainResult,
    clipped_mse,
    run_seeds,
    select_criterion,
    train,
    train_mdf,
)

__version__ = "0.1.0"

__all__ = [
    "AlignNetParams",
    "AudioFormatError",
    "BenchCell",
    "BenchMatrix",
    "CheckpointError",
    "CheckpointLedger",
    "CorpusManifest",
    "Datastore",
    "DEFAULT_METRIC_KEYS",
    "DistributionData",
    "EmbeddingDump",
    "EmbeddingMatrix",
    "EvalPairs",
    "FeatureScaler",
    "FrontendConfig",
    "HeadParams",
    "KnnConfig",
    "ManifestError",
    "MdfResult",
    "MetricReport",
    "NeighborSet",
    "PooledCorpus",
    "Sample",
    "ScorePrediction",
    "SeedSummary",
    "SqkitError",
    "SynthSpec",
    "TrainConfig",
    "TrainResult",
    "UndefinedCorrelationError",
    "UndefinedRatioError",
    "ValidationError",
    "aggregate",
    "alignnet_backward",
    "alignnet_forward",
    "alignnet_raw",
    "copy_params",
    "best_score_difference",
    "best_score_ratio",
    "build_datastore",
    "clipped_mse",
    "compute_report",
    "distribution_data",
    "domain_embedding_retrieval_predict",
    "export_embeddings",
    "extract_dsp",
    "featurize",
    "generate_synthetic_corpus",
    "head_backward",
    "head_forward",
    "head_raw",
    "init_alignnet",
    "init_head",
    "knn_predict",
    "knn_weights",
    "load_audio",
    "load_corpus_dir",
    "load_datastore",
    "load_manifest",
    "load_params",
    "load_precomputed",
    "load_scaler",
    "load_sidecar",
    "mel_center_frequencies",
    "mel_filterbank",
    "mse",
    "named_rng",
    "nearest_dataset_id",
    "pad_repetitive",
    "parametric_predict",
    "params_equal",
    "pca_2d",
    "pearson",
    "pool",
    "pool_time",
    "predict_split",
    "resample_to_16k",
    "retrieve_neighbors",
    "run_seeds",
    "save_corpus_dir",
    "save_datastore",
    "save_manifest",
    "save_params",
    "save_precomputed",
    "save_precomputed_text",
    "save_scaler",
    "select_samples",
    "select_criterion",
    "spearman",
    "split_random",
    "subsample",
    "system_aggregate",
    "train",
    "train_mdf",
    "write_wav",
    "zero_grads",
]
