"""Multi-label chief-complaint classification from short reason-for-visit texts."""

from .dataset import (
    Encounter,
    LabelVocabulary,
    DatasetSplit,
    MisspellConfig,
    SynthConfig,
    crop_text,
    apply_exclusions,
    build_label_vocab,
    split_no_overlap,
    kfold,
    misspell,
    generate_synthetic,
)
from .text_pipeline import (
    TfidfModel,
    SparseVector,
    preprocess,
    extract_ngrams,
    fit_tfidf,
    transform_tfidf,
    save_tfidf,
    load_tfidf,
)
from .model import (
    ClassifierParams,
    TrainConfig,
    AdamState,
    TrainingLog,
    EmbeddingFile,
    init_params,
    fuse,
    forward,
    bce_loss,
    backward,
    adam_step,
    train,
    save_model,
    load_model,
    write_embedding_file,
    read_embedding_file,
)
from .metrics import (
    TTestResult,
    micro_pr_auc,
    micro_roc_auc,
    welch_t_test,
    synth_samples_from_summary,
)
from .analysis import (
    TsneConfig,
    MeanCCMatrix,
    mean_cc_vectors,
    tsne_project,
    export_projection,
)

__version__ = "0.1.0"
