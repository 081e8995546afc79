"""Uncertainty-calibrated, explainable retrieval reranking."""

from ._calrank import (  # noqa: F401
    Corpus,
    Document,
    InputError,
    InvertedIndex,
    NumericError,
    Query,
    RetrievalResult,
    accuracy,
    bm25_retrieve,
    build_index,
    calibration_metrics,
    cyclic_lr,
    exact_match,
    exact_shapley,
    extractive_read,
    generate_synthetic_dataset,
    jsd,
    kernel_shap,
    lime,
    load_corpus,
    load_queries,
    merge_contexts,
    mutual_information,
    normalize_answer,
    r_precision,
    recall_at_k,
    rouge_l,
    run_pipeline,
    save_corpus,
    save_queries,
    swa_update,
    symmetric_imputation_batch,
    tfidf_cosine_retrieve,
    token_f1,
    tokenize,
)

__version__ = "0.1.0"
