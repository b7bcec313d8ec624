# Copyright 2026 The kbvqa Authors
# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the kbvqa retrieval and reranking engine."""

from ._kbvqa import (
    DataError,
    Embeddings,
    FlatIndex,
    KnowledgeBase,
    TransportError,
    UsageError,
    contrastive_loss,
    exact_match,
    mine_negatives,
    normalize_answer,
    recall_at_k,
    render_prompt,
    rerank,
)

__all__ = [
    "DataError",
    "Embeddings",
    "FlatIndex",
    "KnowledgeBase",
    "TransportError",
    "UsageError",
    "contrastive_loss",
    "exact_match",
    "mine_negatives",
    "normalize_answer",
    "recall_at_k",
    "render_prompt",
    "rerank",
]
