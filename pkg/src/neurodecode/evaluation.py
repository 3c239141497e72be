"""Zero-shot retrieval metrics and representational similarity analysis."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import FeatureBank
from .validation import check_matrix


@dataclass
class RetrievalResult:
    """Top-k accuracies overall and per subject, plus the full rankings."""

    top_k: dict[int, float]
    per_subject: dict[str, dict[int, float]]
    n_trials: int
    n_candidates: int
    ranked_ids: list[list[str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "top_k": {str(k): v for k, v in self.top_k.items()},
            "per_subject": {
                s: {str(k): v for k, v in accs.items()} for s, accs in self.per_subject.items()
            },
            "n_trials": self.n_trials,
            "n_candidates": self.n_candidates,
        }


def rank_candidates(scores: np.ndarray, candidate_ids: Sequence[str]) -> list[int]:
    """Order candidates by descending score; ties broken by ascending id."""
    order = sorted(range(len(candidate_ids)), key=lambda j: (-scores[j], candidate_ids[j]))
    return order


def zero_shot_retrieval(
    similarities: np.ndarray,
    truth_image_ids: Sequence[str],
    candidate_ids: Sequence[str],
    k_list: Sequence[int] = (1, 5),
    subject_ids: Sequence[str] | None = None,
) -> RetrievalResult:
    """Score retrieval from a (n_trials, n_candidates) similarity matrix.

    Top-k accuracy is the fraction of trials whose true image id appears among
    the k best-scored candidates. Chance for top-k over n candidates is k / n.
    """
    similarities = check_matrix(np.asarray(similarities, dtype=np.float64), "similarities")
    candidate_ids = list(candidate_ids)
    truth_image_ids = list(truth_image_ids)
    n_trials, n_candidates = similarities.shape
    if len(candidate_ids) != n_candidates:
        raise ValueError(
            f"candidate_ids length {len(candidate_ids)} disagrees with matrix width {n_candidates}"
        )
    if len(set(candidate_ids)) != n_candidates:
        raise ValueError("candidate_ids must be unique")
    if len(truth_image_ids) != n_trials:
        raise ValueError(
            f"truth_image_ids length {len(truth_image_ids)} disagrees with n_trials {n_trials}"
        )
    known = set(candidate_ids)
    missing = sorted({t for t in truth_image_ids if t not in known})
    if missing:
        raise ValueError(f"true image ids absent from the candidate set: {missing}")
    k_list = sorted(set(int(k) for k in k_list))
    for k in k_list:
        if not 1 <= k <= n_candidates:
            raise ValueError(f"k={k} must lie in [1, {n_candidates}]")
    if subject_ids is not None and len(subject_ids) != n_trials:
        raise ValueError("subject_ids must align with trials")

    ranked_ids = []
    hit_rank = np.empty(n_trials, dtype=int)
    for i in range(n_trials):
        order = rank_candidates(similarities[i], candidate_ids)
        ids = [candidate_ids[j] for j in order]
        ranked_ids.append(ids)
        hit_rank[i] = ids.index(truth_image_ids[i])

    top_k = {k: float(np.mean(hit_rank < k)) for k in k_list}
    per_subject: dict[str, dict[int, float]] = {}
    if subject_ids is not None:
        for subject in sorted(set(subject_ids)):
            rows = [i for i, s in enumerate(subject_ids) if s == subject]
            per_subject[subject] = {
                k: float(np.mean(hit_rank[rows] < k)) for k in k_list
            }
    return RetrievalResult(
        top_k=top_k,
        per_subject=per_subject,
        n_trials=n_trials,
        n_candidates=n_candidates,
        ranked_ids=ranked_ids,
    )


def text_retrieval(
    eeg_embeddings: np.ndarray,
    bank: FeatureBank,
    truth_image_ids: Sequence[str],
    candidate_ids: Sequence[str] | None = None,
    k_list: Sequence[int] = (1, 5),
    subject_ids: Sequence[str] | None = None,
) -> RetrievalResult:
    """Retrieve against normalized text embeddings (no projection head).

    The emergent EEG-text alignment is scored exactly like image retrieval:
    cosine similarity between normalized EEG embeddings and normalized stored
    text features.
    """
    eeg = check_matrix(np.asarray(eeg_embeddings, dtype=np.float64), "eeg_embeddings")
    if candidate_ids is None:
        candidate_ids = list(bank.image_ids)
    texts = bank.text_features_for(candidate_ids).astype(np.float64)
    eeg_norms = np.linalg.norm(eeg, axis=1, keepdims=True)
    text_norms = np.linalg.norm(texts, axis=1, keepdims=True)
    if np.any(eeg_norms == 0) or np.any(text_norms == 0):
        raise ValueError("zero-norm embedding encountered in text retrieval")
    sims = (eeg / eeg_norms) @ (texts / text_norms).T
    return zero_shot_retrieval(sims, truth_image_ids, candidate_ids, k_list, subject_ids)


def concept_mean_embeddings(
    embeddings: np.ndarray, concept_ids: Sequence[str]
) -> tuple[np.ndarray, list[str]]:
    """Average per-trial embeddings by concept; concepts ordered by id."""
    embeddings = check_matrix(np.asarray(embeddings, dtype=np.float64), "embeddings")
    if len(concept_ids) != embeddings.shape[0]:
        raise ValueError("concept_ids must align with embedding rows")
    concepts = sorted(set(concept_ids))
    means = np.stack(
        [
            embeddings[[i for i, c in enumerate(concept_ids) if c == concept]].mean(axis=0)
            for concept in concepts
        ]
    )
    return means, concepts


def rsa_matrix(
    embeddings: np.ndarray, categories: Sequence[str]
) -> tuple[np.ndarray, dict[str, dict[str, float]]]:
    """Pairwise cosine similarity matrix plus intra/inter-category statistics.

    Parameters
    ----------
    embeddings : ndarray, shape (n_concepts, d)
        One embedding per concept (typically the concept-mean EEG embedding).
    categories : sequence of str
        Category label per concept row.

    Returns
    -------
    matrix : ndarray, shape (n_concepts, n_concepts)
        Symmetric cosine similarities with an exact unit diagonal.
    stats : dict
        Per category: mean intra-category similarity (off-diagonal pairs
        within the category) and mean inter-category similarity (pairs
        crossing the category boundary), with pair counts.
    """
    embeddings = check_matrix(np.asarray(embeddings, dtype=np.float64), "embeddings")
    if len(categories) != embeddings.shape[0]:
        raise ValueError("categories must align with embedding rows")
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero-norm embedding row; cosine similarity undefined")
    unit = embeddings / norms
    matrix = unit @ unit.T
    matrix = 0.5 * (matrix + matrix.T)
    np.fill_diagonal(matrix, 1.0)

    labels = np.asarray(list(categories))
    stats: dict[str, dict[str, float]] = {}
    for category in sorted(set(labels)):
        inside = np.nonzero(labels == category)[0]
        outside = np.nonzero(labels != category)[0]
        intra_vals = [
            matrix[i, j] for a, i in enumerate(inside) for j in inside[a + 1 :]
        ]
        inter_vals = [matrix[i, j] for i in inside for j in outside]
        stats[category] = {
            "intra_mean": float(np.mean(intra_vals)) if intra_vals else float("nan"),
            "inter_mean": float(np.mean(inter_vals)) if inter_vals else float("nan"),
            "n_intra_pairs": float(len(intra_vals)),
            "n_inter_pairs": float(len(inter_vals)),
        }
    return matrix, stats
