"""Retrieval and RSA tests built on hand-rankable similarity matrices."""

import numpy as np
import pytest

from neurodecode.evaluation import (
    concept_mean_embeddings,
    rank_candidates,
    rsa_matrix,
    text_retrieval,
    zero_shot_retrieval,
)
from neurodecode.features import FeatureBank


# --- ranking ----------------------------------------------------------------

def test_rank_candidates_descending_score():
    order = rank_candidates(np.array([0.1, 0.9, 0.5]), ["a", "b", "c"])
    assert order == [1, 2, 0]


def test_rank_candidates_breaks_ties_by_id():
    # Equal scores: "b" (index 2) must precede "c" (index 0).
    order = rank_candidates(np.array([0.5, 0.9, 0.5]), ["c", "a", "b"])
    assert order == [1, 2, 0]


# --- zero-shot retrieval ----------------------------------------------------

def hand_case():
    # Trial 0 ranks img2 > img0 > img1; trial 1 ranks img1 > img2 > img0.
    sims = np.array([[0.2, -0.3, 0.9], [0.1, 0.8, 0.4]])
    return sims, ["img0", "img1", "img2"]


def test_zero_shot_hand_case():
    sims, candidates = hand_case()
    result = zero_shot_retrieval(sims, ["img2", "img0"], candidates, k_list=(1, 2, 3))
    # Trial 0 hits at rank 0, trial 1 at rank 2.
    assert result.top_k == {1: 0.5, 2: 0.5, 3: 1.0}
    assert result.ranked_ids[0] == ["img2", "img0", "img1"]
    assert result.ranked_ids[1] == ["img1", "img2", "img0"]
    assert result.n_trials == 2 and result.n_candidates == 3


def test_zero_shot_per_subject_split():
    sims, candidates = hand_case()
    result = zero_shot_retrieval(
        sims, ["img2", "img0"], candidates, k_list=(1,), subject_ids=["s1", "s2"]
    )
    assert result.per_subject == {"s1": {1: 1.0}, "s2": {1: 0.0}}


def test_zero_shot_to_dict_uses_string_keys():
    sims, candidates = hand_case()
    result = zero_shot_retrieval(sims, ["img2", "img0"], candidates, k_list=(1,))
    payload = result.to_dict()
    assert payload["top_k"] == {"1": 0.5}
    assert "ranked_ids" not in payload


def test_zero_shot_input_errors():
    sims, candidates = hand_case()
    with pytest.raises(ValueError, match="absent from the candidate set"):
        zero_shot_retrieval(sims, ["img9", "img0"], candidates)
    with pytest.raises(ValueError, match=r"k=4"):
        zero_shot_retrieval(sims, ["img2", "img0"], candidates, k_list=(4,))
    with pytest.raises(ValueError, match="unique"):
        zero_shot_retrieval(sims, ["img0", "img0"], ["img0", "img0", "img1"])
    with pytest.raises(ValueError, match="candidate_ids length"):
        zero_shot_retrieval(sims, ["img0", "img0"], ["img0", "img1"])
    with pytest.raises(ValueError, match="truth_image_ids length"):
        zero_shot_retrieval(sims, ["img0"], candidates)
    with pytest.raises(ValueError, match="subject_ids"):
        zero_shot_retrieval(
            sims, ["img2", "img0"], candidates, k_list=(1,), subject_ids=["s1"]
        )


def test_zero_shot_chance_level_on_random_scores():
    rng = np.random.default_rng(99)
    n_trials, n_candidates = 2000, 20
    candidates = [f"img{i}" for i in range(n_candidates)]
    sims = rng.standard_normal((n_trials, n_candidates))
    truth = [candidates[i] for i in rng.integers(0, n_candidates, n_trials)]
    result = zero_shot_retrieval(sims, truth, candidates, k_list=(1, 5, 20))
    assert abs(result.top_k[1] - 1 / 20) < 0.03
    assert abs(result.top_k[5] - 5 / 20) < 0.04
    assert result.top_k[20] == 1.0
    assert result.top_k[1] <= result.top_k[5]


def test_ranked_ids_are_permutations():
    sims, candidates = hand_case()
    result = zero_shot_retrieval(sims, ["img2", "img0"], candidates, k_list=(1,))
    for ids in result.ranked_ids:
        assert sorted(ids) == sorted(candidates)


# --- text retrieval ---------------------------------------------------------

def toy_bank(d=4, n=5):
    rng = np.random.default_rng(3)
    texts = np.eye(n, d, dtype=np.float32) + 0.01 * rng.standard_normal((n, d)).astype(
        np.float32
    )
    return FeatureBank(
        image_ids=[f"img{i}" for i in range(n)],
        image_features=rng.standard_normal((n, d)).astype(np.float32),
        text_features=texts,
        image_concepts=[f"c{i}" for i in range(n)],
    )


def test_text_retrieval_perfect_when_embeddings_equal_text_features():
    bank = toy_bank()
    truth = list(bank.image_ids)
    eeg = bank.text_features_for(truth)
    result = text_retrieval(eeg, bank, truth, k_list=(1,), subject_ids=["s1"] * 5)
    assert result.top_k[1] == 1.0
    assert result.per_subject["s1"][1] == 1.0


def test_text_retrieval_scale_invariance():
    bank = toy_bank()
    truth = list(bank.image_ids)
    eeg = bank.text_features_for(truth)
    plain = text_retrieval(eeg, bank, truth, k_list=(1, 3))
    scaled = text_retrieval(37.0 * eeg, bank, truth, k_list=(1, 3))
    assert plain.top_k == scaled.top_k


def test_text_retrieval_rejects_zero_norm():
    bank = toy_bank()
    eeg = np.zeros((2, 4))
    with pytest.raises(ValueError, match="zero-norm"):
        text_retrieval(eeg, bank, ["img0", "img1"])


# --- concept means and RSA --------------------------------------------------

def test_concept_mean_embeddings_hand_case():
    embeddings = np.array([[1.0, 0.0], [3.0, 0.0], [0.0, 2.0]])
    means, concepts = concept_mean_embeddings(embeddings, ["b", "a", "a"])
    assert concepts == ["a", "b"]
    assert np.array_equal(means, np.array([[1.5, 1.0], [1.0, 0.0]]))


def test_concept_mean_embeddings_length_error():
    with pytest.raises(ValueError, match="align"):
        concept_mean_embeddings(np.zeros((3, 2)), ["a", "b"])


def test_rsa_matrix_hand_case():
    embeddings = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 5.0]])
    matrix, stats = rsa_matrix(embeddings, ["x", "x", "y"])
    assert np.array_equal(np.diag(matrix), np.ones(3))
    assert np.array_equal(matrix, matrix.T)
    assert matrix[0, 1] == pytest.approx(1.0)
    assert matrix[0, 2] == pytest.approx(0.0)
    assert stats["x"]["intra_mean"] == pytest.approx(1.0)
    assert stats["x"]["inter_mean"] == pytest.approx(0.0)
    assert stats["x"]["n_intra_pairs"] == 1.0
    assert stats["x"]["n_inter_pairs"] == 2.0
    assert np.isnan(stats["y"]["intra_mean"])  # singleton category
    assert stats["y"]["n_inter_pairs"] == 2.0


def test_rsa_matrix_planted_clusters_have_higher_intra(rng):
    centers = rng.standard_normal((3, 16)) * 4.0
    embeddings, labels = [], []
    for c, center in enumerate(centers):
        for _ in range(5):
            embeddings.append(center + 0.2 * rng.standard_normal(16))
            labels.append(f"cat{c}")
    matrix, stats = rsa_matrix(np.array(embeddings), labels)
    assert matrix.shape == (15, 15)
    for category, entry in stats.items():
        assert entry["intra_mean"] > entry["inter_mean"], category


def test_rsa_matrix_errors():
    with pytest.raises(ValueError, match="align"):
        rsa_matrix(np.ones((3, 2)), ["a", "b"])
    bad = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValueError, match="zero-norm"):
        rsa_matrix(bad, ["a", "b"])
