"""Train/validation split behavior: determinism, stratification, freezing."""

from collections import Counter

import numpy as np
import pytest

from neurodecode.splits import ensure_split, load_split, save_split, split_train_val


def test_partition_properties():
    train, val = split_train_val(50, 10, seed=0)
    assert len(train) == 40 and len(val) == 10
    assert np.all(np.diff(train) > 0) and np.all(np.diff(val) > 0)
    combined = np.sort(np.concatenate([train, val]))
    np.testing.assert_array_equal(combined, np.arange(50))


def test_same_seed_reproduces():
    a = split_train_val(100, 20, seed=3)
    b = split_train_val(100, 20, seed=3)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_different_seed_differs():
    a = split_train_val(100, 20, seed=3)
    b = split_train_val(100, 20, seed=4)
    assert not np.array_equal(a[1], b[1])


def test_empty_val_allowed():
    train, val = split_train_val(10, 0, seed=0)
    assert len(val) == 0
    np.testing.assert_array_equal(train, np.arange(10))


def test_rejects_val_covering_everything():
    with pytest.raises(ValueError):
        split_train_val(10, 10, seed=0)


def test_stratified_split_balances_concepts():
    concepts = [f"c{i % 5}" for i in range(40)]  # 8 members per concept
    _, val = split_train_val(40, 10, seed=1, concept_ids=concepts)
    counts = Counter(concepts[i] for i in val)
    # round-robin: 10 draws over 5 concepts is exactly 2 each
    assert set(counts.values()) == {2}


def test_stratified_split_uneven_request():
    concepts = [f"c{i % 4}" for i in range(16)]
    _, val = split_train_val(16, 6, seed=2, concept_ids=concepts)
    counts = Counter(concepts[i] for i in val)
    assert max(counts.values()) - min(counts.values()) <= 1


def test_stratified_label_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        split_train_val(10, 2, seed=0, concept_ids=["a"] * 9)


def test_save_load_round_trip(tmp_path):
    train, val = split_train_val(30, 6, seed=9)
    path = tmp_path / "split.json"
    save_split(path, train, val, seed=9)
    loaded_train, loaded_val, seed = load_split(path)
    np.testing.assert_array_equal(loaded_train, train)
    np.testing.assert_array_equal(loaded_val, val)
    assert seed == 9


def test_ensure_split_freezes_first_result(tmp_path):
    path = tmp_path / "split.json"
    first = ensure_split(path, 30, 6, seed=1)
    # a different seed must not change a frozen split
    second = ensure_split(path, 30, 6, seed=99)
    np.testing.assert_array_equal(first[1], second[1])


def test_ensure_split_rejects_wrong_total(tmp_path):
    path = tmp_path / "split.json"
    ensure_split(path, 30, 6, seed=1)
    with pytest.raises(ValueError, match="30"):
        ensure_split(path, 40, 6, seed=1)
