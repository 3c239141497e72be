"""Masked-reconstruction pretraining tests.

Patch layout and masking are checked against hand-written index arithmetic,
the loss against a brute-force triple-loop numpy sum, and weight transfer at
the bit level by comparing full state dicts.
"""

import numpy as np
import pytest
import torch

from neurodecode.config import ConfigError
from neurodecode.encoder import EEGEncoder, EncoderConfig, TsConvConfig
from neurodecode.pretrain import (
    MaskedReconstructionPretrainer,
    ReconstructionDecoder,
    corrupt,
    load_loss_history,
    mask_count,
    patchify,
    reconstruction_loss,
    sample_mask,
    transfer_weights,
    unpatchify,
)


# --- patch layout -----------------------------------------------------------

def test_patchify_channel_major_hand_case():
    # C=2, T=4, p=2: patch 0 must read [c0 t0, c0 t1, c1 t0, c1 t1].
    x = torch.arange(8, dtype=torch.float32).reshape(1, 2, 4)
    tokens = patchify(x, patch_len=2)
    assert tokens.shape == (1, 2, 4)
    assert tokens[0, 0].tolist() == [0.0, 1.0, 4.0, 5.0]
    assert tokens[0, 1].tolist() == [2.0, 3.0, 6.0, 7.0]


def test_patchify_unpatchify_inverse_bit_exact(rng):
    x = torch.as_tensor(rng.standard_normal((3, 5, 30)), dtype=torch.float32)
    for patch_len in (1, 2, 5, 6, 30):
        tokens = patchify(x, patch_len)
        assert tokens.shape == (3, 30 // patch_len, 5 * patch_len)
        assert torch.equal(unpatchify(tokens, channels=5), x)


def test_patchify_rejects_non_divisor():
    x = torch.zeros(1, 2, 10)
    with pytest.raises(ConfigError, match="does not divide"):
        patchify(x, patch_len=3)


def test_unpatchify_rejects_bad_width():
    with pytest.raises(ValueError, match="multiple of channels"):
        unpatchify(torch.zeros(1, 2, 7), channels=3)


# --- masking ----------------------------------------------------------------

def test_mask_count_rounds_half_up():
    expected = {0.0: 0, 0.15: 4, 0.3: 8, 0.5: 13, 0.75: 19, 1.0: 25}
    for ratio, count in expected.items():
        assert mask_count(25, ratio) == count
    with pytest.raises(ConfigError, match="mask ratio"):
        mask_count(25, 1.5)
    with pytest.raises(ConfigError, match="mask ratio"):
        mask_count(25, -0.1)


def test_sample_mask_rows_are_sorted_unique_and_in_range(rng):
    plan = sample_mask(batch_size=40, n_patches=25, ratio=0.3, rng=rng)
    assert plan.indices.shape == (40, 8)
    for row in plan.indices:
        assert len(set(row.tolist())) == 8
        assert np.all(np.diff(row) > 0)
        assert row.min() >= 0 and row.max() < 25


def test_sample_mask_ratio_edges(rng):
    empty = sample_mask(3, 10, 0.0, rng)
    assert empty.indices.shape == (3, 0)
    full = sample_mask(3, 10, 1.0, rng)
    assert np.array_equal(full.indices, np.tile(np.arange(10), (3, 1)))


def test_corrupt_touches_only_masked_patches(rng):
    tokens = torch.as_tensor(rng.standard_normal((6, 10, 12)), dtype=torch.float32)
    plan = sample_mask(6, 10, 0.3, rng)
    corrupted = corrupt(tokens, plan, rng)
    masked = np.zeros((6, 10), dtype=bool)
    for i, row in enumerate(plan.indices):
        masked[i, row] = True
    assert torch.equal(corrupted[~masked], tokens[~masked])
    # Continuous noise almost surely differs from the original everywhere.
    assert not torch.equal(corrupted[masked], tokens[masked])


def test_corrupt_zero_ratio_returns_identical_copy(rng):
    tokens = torch.as_tensor(rng.standard_normal((2, 5, 6)), dtype=torch.float32)
    corrupted = corrupt(tokens, sample_mask(2, 5, 0.0, rng), rng)
    assert torch.equal(corrupted, tokens)
    assert corrupted is not tokens


def test_corrupt_rejects_mismatched_plan(rng):
    tokens = torch.zeros(4, 10, 6)
    wrong_batch = sample_mask(3, 10, 0.3, rng)
    with pytest.raises(ValueError, match="mask plan"):
        corrupt(tokens, wrong_batch, rng)
    wrong_patches = sample_mask(4, 8, 0.3, rng)
    with pytest.raises(ValueError, match="mask plan"):
        corrupt(tokens, wrong_patches, rng)


# --- loss -------------------------------------------------------------------

def loss_by_triple_loop(predicted, target, indices, loss_on):
    """Brute-force reference: explicit sums over samples, patches, entries."""
    b, n_patches, width = predicted.shape
    total, count = 0.0, 0
    for i in range(b):
        for l in range(n_patches):
            if loss_on == "masked" and l not in set(indices[i].tolist()):
                continue
            for w in range(width):
                total += (predicted[i, l, w] - target[i, l, w]) ** 2
                count += 1
    return total / count


def test_reconstruction_loss_matches_brute_force_both_modes():
    rng = np.random.default_rng(2024)
    for trial in range(100):
        b = int(rng.integers(1, 6))
        n_patches = int(rng.integers(2, 13))
        width = int(rng.integers(1, 13))
        ratio = float(rng.uniform(0.1, 0.9))
        predicted = rng.standard_normal((b, n_patches, width))
        target = rng.standard_normal((b, n_patches, width))
        plan = sample_mask(b, n_patches, ratio, rng)
        if plan.n_masked == 0:
            continue
        for loss_on in ("all", "masked"):
            got = reconstruction_loss(
                torch.as_tensor(predicted), torch.as_tensor(target), plan, loss_on
            ).item()
            want = loss_by_triple_loop(predicted, target, plan.indices, loss_on)
            assert abs(got - want) <= 1e-6 * max(1.0, abs(want)), (trial, loss_on)


def test_reconstruction_loss_masked_with_no_masked_patches_is_zero(rng):
    plan = sample_mask(2, 5, 0.0, rng)
    loss = reconstruction_loss(torch.ones(2, 5, 3), torch.zeros(2, 5, 3), plan, "masked")
    assert loss.item() == 0.0


def test_reconstruction_loss_errors():
    with pytest.raises(ValueError, match="shape mismatch"):
        reconstruction_loss(torch.zeros(1, 2, 3), torch.zeros(1, 2, 4))
    with pytest.raises(ValueError, match="requires a mask plan"):
        reconstruction_loss(torch.zeros(1, 2, 3), torch.zeros(1, 2, 3), None, "masked")
    with pytest.raises(ConfigError, match="loss_on"):
        reconstruction_loss(torch.zeros(1, 2, 3), torch.zeros(1, 2, 3), loss_on="sum")


# --- decoder ----------------------------------------------------------------

def test_decoder_output_shape_and_determinism():
    decoder = ReconstructionDecoder(
        in_features=16, n_patches=5, patch_width=12, width=32, depth=2, heads=4, seed=3
    )
    features = torch.as_tensor(
        np.random.default_rng(0).standard_normal((4, 16)), dtype=torch.float32
    )
    out = decoder(features)
    assert out.shape == (4, 5, 12)
    twin = ReconstructionDecoder(
        in_features=16, n_patches=5, patch_width=12, width=32, depth=2, heads=4, seed=3
    )
    assert torch.equal(out, twin(features))


def test_decoder_rejects_indivisible_width():
    with pytest.raises(ConfigError, match="divisible"):
        ReconstructionDecoder(in_features=8, n_patches=2, patch_width=4, width=30, heads=4)


# --- trainer ----------------------------------------------------------------

def make_pretrainer(config, **overrides):
    kwargs = dict(
        patch_len=10,
        mask_ratio=0.3,
        decoder_width=32,
        decoder_depth=1,
        decoder_heads=4,
        epochs=2,
        batch_size=16,
        encoder_config=config,
        seed=0,
    )
    kwargs.update(overrides)
    return MaskedReconstructionPretrainer(**kwargs)


def test_pretrainer_fit_smoke(tiny_dataset, tiny_encoder_config):
    train, _, _ = tiny_dataset
    pre = make_pretrainer(tiny_encoder_config).fit(train)
    assert isinstance(pre.encoder_, EEGEncoder)
    assert pre.loss_history_.shape == (2,)
    assert np.all(np.isfinite(pre.loss_history_))
    feats = pre.encoder_.features(
        torch.as_tensor(train.data[:2], dtype=torch.float32), train.subject_ids[:2]
    )
    assert feats.shape[0] == 2


def test_pretrainer_is_deterministic(tiny_dataset, tiny_encoder_config):
    train, _, _ = tiny_dataset
    first = make_pretrainer(tiny_encoder_config).fit(train)
    second = make_pretrainer(tiny_encoder_config).fit(train)
    assert np.array_equal(first.loss_history_, second.loss_history_)
    for name, tensor in first.encoder_.state_dict().items():
        assert torch.equal(tensor, second.encoder_.state_dict()[name]), name


def test_pretrainer_seed_changes_history(tiny_dataset, tiny_encoder_config):
    train, _, _ = tiny_dataset
    first = make_pretrainer(tiny_encoder_config, seed=0).fit(train)
    second = make_pretrainer(tiny_encoder_config, seed=1).fit(train)
    assert not np.array_equal(first.loss_history_, second.loss_history_)


def test_pretrainer_rejects_mismatched_config(tiny_dataset):
    train, _, _ = tiny_dataset
    wrong = EncoderConfig(
        channels=train.n_channels + 1,
        time_samples=train.n_samples,
        embedding_dim=8,
        subject_ids=("s00",),
        tsconv=TsConvConfig.for_time_samples(train.n_samples),
    )
    with pytest.raises(ConfigError, match="encoder config expects"):
        make_pretrainer(wrong).fit(train)


def test_pretrainer_rejects_bad_patch_len(tiny_dataset, tiny_encoder_config):
    train, _, _ = tiny_dataset
    with pytest.raises(ConfigError, match="does not divide"):
        make_pretrainer(tiny_encoder_config, patch_len=7).fit(train)


def test_pretrainer_get_params_round_trip(tiny_encoder_config):
    pre = make_pretrainer(tiny_encoder_config, mask_ratio=0.5)
    params = pre.get_params()
    assert params["mask_ratio"] == 0.5
    clone = MaskedReconstructionPretrainer(**params)
    assert clone.get_params() == params


# --- weight transfer --------------------------------------------------------

@pytest.fixture
def encoder_pair(tiny_encoder_config):
    source = EEGEncoder(tiny_encoder_config, seed=11)
    target = EEGEncoder(tiny_encoder_config, seed=22)
    return source, target


def state_snapshot(module):
    return {name: tensor.clone() for name, tensor in module.state_dict().items()}


def test_transfer_none_leaves_target_untouched(encoder_pair):
    source, target = encoder_pair
    before = state_snapshot(target)
    report = transfer_weights(source.state_dict(), target, "none")
    assert report["copied"] == []
    after = target.state_dict()
    for name, tensor in before.items():
        assert torch.equal(tensor, after[name]), name


def test_transfer_all_copies_every_tensor(encoder_pair):
    source, target = encoder_pair
    report = transfer_weights(source.state_dict(), target, "all")
    assert report["skipped"] == []
    source_state = source.state_dict()
    for name, tensor in target.state_dict().items():
        assert torch.equal(tensor, source_state[name]), name


def test_transfer_all_except_subject_splits_on_prefix(encoder_pair):
    source, target = encoder_pair
    before = state_snapshot(target)
    report = transfer_weights(source.state_dict(), target, "all_except_subject")
    source_state = source.state_dict()
    after = target.state_dict()
    subject_names = [n for n in after if n.startswith("subject_adapter.")]
    assert subject_names, "encoder must expose per-subject tensors"
    assert sorted(report["skipped"]) == sorted(subject_names)
    for name in after:
        if name.startswith("subject_adapter."):
            assert torch.equal(after[name], before[name]), name
        else:
            assert torch.equal(after[name], source_state[name]), name


def test_transfer_rejects_shape_mismatch(tiny_encoder_config):
    source = EEGEncoder(tiny_encoder_config, seed=11)
    state = source.state_dict()
    state["head.weight"] = torch.zeros(3, 3)
    target = EEGEncoder(tiny_encoder_config, seed=22)
    with pytest.raises(ValueError, match="head.weight"):
        transfer_weights(state, target, "all")


def test_transfer_rejects_unknown_tensor_and_strategy(encoder_pair):
    source, target = encoder_pair
    state = source.state_dict()
    state["phantom.weight"] = torch.zeros(2)
    with pytest.raises(ValueError, match="phantom.weight"):
        transfer_weights(state, target, "all")
    with pytest.raises(ConfigError, match="strategy"):
        transfer_weights(source.state_dict(), target, "some")


# --- history csv ------------------------------------------------------------

def test_loss_history_round_trip(tmp_path):
    from neurodecode.pretrain import save_loss_history

    losses = [0.9, 0.30000000000000004, 0.1]
    path = tmp_path / "loss.csv"
    save_loss_history(path, losses)
    assert np.array_equal(load_loss_history(path), np.array(losses))
    text = path.read_text()
    assert text.splitlines()[0] == "epoch,loss"
    assert "0.30000000000000004" in text


def test_loss_history_rejects_wrong_header(tmp_path):
    path = tmp_path / "loss.csv"
    path.write_text("step,value\n1,0.5\n")
    with pytest.raises(ValueError, match="header"):
        load_loss_history(path)
