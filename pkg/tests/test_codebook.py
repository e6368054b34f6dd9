import numpy as np
import pytest

from deatt import numeric_core as nc
from deatt.codebook import (
    Codebook,
    GatedSiameseCodebook,
    address,
    combo_id,
    estimate_joint_collision_rate,
    interaction_embedding,
)
from deatt.hashing import hash_to_bucket


def test_combo_id_is_ordered():
    a, b = combo_id(0, 5, 1, 9), combo_id(1, 9, 0, 5)
    assert a != b
    assert a.encode() != b.encode()
    assert len(a.encode()) == 20


def test_address_matches_hash():
    cb = Codebook.init(37, 4, np.random.default_rng(0), hash_seed=123)
    cid = combo_id(2, 77, 5, 3)
    assert address(cb, cid) == hash_to_bucket(123, cid.encode(), 37)
    assert 0 <= address(cb, cid) < 37


def test_single_codeword_codebook():
    cb = Codebook.init(1, 4, np.random.default_rng(0), hash_seed=1)
    assert address(cb, combo_id(0, 1, 1, 2)) == 0


def test_zero_gate_weights_halve_main_codeword():
    gsc = GatedSiameseCodebook.init(64, 4, 3, np.random.default_rng(0), seed=9, std=1.0)
    gsc.gate_weights.data[:] = 0.0
    cid = combo_id(0, 11, 3, 42)
    e = interaction_embedding(gsc, cid).data
    np.testing.assert_allclose(e, 0.5 * gsc.main.weights.data[address(gsc.main, cid)],
                               rtol=0, atol=1e-15)


def test_k0_returns_main_codeword():
    gsc = GatedSiameseCodebook.init(64, 4, 0, np.random.default_rng(1), std=1.0)
    cid = combo_id(1, 2, 3, 4)
    np.testing.assert_array_equal(interaction_embedding(gsc, cid).data,
                                  gsc.main.weights.data[address(gsc.main, cid)])
    assert set(gsc.parameters()) == {"codebook.main"}


def test_gate_matches_direct_formula():
    gsc = GatedSiameseCodebook.init(32, 3, 2, np.random.default_rng(2), std=1.0)
    gsc.gate_bias.data[:] = 0.3
    cid = combo_id(0, 1, 2, 3)
    votes = np.concatenate([cb.weights.data[address(cb, cid)] for cb in gsc.siamese])
    g = 1.0 / (1.0 + np.exp(-(votes @ gsc.gate_weights.data[:, 0] + 0.3)))
    expected = g * gsc.main.weights.data[address(gsc.main, cid)]
    np.testing.assert_allclose(interaction_embedding(gsc, cid).data, expected, atol=1e-14)


def test_distinct_seeds_required():
    rng = np.random.default_rng(0)
    a = Codebook.init(8, 2, rng, hash_seed=1)
    b = Codebook.init(8, 2, rng, hash_seed=1)
    with pytest.raises(ValueError):
        GatedSiameseCodebook(a, [b], nc.parameter(np.zeros((2, 1))), nc.parameter(np.zeros(1)))


def test_lookup_gradient_reaches_all_blocks():
    gsc = GatedSiameseCodebook.init(16, 3, 2, np.random.default_rng(3), std=0.5)
    params = gsc.parameters()
    cid = combo_id(0, 4, 1, 8)
    rep = nc.grad_check(lambda: nc.sum_all(interaction_embedding(gsc, cid)), params)
    assert rep.passed, rep.to_dict()


@pytest.mark.parametrize("k, expected, rel", [(1, 1 / 16, 0.10), (2, 1 / 256, 0.15)])
def test_collision_rate_law(k, expected, rel):
    rate = estimate_joint_collision_rate(k, 16, 300_000, rng_seed=4)
    assert abs(rate - expected) <= rel * expected


def test_collision_rate_decreases_with_k():
    rates = [estimate_joint_collision_rate(k, 8, 200_000, rng_seed=1) for k in (1, 2, 3)]
    assert rates[0] > rates[1] > rates[2]


def test_single_bucket_always_collides():
    assert estimate_joint_collision_rate(3, 1, 1000) == 1.0


def test_collision_rate_bad_args():
    with pytest.raises(ValueError):
        estimate_joint_collision_rate(1, 16, 0)
    with pytest.raises(ValueError):
        estimate_joint_collision_rate(0, 16, 10)
