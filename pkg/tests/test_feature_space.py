import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from deatt import numeric_core as nc
from deatt.feature_space import (
    EmbeddingTable,
    Example,
    FieldSchema,
    build_input,
    check_schemas,
    encode_feature,
    lookup_embeddings,
)
from deatt.hashing import (
    combo_fnv_array,
    feature_fnv_array,
    fmix64,
    fnv1a64,
    hash_to_bucket,
)
from deatt.codebook import combo_id


class TestHashing:
    def test_fnv_reference_vectors(self):
        # published FNV-1a 64-bit test vectors
        assert fnv1a64(b"") == 0xCBF29CE484222325
        assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a64(b"foobar") == 0x85944171F73967E8

    def test_fmix_fixed_point_and_bijective_sample(self):
        assert fmix64(0) == 0
        xs = range(1, 5000)
        assert len({fmix64(x) for x in xs}) == len(xs)

    def test_deterministic(self):
        payload = encode_feature(3, 12345)
        assert hash_to_bucket(7, payload, 97) == hash_to_bucket(7, payload, 97)

    def test_single_bucket(self):
        assert hash_to_bucket(99, b"anything", 1) == 0

    def test_zero_buckets(self):
        with pytest.raises(ValueError):
            hash_to_bucket(0, b"x", 0)

    def test_chi_square_uniform(self):
        counts = np.bincount(
            [hash_to_bucket(11, encode_feature(0, i), 64) for i in range(100_000)], minlength=64
        )
        assert stats.chisquare(counts).pvalue > 0.001

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**16 - 1), st.integers(0, 2**64 - 1),
           st.integers(0, 2**64 - 1), st.integers(1, 10**6))
    def test_vectorized_matches_scalar_feature(self, field, raw, seed, buckets):
        from deatt.hashing import bucket_array

        fnv = feature_fnv_array(np.array([field]), np.array([raw], dtype=np.uint64))
        assert int(fnv[0]) == fnv1a64(encode_feature(field, raw))
        assert int(bucket_array(fnv, seed, buckets)[0]) == hash_to_bucket(
            seed, encode_feature(field, raw), buckets)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 200), st.integers(0, 2**64 - 1), st.integers(0, 200),
           st.integers(0, 2**64 - 1))
    def test_vectorized_matches_scalar_combo(self, fi, a, fj, b):
        fnv = combo_fnv_array(np.array([fi]), np.array([a], dtype=np.uint64),
                              np.array([fj]), np.array([b], dtype=np.uint64))
        assert int(fnv[0]) == fnv1a64(combo_id(fi, a, fj, b).encode())


def make_tables(n=3, buckets=10, d=4, seed=0):
    rng = np.random.default_rng(seed)
    schemas = [FieldSchema(i, f"f{i}", buckets) for i in range(n)]
    return [EmbeddingTable.init(s, d, rng, hash_seed=5, std=1.0) for s in schemas]


class TestFeatureSpace:
    def test_encode_layout(self):
        assert encode_feature(1, 2) == b"\x01\x00" + b"\x02" + b"\x00" * 7

    def test_schema_checks(self):
        with pytest.raises(ValueError):
            FieldSchema(0, "bad", 0)
        with pytest.raises(ValueError):
            check_schemas([FieldSchema(0, "a", 2), FieldSchema(0, "b", 2)])

    def test_table_shape_mismatch(self):
        with pytest.raises(nc.ShapeError):
            EmbeddingTable(FieldSchema(0, "a", 3), nc.parameter(np.zeros((4, 2))), 0)

    def test_lookup_rows(self):
        tables = make_tables()
        ex = Example((17, 4, 900), 1, 0)
        x = build_input(ex, tables)
        assert x.shape == (3, 4)
        for i, t in enumerate(tables):
            np.testing.assert_array_equal(x.data[i], t.weights.data[t.bucket(ex.feature_ids[i])])

    def test_batch_matches_single(self):
        tables = make_tables()
        ids = np.array([[1, 2, 3], [4, 5, 6]], dtype=np.uint64)
        batch = lookup_embeddings(ids, tables).data
        for b in range(2):
            single = build_input(Example(tuple(int(v) for v in ids[b]), 0, 0), tables).data
            np.testing.assert_array_equal(batch[b], single)

    def test_wrong_arity(self):
        with pytest.raises(nc.ShapeError):
            build_input(Example((1, 2), 0, 0), make_tables())

    def test_gradient_touches_only_used_rows(self):
        tables = make_tables(buckets=50)
        ex = Example((1, 2, 3), 1, 0)
        with nc.GradTape() as tape:
            loss = nc.sum_all(build_input(ex, tables))
        grads = tape.gradient(loss, [t.weights for t in tables])
        for i, (t, g) in enumerate(zip(tables, grads)):
            used = t.bucket(ex.feature_ids[i])
            assert np.all(g[used] == 1.0)
            mask = np.ones(50, dtype=bool)
            mask[used] = False
            assert np.all(g[mask] == 0.0)
