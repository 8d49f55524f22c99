import numpy as np

from mnsl.rng import brownian_increments, increments_batch, stream


def test_same_key_same_stream():
    a = stream(7, 3, 1).standard_normal(100)
    b = stream(7, 3, 1).standard_normal(100)
    assert np.array_equal(a, b)


def test_keys_give_distinct_streams():
    base = stream(7, 3, 1).standard_normal(64)
    for key in [(8, 3, 1), (7, 4, 1), (7, 3, 2)]:
        assert not np.array_equal(base, stream(*key).standard_normal(64))


def test_increment_shape_and_variance():
    dw = brownian_increments(11, 0, 2, 200_000, 1e-2)
    assert dw.shape == (200_000, 2)
    np.testing.assert_allclose(dw.var(axis=0), 1e-2, rtol=2e-2)
    assert abs(np.corrcoef(dw.T)[0, 1]) < 1e-2


def test_noise_columns_are_stream_prefixes():
    # column i is the step-indexed prefix of the (seed, sample, i) stream
    short = brownian_increments(5, 9, 3, 10, 0.25)
    long = brownian_increments(5, 9, 3, 40, 0.25)
    assert np.array_equal(short, long[:10])


def test_batch_is_order_invariant():
    fwd = increments_batch(2024, [0, 1, 2, 3], 2, 16, 1e-3)
    rev = increments_batch(2024, [3, 2, 1, 0], 2, 16, 1e-3)
    assert np.array_equal(fwd, rev[::-1])
    assert np.array_equal(fwd[2], brownian_increments(2024, 2, 2, 16, 1e-3))


def test_large_seed_accepted():
    assert np.isfinite(stream(2**70 + 5, 0, 0).standard_normal())
