import numpy as np

from vstree.seeding import derive_seed, stream


def test_same_label_same_draws():
    np.testing.assert_array_equal(stream(7, "init").standard_normal(5), stream(7, "init").standard_normal(5))


def test_labels_are_independent_streams():
    assert not np.array_equal(stream(7, "init").standard_normal(5), stream(7, "batches").standard_normal(5))


def test_seed_changes_the_stream():
    assert not np.array_equal(stream(7, "init").standard_normal(5), stream(8, "init").standard_normal(5))


def test_derived_seed_fits_in_32_bits():
    seed = derive_seed(123, "split")
    assert seed == derive_seed(123, "split")
    assert 0 <= seed < 2**32
