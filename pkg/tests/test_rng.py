import numpy as np

from confcover.rng import TAGS, run_replicas, stream


def test_streams_reproducible_and_distinct():
    a = stream(7, "walk", 3).random(5)
    assert np.array_equal(a, stream(7, "walk", 3).random(5))
    assert not np.array_equal(a, stream(7, "walk", 4).random(5))
    assert not np.array_equal(a, stream(7, "levels", 3).random(5))
    assert not np.array_equal(a, stream(8, "walk", 3).random(5))


def test_tags_unique():
    assert len(set(TAGS.values())) == len(TAGS)


def test_replicas_independent_of_threads():
    fn = lambda rng, i: (i, float(rng.standard_normal()))  # noqa: E731
    one = run_replicas(fn, 5, "probe", 20, threads=1)
    many = run_replicas(fn, 5, "probe", 20, threads=4)
    assert one == many
    assert [r[0] for r in one] == list(range(20))
