"""Block covers, the cover assumptions, and the lumped segment system."""

import numpy as np
import pytest

from blockpg import CoverError, build_cover, explicit_cover, lump, validate_cover
from blockpg.blocking import boundary


@pytest.mark.parametrize(
    "T, L, p, expected",
    [
        (13, 5, 1, [(1, 5), (5, 9), (9, 13)]),
        (5, 5, 0, [(1, 5)]),
        (10, 4, 2, [(1, 4), (3, 6), (5, 8), (7, 10)]),
    ],
)
def test_build_cover_examples(T, L, p, expected):
    cover = build_cover(T, L, p)
    assert list(cover.blocks) == expected
    assert cover.common_L == L and cover.common_p == p
    assert validate_cover(cover) == []


def test_build_cover_divisibility_error_names_nearest_T():
    with pytest.raises(CoverError) as err:
        build_cover(6, 3, 1)
    msg = str(err.value)
    assert "7" in msg and "5" in msg


def test_build_cover_rejects_bad_parameters():
    with pytest.raises(CoverError):
        build_cover(5, 6, 0)
    with pytest.raises(CoverError):
        build_cover(5, 3, 3)
    with pytest.raises(CoverError):
        build_cover(5, 3, -1)


def test_validate_cover_accepts_overlapping_pair():
    cover = explicit_cover(5, [(1, 3), (2, 5)])
    assert validate_cover(cover) == []


def test_validate_cover_flags_nested_block_as_b1():
    cover = explicit_cover(4, [(1, 4), (2, 3)])
    problems = validate_cover(cover)
    assert any(v.startswith("B1") for v in problems)


def test_validate_cover_flags_unseparated_blocks_as_b2():
    cover = explicit_cover(5, [(1, 2), (3, 5)])
    # Consecutive blocks may touch; the pair here is fine under B2 only if
    # they are consecutive.  Add a third block to make 1 and 3 adjacent.
    assert validate_cover(cover) == []
    cover = explicit_cover(5, [(1, 2), (2, 3), (3, 5)])
    problems = validate_cover(cover)
    assert any(v.startswith("B2") for v in problems)


def test_validate_cover_flags_missing_sites():
    cover = explicit_cover(6, [(1, 2), (4, 6)])
    problems = validate_cover(cover)
    assert any(v.startswith("cover") for v in problems)


def test_boundary_examples():
    cover = build_cover(13, 5, 1)
    assert boundary(cover, 2) == (4, 10)
    assert boundary(cover, 1) == (None, 6)
    assert boundary(cover, 3) == (8, None)
    with pytest.raises(CoverError):
        boundary(cover, 4)


def test_boundary_sites_union():
    cover = build_cover(13, 5, 1)
    assert cover.boundary_sites() == {4, 6, 8, 10}


def test_lump_three_block_example():
    xi = lump(build_cover(13, 5, 1))
    assert xi.segment_lengths == (4, 1, 3, 1, 4)
    assert list(xi.cover.blocks) == [(1, 2), (2, 4), (4, 5)]
    assert xi.cover.T == 5


def test_lump_two_block_example():
    xi = lump(build_cover(8, 5, 2))
    assert xi.segment_lengths == (3, 2, 3)
    assert list(xi.cover.blocks) == [(1, 2), (2, 3)]


def test_lump_rejects_empty_interior_segments():
    # L = 2p makes the interior segments empty.
    with pytest.raises(CoverError, match="L > 2p"):
        lump(build_cover(10, 4, 2))


def test_lump_rejects_zero_overlap():
    with pytest.raises(CoverError, match="p = 0"):
        lump(build_cover(10, 5, 0))


def test_lump_rejects_single_block():
    with pytest.raises(CoverError):
        lump(build_cover(5, 5, 0))


def test_random_valid_covers_validate_and_lump():
    rng = np.random.default_rng(31)
    for _ in range(100):
        p = int(rng.integers(0, 4))
        L = int(rng.integers(max(p + 1, 2), p + 8))
        m = int(rng.integers(1, 7))
        T = (L - p) * m + p
        cover = build_cover(T, L, p)
        assert validate_cover(cover) == []
        # Every site covered; boundary sites of each block sit in a
        # neighbouring block when the overlap is positive.
        covered = set()
        for k in range(1, m + 1):
            covered.update(cover.sites(k))
        assert covered == set(range(1, T + 1))
        if p >= 1:
            for k in range(1, m + 1):
                left, right = cover.boundary(k)
                if left is not None:
                    assert k - 1 in cover.owners(left)
                if right is not None:
                    assert k + 1 in cover.owners(right)
        if p >= 1 and L > 2 * p and m >= 2:
            xi = lump(cover)
            # Segments reproduce 1:T in order.
            pos = 1
            for s, u in xi.segments:
                assert s == pos
                pos = u + 1
            assert pos == T + 1
            assert len(xi.segments) == 2 * m - 1
            assert validate_cover(xi.cover) == []


def test_canonical_strings():
    assert build_cover(13, 5, 1).canonical() == "L=5,p=1,m=3:[1-5][5-9][9-13]"
    assert explicit_cover(6, [(1, 3), (3, 5), (5, 6)]).canonical() == "m=3:[1-3][3-5][5-6]"
    # A ragged cover that happens to share sizes/overlaps is recognized.
    assert explicit_cover(13, [(1, 5), (5, 9), (9, 13)]).common_L == 5
