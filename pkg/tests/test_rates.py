"""Wasserstein matrices and every contraction-rate bound."""

import math

import numpy as np
import pytest

from blockpg import (
    MixingProfile,
    ObservationRecord,
    TableEmission,
    TabularHmm,
    build_cover,
    lump,
    mixing_profile,
)
from blockpg import rates
from blockpg.errors import CoverError
from blockpg.pg import epsilon_from_c


def profile_of(sigma_minus, sigma_plus, delta, h):
    return MixingProfile(sigma_minus=sigma_minus, sigma_plus=sigma_plus, delta=delta, h=h)


def test_alpha_examples():
    assert rates.alpha(profile_of(1.0, 1.0, 1.0, 1)) == 0.0
    assert rates.alpha(profile_of(0.5, 1.0, 1.0, 1)) == pytest.approx(0.5, abs=1e-15)
    # delta = 4, h = 2, ratio 1/2: alpha = 1 - 4^(-1/2) * 0.5 = 0.75.
    assert rates.alpha(profile_of(0.5, 1.0, 4.0, 2)) == pytest.approx(0.75, abs=1e-15)


def test_ideal_block_matrix_example_rows():
    w = rates.ideal_block_wasserstein(0.5, 1, (2, 4), 5)
    np.testing.assert_allclose(w[1], [0.5, 0, 0, 0, 0.125], atol=1e-15)
    np.testing.assert_allclose(w[2], [0.25, 0, 0, 0, 0.25], atol=1e-15)
    np.testing.assert_allclose(w[3], [0.125, 0, 0, 0, 0.5], atol=1e-15)
    # Identity off the block.
    for i in (0, 4):
        expected = np.zeros(5)
        expected[i] = 1.0
        np.testing.assert_array_equal(w[i], expected)


def test_ideal_block_matrix_alpha_zero_and_full_block():
    w = rates.ideal_block_wasserstein(0.0, 1, (2, 4), 5)
    assert np.all(w[1:4] == 0.0)
    w_full = rates.ideal_block_wasserstein(0.7, 1, (1, 5), 5)
    assert np.all(w_full == 0.0)


def test_ideal_block_matrix_h_floor_gives_unit_entries():
    # h = 2: sites within one step of the boundary get exponent 0, value 1.
    w = rates.ideal_block_wasserstein(0.3, 2, (2, 3), 4)
    assert w[1, 0] == 1.0            # site 2, boundary 1: floor(1/2) = 0
    assert w[2, 0] == pytest.approx(0.3)  # site 3: floor(2/2) = 1
    assert w[1, 3] == pytest.approx(0.3)
    assert w[2, 3] == 1.0


def test_lumped_matrix_example_and_end_blocks():
    w = rates.lumped_block_wasserstein(0.5, 1, 5, 1, 3, 2)
    np.testing.assert_allclose(w[1], [0.5, 0, 0, 0, 0.03125], atol=1e-15)
    np.testing.assert_allclose(w[2], [0.25, 0, 0, 0, 0.25], atol=1e-15)
    np.testing.assert_allclose(w[3], [0.03125, 0, 0, 0, 0.5], atol=1e-15)
    w1 = rates.lumped_block_wasserstein(0.5, 1, 5, 1, 3, 1)
    assert w1[0, 2] == pytest.approx(0.25)   # row 1: exponent p+1
    assert w1[1, 2] == pytest.approx(0.5)    # row 2: exponent 1
    assert np.all(w1[:, :2][np.triu_indices(2, 1)] == 0)
    wm = rates.lumped_block_wasserstein(0.0, 1, 5, 1, 3, 2)
    assert np.all(wm[1:4] == 0.0)
    with pytest.raises(CoverError):
        rates.lumped_block_wasserstein(0.5, 1, 4, 2, 3, 1)


def test_lumped_matrix_matches_x_system_distance_oracle():
    """Each lumped entry must equal the worst per-site coupling coefficient
    alpha^floor(dist/h) over the segment's sites, distances to the block's
    boundary sites in the original system."""
    rng = np.random.default_rng(3)
    for _ in range(60):
        h = int(rng.integers(1, 4))
        p = int(rng.integers(1, 4))
        L = int(rng.integers(2 * p + 1, 2 * p + 7))
        m = int(rng.integers(2, 6))
        a = float(rng.uniform(0.05, 0.95))
        k = int(rng.integers(1, m + 1))
        cover = build_cover((L - p) * m + p, L, p)
        xi = lump(cover)
        got = rates.lumped_block_wasserstein(a, h, L, p, m, k)
        n = 2 * m - 1
        want = np.eye(n)
        s, u = cover.block(k)
        left, right = cover.boundary(k)
        for i_xi, (seg_s, seg_u) in enumerate(xi.segments, start=1):
            if seg_s >= s and seg_u <= u:
                want[i_xi - 1, i_xi - 1] = 0.0
                for col_x, col_xi in ((left, 2 * k - 3), (right, 2 * k + 1)):
                    if col_x is None or not 1 <= col_xi <= n:
                        continue
                    dist = min(abs(site - col_x) for site in range(seg_s, seg_u + 1))
                    want[i_xi - 1, col_xi - 1] = 1.0 if dist // h == 0 else a ** (dist // h)
        np.testing.assert_allclose(got, want, atol=1e-13)


def test_perturb_window():
    w = rates.lumped_block_wasserstein(0.5, 1, 5, 1, 3, 2)
    same = rates.perturb(w, 0.0, (2, 4), 5)
    np.testing.assert_array_equal(same, w)
    pert = rates.perturb(w, 0.1, (2, 4), 5)
    diff = pert - w
    expected = np.zeros((5, 5))
    expected[1:4, 0:5] = 0.1  # rows 2..4, columns 1..5
    np.testing.assert_allclose(diff, expected, atol=1e-15)
    assert pert.max() <= 1.0 + 0.1 + 1e-15


def test_verify_a1_examples():
    a = 0.5
    cover = build_cover(13, 5, 1)
    w_list = rates.cover_wasserstein_matrices(a, 1, cover)
    res = rates.verify_A1(cover, w_list)
    # Common (L, p), h = 1: lambda = alpha^(p+1) + alpha^(L-p).
    assert res.lam == pytest.approx(a**2 + a**4, abs=1e-15)
    assert res.lam == pytest.approx(0.3125, abs=1e-15)
    assert res.satisfied

    single = build_cover(5, 5, 0)
    res_single = rates.verify_A1(single, rates.cover_wasserstein_matrices(a, 1, single))
    assert res_single.lam == 0.0

    bad = build_cover(4, 2, 0)
    res_bad = rates.verify_A1(bad, rates.cover_wasserstein_matrices(0.9, 1, bad))
    assert res_bad.lam >= 1.0 and not res_bad.satisfied


def test_rate_ideal_examples():
    a = 0.5
    cover = build_cover(13, 5, 1)
    w_list = rates.cover_wasserstein_matrices(a, 1, cover)
    par = rates.rate_ideal(cover, w_list, "par")
    assert par.decay == pytest.approx(0.3125**2, abs=1e-15)
    assert par.decay == pytest.approx(0.09765625, abs=1e-15)
    assert par.norm_bound == 2.0
    lr = rates.rate_ideal(cover, w_list, "lr")
    # a_k = alpha^(p+1) = 0.25, b_k = alpha^(L-p) = 0.0625.
    assert lr.decay == pytest.approx(0.3125 * 0.25 + 0.0625, abs=1e-15)
    assert lr.decay == pytest.approx(0.140625, abs=1e-15)
    assert lr.norm_bound == pytest.approx(1.3125, abs=1e-15)


def test_beta_over_lambda_squared_approaches_one_from_above():
    a, h, p = 0.5, 1, 1
    ratios = []
    for L in (5, 10, 20, 40):
        lam = a ** (p + 1) + a ** (L - p)
        beta = lam * a ** (p + 1) + a ** (L - p)
        ratios.append(beta / lam**2)
    for r1, r2 in zip(ratios, ratios[1:]):
        assert r2 <= r1
    assert 0.9 <= ratios[-1] <= 1.0 + 1e-9


def test_rate_pg_from_constants_spec_point():
    """Theorem-style evaluation at alpha=0.5, h=1, c=1, L=5, p=1, N=101,
    recomputed independently at full precision."""
    report = rates.rate_pg_from_constants(0.5, 1, 1.0, 5, 1, 101)
    eps = 1.0 - (1.0 - 1.0 / 101.0) ** 5
    lam = 2.0 * 0.5**2
    w_hat = 0.5 + 0.5**6
    assert report.epsilon == pytest.approx(eps, rel=1e-15)
    assert report.lambda_lumped == pytest.approx(lam, rel=1e-15)
    assert report.w_hat == pytest.approx(0.515625, rel=1e-15)
    par = lam * 1.0 + eps * (2 * lam + 25 * eps + 8 * 1.0)
    assert report.lambda_pg_par == pytest.approx(par, rel=1e-12)
    lr = lam + 0.5**5 + 2 * eps * (3 * 1.0 + 1 + lam) / (1 - 2 * eps - 0.25)
    assert report.lambda_pg_lr == pytest.approx(lr, rel=1e-12)
    assert report.flags == []


def test_rate_pg_common_derives_constants_from_profile():
    model = TabularHmm([0.5, 0.5], [[0.75, 0.25], [0.25, 0.75]],
                       TableEmission([[0.6, 0.4], [0.4, 0.6]]))
    obs = ObservationRecord([0, 1, 0])
    prof = mixing_profile(model, obs, 1)
    report = rates.rate_pg_common(prof, 5, 1, 16)
    by_hand = rates.rate_pg_from_constants(
        rates.alpha(prof), 1,
        1.0 / (2 * prof.delta * prof.sigma_plus / prof.sigma_minus - 1.0),
        5, 1, 16,
    )
    assert report.lambda_pg_par == by_hand.lambda_pg_par
    assert report.epsilon == by_hand.epsilon


def test_rate_pg_epsilon_zero_reduces_to_ideal_style():
    report = rates.rate_pg_from_constants(0.5, 1, 1.0, 5, 1, 10**9)
    lam, w_hat = report.lambda_lumped, report.w_hat
    assert report.lambda_pg_par == pytest.approx(lam * max(w_hat, 1.0), abs=1e-6)
    assert report.lambda_pg_lr == pytest.approx(lam + 0.5**5, abs=1e-6)


def test_rate_pg_flags():
    # Side condition 2 eps + alpha^(p+1) >= 1 fails for tiny N.
    report = rates.rate_pg_from_constants(0.9, 1, 1.0, 3, 1, 2)
    assert "lr_side_condition_failed" in report.flags
    assert math.isnan(report.lambda_pg_lr)
    assert "pg_lambda_geq_1" in report.flags
    report2 = rates.rate_pg_from_constants(0.2, 1, 1.0, 5, 0, 64)
    assert "lump_inapplicable" in report2.flags
    csv = report2.csv_row()
    assert csv.count(",") == rates.RATE_CSV_HEADER.count(",")


def test_epsilon_properties():
    values_n = [epsilon_from_c(0.7, n, 6) for n in (2, 3, 5, 9, 17, 300)]
    assert all(a > b for a, b in zip(values_n, values_n[1:]))
    values_l = [epsilon_from_c(0.7, 8, L) for L in (0, 1, 3, 9, 27)]
    assert values_l[0] == 0.0
    assert all(a < b for a, b in zip(values_l, values_l[1:]))
    assert all(0.0 <= v < 1.0 for v in values_n + values_l)


def test_monotonicity_of_bounds_at_fixed_epsilon():
    # Nonincreasing in L for fixed p, and in p for fixed L - p; epsilon held
    # fixed (with epsilon(N, L) substituted the epsilon growth can dominate).
    for h in (1, 2):
        for eps in (0.0, 0.05):
            for a in (0.3, 0.6, 0.9):
                in_l = [rates.rate_pg_from_constants(a, h, 1.0, L, 2, 8) for L in (5, 7, 9, 13)]
                seq_ideal = [r.lambda_ideal for r in in_l]
                seq_beta = [r.beta for r in in_l]
                assert all(x >= y - 1e-15 for x, y in zip(seq_ideal, seq_ideal[1:]))
                assert all(x >= y - 1e-15 for x, y in zip(seq_beta, seq_beta[1:]))

                def pg_bounds(L, p):
                    lam = 2 * rates._apow(a, (p + 1) // h)
                    w_hat = rates._apow(a, 1 // h) + rates._apow(a, (L - p + 1) // h)
                    w1 = max(w_hat, 1.0)
                    par = lam * w1 + eps * (2 * lam + 25 * eps + 8 * w1)
                    denom = 1 - 2 * eps - rates._apow(a, (p + 1) // h)
                    lr = (lam + rates._apow(a, (L - p + 1) // h)
                          + 2 * eps * (3 * w1 + 1 + lam) / denom) if denom > 0 else math.inf
                    return lam, par, lr

                for seq in (
                    [pg_bounds(L, 2) for L in (5, 7, 9, 13)],          # L grows, p fixed
                    [pg_bounds(4 + p, p) for p in (1, 2, 3)],          # p grows, L-p fixed
                ):
                    for (l1, par1, lr1), (l2, par2, lr2) in zip(seq, seq[1:]):
                        assert l2 <= l1 + 1e-15
                        assert par2 <= par1 + 1e-12
                        assert lr2 <= lr1 + 1e-12


def test_theorem1_iterates_bounded_by_lambda_powers():
    rng = np.random.default_rng(41)
    checked = 0
    while checked < 20:
        p = int(rng.integers(0, 3))
        L = int(rng.integers(p + 2, p + 7))
        m = int(rng.integers(2, 5))
        a = float(rng.uniform(0.05, 0.7))
        h = int(rng.integers(1, 3))
        cover = build_cover((L - p) * m + p, L, p)
        w_list = rates.cover_wasserstein_matrices(a, h, cover)
        res = rates.verify_A1(cover, w_list)
        if not res.satisfied:
            continue
        checked += 1
        sweep = rates.compose_sweep_matrix(w_list)
        norm1 = float(np.abs(sweep).sum(axis=1).max())
        power = sweep.copy()
        for k in range(1, 11):
            norm_k = float(np.abs(power).sum(axis=1).max())
            assert norm_k <= res.lam ** (k - 1) * norm1 + 1e-12, (k, norm_k)
            power = power @ sweep


def test_sweep_matrix_norm_basics():
    ident = [np.eye(4), np.eye(4)]
    assert rates.sweep_matrix_norm(ident) == 1.0
    full = [rates.ideal_block_wasserstein(0.6, 1, (1, 4), 4)]
    assert rates.sweep_matrix_norm(full) == 0.0
    cover = build_cover(13, 5, 1)
    w_list = rates.cover_wasserstein_matrices(0.5, 1, cover)
    lr = rates.rate_ideal(cover, w_list, "lr")
    assert rates.sweep_matrix_norm(w_list) <= 1.0 + lr.lam + 1e-12


def _random_lumped_instance(rng, eps_max=0.3):
    h = int(rng.integers(1, 3))
    p = int(rng.integers(1, 3))
    L = int(rng.integers(2 * p + 1, 2 * p + 7))
    m = int(rng.integers(2, 6))
    a = float(rng.uniform(0.05, 0.9))
    eps = float(rng.uniform(0.0, eps_max))
    xi = lump(build_cover((L - p) * m + p, L, p))
    w_list = rates.lumped_cover_matrices(a, h, L, p, m)
    return xi.cover, w_list, eps


def test_general_par_bounds_dominate_composition():
    rng = np.random.default_rng(43)
    for _ in range(60):
        cover, w_list, eps = _random_lumped_instance(rng)
        pert = [rates.perturb(w_list[k - 1], eps, cover.block(k), cover.T)
                for k in range(1, cover.m + 1)]
        odds = list(range(1, cover.m + 1, 2))
        evens = list(range(2, cover.m + 1, 2))
        composed = rates.compose_sweep_matrix(pert, odds + evens)
        rows = np.abs(composed).sum(axis=1)
        bounds = rates.rate_pg_general_par(cover, w_list, eps)
        assert np.all(rows <= bounds.bounds + 1e-9)


def test_general_par_epsilon_zero_collapse():
    cover = lump(build_cover(13, 5, 1)).cover
    w_list = rates.lumped_cover_matrices(0.5, 1, 5, 1, 3)
    b = rates.rate_pg_general_par(cover, w_list, 0.0)
    lam, w_hat = b.lam, b.w_hat
    classes = set(np.round(b.bounds, 12))
    assert classes <= {round(lam * lam, 12), round(lam, 12), round(lam * w_hat, 12)}


def test_general_lr_bounds_dominate_composition():
    rng = np.random.default_rng(47)
    applicable = 0
    for _ in range(80):
        cover, w_list, eps = _random_lumped_instance(rng, eps_max=0.15)
        res = rates.rate_pg_general_lr(cover, w_list, eps)
        if not res.applicable:
            assert np.all(np.isnan(res.bounds))
            continue
        applicable += 1
        pert = [rates.perturb(w_list[k - 1], eps, cover.block(k), cover.T)
                for k in range(1, cover.m + 1)]
        composed = rates.compose_sweep_matrix(pert)
        rows = np.abs(composed).sum(axis=1)
        assert np.all(rows <= res.bounds + 1e-9)
    assert applicable >= 40


def test_general_lr_epsilon_zero_collapse():
    cover = lump(build_cover(13, 5, 1)).cover
    w_list = rates.lumped_cover_matrices(0.5, 1, 5, 1, 3)
    res = rates.rate_pg_general_lr(cover, w_list, 0.0)
    classes = set(np.round(res.bounds, 12))
    assert classes <= {round(res.lam, 12), round(res.beta, 12)}


def test_general_lr_side_condition_flag():
    cover = lump(build_cover(13, 5, 1)).cover
    w_list = rates.lumped_cover_matrices(0.9, 1, 5, 1, 3)
    res = rates.rate_pg_general_lr(cover, w_list, 0.45)
    assert not res.applicable
    assert np.all(np.isnan(res.bounds))


def test_lumped_par_bounds_below_theorem_level_coefficient():
    """The closed-form PAR bound was derived by bounding the per-class
    general expressions with the lumped block size 3, so the per-site
    bounds can never exceed it when its lambda is below one."""
    rng = np.random.default_rng(53)
    for _ in range(40):
        h = int(rng.integers(1, 3))
        p = int(rng.integers(1, 3))
        L = int(rng.integers(2 * p + 1, 2 * p + 7))
        m = int(rng.integers(2, 6))
        a = float(rng.uniform(0.05, 0.9))
        n_particles = int(rng.integers(2, 200))
        report = rates.rate_pg_from_constants(a, h, 0.5, L, p, n_particles)
        if report.lambda_lumped >= 1.0:
            continue
        cover = lump(build_cover((L - p) * m + p, L, p)).cover
        w_list = rates.lumped_cover_matrices(a, h, L, p, m)
        b = rates.rate_pg_general_par(cover, w_list, report.epsilon)
        assert b.bounds.max() <= report.lambda_pg_par + 1e-12
