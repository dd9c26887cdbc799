"""Wasserstein matrices and contraction-rate bounds for the block samplers.

A Wasserstein matrix W for a kernel bounds oscillation transport:
osc_j(Pf) <= sum_i osc_i(f) W_ij.  Matrices compose in reverse visit order
(visiting J_1 then J_2 gives W^{J_2} W^{J_1}) and the sup norm (max row sum)
of the composed matrix controls geometric contraction.

This module evaluates, in closed form or from explicit matrices:

* the coupling coefficient alpha = 1 - delta^((1-h)/h) sigma-/sigma+;
* the ideal per-block matrix (identity off the block, alpha^floor(dist/h)
  toward each boundary column on block rows);
* the lumped-system per-block matrices (block size collapses to <= 3);
* the epsilon-perturbed matrices for non-ideal kernels;
* the single-sweep decay bounds: lambda for arbitrary covers, lambda^2 / beta
  for the PAR / L-R schedules, and the PG variants with the minorisation
  epsilon folded in, both in the common-(L, p) closed forms and the general
  per-site forms.

Bounds that exceed 1 are reported as-is with an `inapplicable` flag rather
than clamped: the theorems are vacuous there and clamping would misstate them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .blocking import BlockCover
from .errors import CoverError, ModelError
from .hmm import MixingProfile
from .pg import epsilon_from_c, minorisation_bound


def alpha(profile: MixingProfile) -> float:
    """Coupling coefficient alpha = 1 - delta^((1-h)/h) * sigma- / sigma+."""
    h = profile.h
    value = 1.0 - profile.delta ** ((1.0 - h) / h) * profile.sigma_minus / profile.sigma_plus
    if not 0.0 <= value < 1.0:
        raise ModelError(f"alpha = {value} outside [0, 1); mixing profile inconsistent")
    return value


def _apow(a: float, exponent: int) -> float:
    """a**exponent with a^0 = 1 handled explicitly (covers a = 0)."""
    if exponent == 0:
        return 1.0
    return a**exponent


def ideal_block_wasserstein(alpha_value: float, h: int, block, T: int) -> np.ndarray:
    """Per-block matrix of the ideal kernel: identity rows off the block;
    block rows carry alpha^floor((i - (s-1))/h) at column s-1 and
    alpha^floor(((u+1) - i)/h) at column u+1 (absent columns dropped)."""
    s, u = int(block[0]), int(block[1])
    if not (1 <= s <= u <= T):
        raise CoverError(f"block [{s},{u}] is not inside 1:{T}")
    w = np.eye(T)
    for i in range(s, u + 1):
        w[i - 1, i - 1] = 0.0
        if s > 1:
            w[i - 1, s - 2] = _apow(alpha_value, (i - (s - 1)) // h)
        if u < T:
            w[i - 1, u] = _apow(alpha_value, ((u + 1) - i) // h)
    return w


def cover_wasserstein_matrices(alpha_value: float, h: int, cover: BlockCover) -> List[np.ndarray]:
    return [ideal_block_wasserstein(alpha_value, h, cover.block(k), cover.T)
            for k in range(1, cover.m + 1)]


def lumped_block_wasserstein(alpha_value: float, h: int, L: int, p: int, m: int, k: int) -> np.ndarray:
    """Per-block matrix of the lumped segment system ((2m-1) x (2m-1)).

    Middle blocks occupy rows 2k-2..2k with boundary columns 2k-3 and 2k+1;
    the row pattern (exponents before the floor-division by h) is
    (1, L-p+1) / (p+1, p+1) / (L-p+1, 1).  End blocks drop the absent
    boundary column and row.
    """
    if p < 1 or L <= 2 * p:
        raise CoverError("lumped matrices need p >= 1 and L > 2p")
    if not 1 <= k <= m or m < 2:
        raise CoverError(f"block index {k} out of range for m={m}")
    n = 2 * m - 1
    w = np.eye(n)

    def put(row: int, col: Optional[int], exponent: int) -> None:
        if col is not None and 1 <= col <= n:
            w[row - 1, col - 1] = _apow(alpha_value, exponent // h)

    left_col = 2 * k - 3 if k > 1 else None
    right_col = 2 * k + 1 if k < m else None
    rows = [r for r in (2 * k - 2, 2 * k - 1, 2 * k) if 1 <= r <= n]
    for r in rows:
        w[r - 1, r - 1] = 0.0
    if k == 1:
        put(1, right_col, p + 1)
        put(2, right_col, 1)
    elif k == m:
        put(2 * m - 2, left_col, 1)
        put(2 * m - 1, left_col, p + 1)
    else:
        put(2 * k - 2, left_col, 1)
        put(2 * k - 2, right_col, L - p + 1)
        put(2 * k - 1, left_col, p + 1)
        put(2 * k - 1, right_col, p + 1)
        put(2 * k, left_col, L - p + 1)
        put(2 * k, right_col, 1)
    return w


def lumped_cover_matrices(alpha_value: float, h: int, L: int, p: int, m: int) -> List[np.ndarray]:
    return [lumped_block_wasserstein(alpha_value, h, L, p, m, k) for k in range(1, m + 1)]


def perturb(w: np.ndarray, epsilon: float, block, T: int) -> np.ndarray:
    """Epsilon-perturbed matrix for a non-ideal kernel: add epsilon on
    (rows in the block) x (columns in the block and its boundary)."""
    if not 0.0 <= epsilon < 1.0:
        raise ModelError("epsilon must lie in [0, 1)")
    s, u = int(block[0]), int(block[1])
    out = w.copy()
    lo = max(1, s - 1)
    hi = min(T, u + 1)
    out[s - 1 : u, lo - 1 : hi] += epsilon
    return out


# ---------------------------------------------------------------------------
# Composition and the arbitrary-cover bound
# ---------------------------------------------------------------------------


def compose_sweep_matrix(w_list: Sequence[np.ndarray], order: Optional[Sequence[int]] = None) -> np.ndarray:
    """Matrix of a complete sweep visiting blocks in `order` (1-based indices,
    default 1..m): composition in reverse visit order W^{o_m} ... W^{o_1}."""
    if order is None:
        order = range(1, len(w_list) + 1)
    mat = None
    for k in order:
        w = w_list[k - 1]
        mat = w.copy() if mat is None else w @ mat
    if mat is None:
        raise ModelError("empty visit order")
    return mat


def sweep_matrix_norm(w_list: Sequence[np.ndarray], order: Optional[Sequence[int]] = None) -> float:
    """Sup norm (max row sum) of the composed sweep matrix."""
    return float(np.abs(compose_sweep_matrix(w_list, order)).sum(axis=1).max())


@dataclass(frozen=True)
class A1Result:
    """Outcome of the arbitrary-cover contraction condition.

    lam is the max over blocks J of the worst row sum over boundary columns,
    rows restricted to J intersected with the set of all boundary sites; the
    condition asks lam < 1.
    """

    lam: float
    satisfied: bool
    worst_block: int
    worst_site: int

    def __float__(self):
        return self.lam


def verify_A1(cover: BlockCover, w_list: Sequence[np.ndarray]) -> A1Result:
    all_boundary = cover.boundary_sites()
    lam = 0.0
    worst_block = worst_site = 0
    for k in range(1, cover.m + 1):
        s, u = cover.block(k)
        left, right = cover.boundary(k)
        cols = [c for c in (left, right) if c is not None]
        for i in range(s, u + 1):
            if i not in all_boundary:
                continue
            rowsum = float(sum(w_list[k - 1][i - 1, c - 1] for c in cols))
            if rowsum > lam:
                lam, worst_block, worst_site = rowsum, k, i
    return A1Result(lam=lam, satisfied=lam < 1.0, worst_block=worst_block, worst_site=worst_site)


@dataclass(frozen=True)
class IdealRate:
    """Schedule-specific single-sweep bound for the ideal sampler.

    decay is the per-sweep contraction factor (lambda^2 for PAR, beta for
    L-R); norm_bound bounds the first-sweep matrix norm (2 for PAR, 1+lambda
    for L-R); applicable is False when the A1 condition fails.
    """

    schedule: str
    decay: float
    norm_bound: float
    lam: float
    applicable: bool


def rate_ideal(cover: BlockCover, w_list: Sequence[np.ndarray], schedule: str) -> IdealRate:
    a1 = verify_A1(cover, w_list)
    lam = a1.lam
    if schedule == "par":
        return IdealRate(schedule="par", decay=lam * lam, norm_bound=2.0,
                         lam=lam, applicable=a1.satisfied)
    if schedule != "lr":
        raise ModelError(f"unknown schedule {schedule!r}")
    beta = 0.0
    for k in range(2, cover.m + 1):
        row_site = cover.block(k - 1)[1] + 1          # right boundary of block k-1
        left, right = cover.boundary(k)
        w = w_list[k - 1]
        a_k = w[row_site - 1, left - 1] if left is not None else 0.0
        b_k = w[row_site - 1, right - 1] if right is not None else 0.0
        beta = max(beta, lam * float(a_k) + float(b_k))
    return IdealRate(schedule="lr", decay=beta, norm_bound=1.0 + lam,
                     lam=lam, applicable=a1.satisfied)


# ---------------------------------------------------------------------------
# Common-(L, p) closed forms, PG variants included
# ---------------------------------------------------------------------------

RATE_CSV_HEADER = (
    "alpha,h,L,p,N,epsilon,lambda_ideal,beta,lambda_lumped,w_hat,"
    "lambda_pg_par,lambda_pg_lr,flags"
)


@dataclass
class RateReport:
    """Every closed-form rate quantity for one (L, p, N) configuration.

    lambda_ideal and beta are the common-(L, p) forms of the arbitrary-cover
    and L-R ideal bounds; lambda_lumped and w_hat are the lumped-system
    constants entering the PG bounds; the two lambda_pg fields are the
    complete-sweep decay bounds of the PG PAR and L-R samplers.  Bounds whose
    side conditions fail are NaN and named in `flags`.
    """

    alpha: float
    h: int
    L: int
    p: int
    n_particles: int
    epsilon: float
    c: float
    lambda_ideal: float
    beta: float
    lambda_lumped: float
    w_hat: float
    lambda_pg_par: float
    lambda_pg_lr: float
    flags: List[str] = field(default_factory=list)

    def csv_row(self) -> str:
        vals = [
            repr(self.alpha), str(self.h), str(self.L), str(self.p),
            str(self.n_particles), repr(self.epsilon), repr(self.lambda_ideal),
            repr(self.beta), repr(self.lambda_lumped), repr(self.w_hat),
            repr(self.lambda_pg_par), repr(self.lambda_pg_lr),
            "|".join(self.flags),
        ]
        return ",".join(vals)


def rate_pg_from_constants(
    alpha_value: float, h: int, c: float, L: int, p: int, n_particles: int
) -> RateReport:
    """Rate report from raw constants (alpha, h, c) instead of a model profile.

    This is the formula-evaluation entry point: alpha drives the ideal-side
    constants, c drives epsilon(N, L).  `rate_pg_common` derives both from a
    mixing profile and delegates here.

    lambda_lumped = 2 alpha^floor((p+1)/h); w_hat = alpha^floor(1/h) +
    alpha^floor((L-p+1)/h); the PAR bound is lambda (w_hat v 1) + epsilon
    (2 lambda + 25 epsilon + 8 (w_hat v 1)); the L-R bound is lambda +
    alpha^floor((L-p+1)/h) + 2 epsilon (3 (w_hat v 1) + 1 + lambda) /
    (1 - 2 epsilon - alpha^floor((p+1)/h)) under its side condition.
    """
    if not 0 <= p < L:
        raise CoverError(f"need 0 <= p < L, got p={p}, L={L}")
    a = alpha_value
    flags: List[str] = []

    a_near = _apow(a, (p + 1) // h)          # coupling across the overlap
    a_far = _apow(a, (L - p) // h)           # coupling across the block body
    a_far1 = _apow(a, (L - p + 1) // h)

    lambda_ideal = a_near + a_far
    beta = lambda_ideal * a_near + a_far
    lam = 2.0 * a_near
    w_hat = _apow(a, 1 // h) + a_far1
    eps = epsilon_from_c(c, n_particles, L)

    if lambda_ideal >= 1.0:
        flags.append("ideal_A1_violated")
    if p == 0 or L <= 2 * p:
        flags.append("lump_inapplicable")
    if lam >= 1.0:
        flags.append("pg_lambda_geq_1")

    w1 = max(w_hat, 1.0)
    pg_par = lam * w1 + eps * (2.0 * lam + 25.0 * eps + 8.0 * w1)
    if pg_par >= 1.0:
        flags.append("par_bound_vacuous")

    denom = 1.0 - 2.0 * eps - a_near
    if denom <= 0.0:
        flags.append("lr_side_condition_failed")
        pg_lr = math.nan
    else:
        pg_lr = lam + a_far1 + 2.0 * eps * (3.0 * w1 + 1.0 + lam) / denom
        if pg_lr >= 1.0:
            flags.append("lr_bound_vacuous")

    return RateReport(
        alpha=a, h=h, L=L, p=p, n_particles=n_particles, epsilon=eps, c=c,
        lambda_ideal=lambda_ideal, beta=beta, lambda_lumped=lam, w_hat=w_hat,
        lambda_pg_par=pg_par, lambda_pg_lr=pg_lr, flags=flags,
    )


def rate_pg_common(profile: MixingProfile, L: int, p: int, n_particles: int) -> RateReport:
    """Closed-form rate report for a common-(L, p) cover and bootstrap PG(N),
    with alpha and c computed from the model's mixing profile."""
    bound = minorisation_bound(profile, n_particles, max(L, 0))
    return rate_pg_from_constants(alpha(profile), profile.h, bound.c, L, p, n_particles)


# ---------------------------------------------------------------------------
# General per-site bounds (any cover satisfying the perturbed structure)
# ---------------------------------------------------------------------------


def _site_classes(cover: BlockCover) -> Dict[int, Tuple[str, int]]:
    """Classify each site as ('exclusive', owner) or ('overlap', right owner).

    The overlap expressions of both general bounds are owner-independent, so
    recording the right owner is enough.
    """
    classes: Dict[int, Tuple[str, int]] = {}
    for i in range(1, cover.T + 1):
        owners = cover.owners(i)
        if not owners:
            raise CoverError(f"site {i} not covered")
        if len(owners) == 1:
            classes[i] = ("exclusive", owners[0])
        else:
            classes[i] = ("overlap", max(owners))
    return classes


def _w_boundary_entries(cover: BlockCover, w_list, k: int, site: int) -> Tuple[float, float]:
    """(W^{J_k}[site, left boundary], W^{J_k}[site, right boundary]); the
    convention zeroes the entries of absent end-block boundaries."""
    left, right = cover.boundary(k)
    w = w_list[k - 1]
    wl = float(w[site - 1, left - 1]) if left is not None else 0.0
    wr = float(w[site - 1, right - 1]) if right is not None else 0.0
    return wl, wr


def _max_boundary_rowsum(cover: BlockCover, w_list) -> float:
    out = 0.0
    for k in range(1, cover.m + 1):
        for i in cover.sites(k):
            wl, wr = _w_boundary_entries(cover, w_list, k, i)
            out = max(out, wl + wr)
    return out


@dataclass
class GeneralParBounds:
    """Per-site row-sum bounds of one perturbed PAR sweep.

    bounds[i-1] bounds the i-th row sum of the composed perturbed sweep
    matrix; site classes follow the parity of the owning block (exclusive
    even / exclusive odd / overlap).
    """

    bounds: np.ndarray
    lam: float
    w_hat: float
    max_block: int
    epsilon: float


def rate_pg_general_par(cover: BlockCover, w_list: Sequence[np.ndarray], epsilon: float) -> GeneralParBounds:
    lam = 0.0
    for k in range(1, cover.m + 1):
        for i in cover.sites(k):
            if len(cover.owners(i)) == 1:
                wl, wr = _w_boundary_entries(cover, w_list, k, i)
                lam = max(lam, wl + wr)
    w_hat = _max_boundary_rowsum(cover, w_list)
    big_l = max(u - s + 1 for s, u in cover.blocks)
    w1 = max(1.0, w_hat)
    eps = epsilon

    bounds = np.empty(cover.T)
    for i, (kind, k) in _site_classes(cover).items():
        if kind == "overlap":
            val = (lam * w_hat
                   + eps * (w_hat * (big_l + 2) + 2 * lam + eps * (big_l + 2) ** 2 + big_l * w1))
        elif k % 2 == 1:
            val = lam + eps * (big_l + 2)
        else:
            val = (lam * lam
                   + eps * (lam * (big_l + 4) + eps * (big_l + 2) ** 2 + big_l * w1))
        bounds[i - 1] = val
    return GeneralParBounds(bounds=bounds, lam=lam, w_hat=w_hat, max_block=big_l, epsilon=eps)


@dataclass
class GeneralLrBounds:
    """Per-site row-sum bounds of one perturbed L-R sweep.

    applicable is False when the side condition w_bar + (L1 + 1) epsilon < 1
    fails; bounds are NaN in that case.
    """

    bounds: np.ndarray
    lam: float
    beta: float
    c: float
    w_hat: float
    w_bar: float
    max_block: int
    max_overlap: int
    epsilon: float
    applicable: bool


def rate_pg_general_lr(cover: BlockCover, w_list: Sequence[np.ndarray], epsilon: float) -> GeneralLrBounds:
    classes = _site_classes(cover)
    big_l = max(u - s + 1 for s, u in cover.blocks)
    overlaps = [
        max(0, cover.block(k - 1)[1] - cover.block(k)[0] + 1)
        for k in range(2, cover.m + 1)
    ]
    max_overlap = max(overlaps) if overlaps else 0
    w_hat = _max_boundary_rowsum(cover, w_list)

    lam = 0.0
    finite = True
    for k in range(1, cover.m + 1):
        for i in cover.sites(k):
            if len(cover.owners(i)) == 1:
                wl, wr = _w_boundary_entries(cover, w_list, k, i)
                if wl >= 1.0:
                    finite = False
                else:
                    lam = max(lam, wr / (1.0 - wl))

    beta = 0.0
    for k in range(2, cover.m + 1):
        s_prev, u_prev = cover.block(k - 1)
        s_k, u_k = cover.block(k)
        for i in range(max(s_prev, s_k), min(u_prev, u_k) + 1):
            wl, wr = _w_boundary_entries(cover, w_list, k, i)
            beta = max(beta, lam * wl + wr)

    w_bar = 0.0
    for k in range(2, cover.m + 1):
        s_prev, u_prev = cover.block(k - 1)
        for i in cover.sites(k):
            if i > u_prev:
                wl, _ = _w_boundary_entries(cover, w_list, k, i)
                w_bar = max(w_bar, wl)

    denom = 1.0 - (max_overlap + 1) * epsilon - w_bar
    applicable = finite and denom > 0.0
    if applicable:
        c = (big_l * max(w_hat * max(lam, 1.0), 1.0) + 1.0 + lam) / denom
        bounds = np.empty(cover.T)
        for i, (kind, _k) in classes.items():
            bounds[i - 1] = beta + 2.0 * c * epsilon if kind == "overlap" else lam + c * epsilon
    else:
        c = math.nan
        bounds = np.full(cover.T, math.nan)
    return GeneralLrBounds(
        bounds=bounds, lam=lam, beta=beta, c=c, w_hat=w_hat, w_bar=w_bar,
        max_block=big_l, max_overlap=max_overlap, epsilon=epsilon, applicable=applicable,
    )
