"""Block covers of the site index set 1:T and the lumped segment system.

Blocks are closed integer intervals [s, u], 1-based, stored as (s, u) pairs.
The cover assumptions checked here:

* cover: the union of blocks is exactly 1:T;
* B1: blocks are intervals with strictly increasing left and right endpoints
  (no block nested in another);
* B2: non-consecutive blocks are separated by at least one site;
* B3 (optional): common size L, common overlap p, so T = (L-p)m + p.

`lump` regroups the sites of a B3 cover into 2m-1 segments (alternating
non-overlap and overlap runs) so that every block collapses to at most three
lumped sites; the PG rate bounds are evaluated on that system.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

from .errors import CoverError

Block = Tuple[int, int]


@dataclass(frozen=True)
class BlockCover:
    """An ordered list of interval blocks covering 1:T."""

    blocks: Tuple[Block, ...]
    T: int
    common_L: Optional[int] = None
    common_p: Optional[int] = None

    @property
    def m(self) -> int:
        return len(self.blocks)

    def block(self, k: int) -> Block:
        """Block k, 1-based."""
        if not 1 <= k <= self.m:
            raise CoverError(f"block index {k} out of range 1..{self.m}")
        return self.blocks[k - 1]

    def sites(self, k: int) -> range:
        s, u = self.block(k)
        return range(s, u + 1)

    def boundary(self, k: int) -> Tuple[Optional[int], Optional[int]]:
        """Boundary sites (s-1, u+1) of block k; None at the sequence ends."""
        s, u = self.block(k)
        return (s - 1 if s > 1 else None, u + 1 if u < self.T else None)

    def boundary_sites(self) -> set:
        """The union of all block boundaries."""
        out = set()
        for k in range(1, self.m + 1):
            left, right = self.boundary(k)
            if left is not None:
                out.add(left)
            if right is not None:
                out.add(right)
        return out

    def owners(self, site: int) -> List[int]:
        """Indices (1-based) of the blocks containing `site`."""
        return [k for k, (s, u) in enumerate(self.blocks, start=1) if s <= site <= u]

    def canonical(self) -> str:
        """One-line form used in CSV outputs, e.g. 'L=5,p=1,m=3:[1-5][5-9][9-13]'."""
        body = "".join(f"[{s}-{u}]" for s, u in self.blocks)
        if self.common_L is not None and self.common_p is not None:
            return f"L={self.common_L},p={self.common_p},m={self.m}:{body}"
        return f"m={self.m}:{body}"


def build_cover(T: int, L: int, p: int) -> BlockCover:
    """The common-size cover with m = (T-p)/(L-p) blocks of length L, overlap p.

    Raises CoverError when (T - p) is not divisible by (L - p), naming the
    nearest valid T above and below.
    """
    if not 1 <= L <= T:
        raise CoverError(f"need 1 <= L <= T, got L={L}, T={T}")
    if not 0 <= p < L:
        raise CoverError(f"need 0 <= p < L, got p={p}, L={L}")
    step = L - p
    if (T - p) % step != 0:
        m_lo = (T - p) // step
        below = p + step * m_lo
        above = p + step * (m_lo + 1)
        hint = f"nearest valid T: {above} above" + (f", {below} below" if m_lo >= 1 else "")
        raise CoverError(f"(T-p) = {T - p} not divisible by (L-p) = {step}; {hint}")
    m = (T - p) // step
    blocks = tuple((1 + (k - 1) * step, L + (k - 1) * step) for k in range(1, m + 1))
    return BlockCover(blocks=blocks, T=T, common_L=L, common_p=p)


def explicit_cover(T: int, blocks) -> BlockCover:
    """Wrap explicit [s, u] pairs; detects a common (L, p) when one exists."""
    blocks = tuple((int(s), int(u)) for s, u in blocks)
    common_L = common_p = None
    if blocks:
        sizes = {u - s + 1 for s, u in blocks}
        overlaps = {
            max(0, blocks[i][1] - blocks[i + 1][0] + 1) for i in range(len(blocks) - 1)
        }
        if len(sizes) == 1 and len(overlaps) <= 1:
            length = sizes.pop()
            p = overlaps.pop() if overlaps else 0
            if T == (length - p) * len(blocks) + p:
                common_L, common_p = length, p
    return BlockCover(blocks=blocks, T=T, common_L=common_L, common_p=common_p)


def validate_cover(cover: BlockCover) -> List[str]:
    """Diagnostic check of cover/B1/B2 (and B3 when common L, p are declared).

    Returns an empty list iff all applicable assumptions hold; each violation
    names the assumption and the offending block indices.
    """
    violations = []
    blocks = cover.blocks
    m = len(blocks)
    if m == 0:
        return ["cover: no blocks"]

    covered = set()
    for k, (s, u) in enumerate(blocks, start=1):
        if not (1 <= s <= u <= cover.T):
            violations.append(f"B1: block {k} = [{s},{u}] is not an interval inside 1:{cover.T}")
        covered.update(range(s, u + 1))
    missing = set(range(1, cover.T + 1)) - covered
    if missing:
        violations.append(f"cover: sites {sorted(missing)} not covered by any block")

    for k in range(1, m):
        s_prev, u_prev = blocks[k - 1]
        s_next, u_next = blocks[k]
        if not (s_prev < s_next and u_prev < u_next):
            violations.append(f"B1: blocks {k} and {k + 1} are not strictly ordered")

    for j in range(m):
        for k in range(j + 2, m):
            if blocks[j][1] >= blocks[k][0] - 1:
                violations.append(
                    f"B2: blocks {j + 1} and {k + 1} are not separated "
                    f"(max={blocks[j][1]}, min={blocks[k][0]})"
                )

    if cover.common_L is not None and cover.common_p is not None:
        L, p = cover.common_L, cover.common_p
        for k, (s, u) in enumerate(blocks, start=1):
            if u - s + 1 != L:
                violations.append(f"B3: block {k} has size {u - s + 1}, declared L={L}")
        for k in range(1, m):
            ov = max(0, blocks[k - 1][1] - blocks[k][0] + 1)
            if ov != p:
                violations.append(f"B3: overlap of blocks {k},{k + 1} is {ov}, declared p={p}")
        if cover.T != (L - p) * m + p:
            violations.append(f"B3: T={cover.T} != (L-p)m+p = {(L - p) * m + p}")
    return violations


def boundary(cover: BlockCover, k: int) -> Tuple[Optional[int], Optional[int]]:
    """Boundary sites of block k (module-level alias of BlockCover.boundary)."""
    return cover.boundary(k)


@dataclass(frozen=True)
class XiSystem:
    """Lumped regrouping of 1:T into 2m-1 segments (analysis only).

    segments[i] is the (start, end) site interval of lumped site i+1; `cover`
    is the induced cover of 1:(2m-1) whose block k is {2k-2, 2k-1, 2k}
    intersected with the lumped index set.  Sampling never uses this; it only
    drives the general PG rate bounds with block size <= 3 and overlap 1.
    """

    segments: Tuple[Block, ...]
    cover: BlockCover
    L: int
    p: int
    m: int

    @property
    def segment_lengths(self) -> Tuple[int, ...]:
        return tuple(u - s + 1 for s, u in self.segments)


def lump(cover: BlockCover) -> XiSystem:
    """Build the lumped segment system of a validated B3 cover.

    Requires p >= 1 (the overlap segments must be nonempty), L > 2p (the
    interior segments must be nonempty), and m >= 2.  p = 0 covers remain
    valid for sampling; rate analysis then uses the unlumped bounds.
    """
    problems = validate_cover(cover)
    if problems:
        raise CoverError("cover invalid: " + "; ".join(problems))
    if cover.common_L is None or cover.common_p is None:
        raise CoverError("lump requires a common-(L, p) cover (B3)")
    L, p, m = cover.common_L, cover.common_p, cover.m
    if p < 1:
        raise CoverError(
            "lump is undefined for p = 0 (empty overlap segments); "
            "use the unlumped rate bounds for non-overlapping covers"
        )
    if L <= 2 * p:
        raise CoverError(f"lump requires L > 2p for nonempty interior segments (L={L}, p={p})")
    if m < 2:
        raise CoverError("lump requires at least two blocks")

    step = L - p
    segs: List[Block] = [(1, step)]                            # Xi_1
    for i in range(1, m):
        if i > 1:
            segs.append((step * (i - 1) + p + 1, step * i))    # Xi_{2i-1}, interior
        segs.append((step * i + 1, step * i + p))              # Xi_{2i}, overlap
    segs.append((step * (m - 1) + p + 1, step * m + p))        # Xi_{2m-1}

    pos = 1
    for s, u in segs:
        if s != pos or u < s:
            raise CoverError("internal error: lumped segments do not partition 1:T")
        pos = u + 1
    if pos != cover.T + 1:
        raise CoverError("internal error: lumped segments do not reach T")

    n_xi = 2 * m - 1
    lumped_blocks = []
    for k in range(1, m + 1):
        lo = max(1, 2 * k - 2)
        hi = min(n_xi, 2 * k)
        lumped_blocks.append((lo, hi))
    lumped = BlockCover(blocks=tuple(lumped_blocks), T=n_xi)
    return XiSystem(segments=tuple(segs), cover=lumped, L=L, p=p, m=m)
