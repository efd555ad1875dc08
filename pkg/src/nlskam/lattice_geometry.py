"""Integer affine subspaces of Z^d: sign-lexicographic order, N-optimal
presentations, cuts, good points and the induced decomposition of Z^d.

A codimension-l rational affine subspace is written A = [v_i; p_i]_l, meaning
A = {x : (v_i, x) = p_i, i = 1..l} with integer vectors v_i and nonnegative
integer constants p_i.  Presentations are compared through the sign
lexicographic order on the display vector (p_1..p_l, v_1..v_l); the minimum
over presentations with all v_i in the ball B_N = {0 < |v| < kappa*N} is the
N-optimal presentation.

The cut thresholds mu*N^tau, theta*N^{4d*tau} and C*N^{tau1} are astronomically
large for the true exponents, so every comparison against them is carried in
log space.  Tests may instead install small "surrogate" exponents that satisfy
only the ordering relations; such parameter sets carry surrogate=True and the
flag is propagated into every result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Optional

import numpy as np

from .exact import mat_rank, solve_exact

Vec = tuple  # integer vector as a tuple of ints


# ---------------------------------------------------------------------------
# sign lexicographic order
# ---------------------------------------------------------------------------

def sign_lex_key(a: Iterable[int]):
    """Sort key realizing the order: a < b iff (|a|) < (|b|) lexicographically,
    ties broken by a > b in the plain Z-lexicographic order (so the minimum of
    {v, -v} is the one with nonnegative leading entries)."""
    t = tuple(a)
    return tuple(abs(x) for x in t), tuple(-x for x in t)


def sign_lex_compare(a, b) -> int:
    """-1, 0, +1 according to the sign-lexicographic order."""
    a, b = tuple(a), tuple(b)
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    ka, kb = sign_lex_key(a), sign_lex_key(b)
    return -1 if ka < kb else (0 if ka == kb else 1)


def sign_lex_min(vectors):
    return min(vectors, key=sign_lex_key)


# ---------------------------------------------------------------------------
# constants and parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatticeConstants:
    """The fixed constants (c, C, tau0, tau1, N0) of the cut machinery.

    Defaults follow the source constraints tau0 > max(d^2+n, 12),
    tau1 = (4d)^(d+1) (tau0+1), c <= 1/2, C >= 4, N0 = (d+1)! kappa^(d+1) C/c.
    A surrogate instance keeps only the ordering relations and must flag
    itself; construct one with `surrogate_constants`.
    """

    d: int
    c: float
    C: float
    tau0: float
    tau1: float
    N0: float
    surrogate: bool = False

    def __post_init__(self):
        if not (0 < self.c < self.C):
            raise ValueError("need 0 < c < C")
        if not (0 < self.tau0 and self.tau0 <= self.tau1 / (4 * self.d)):
            raise ValueError("need 0 < tau0 <= tau1/(4d)")

    def good_subspace_log_bound(self, N: int) -> float:
        # p_l <= c N^{tau1/4d}
        return math.log(self.c) + (self.tau1 / (4 * self.d)) * math.log(N)

    def root_log_bound(self, N: int) -> float:
        # |r(m)| > C N^{tau1}
        return math.log(self.C) + self.tau1 * math.log(N)

    def strip_log_bound(self, N: int, p_l: int) -> float:
        # C max(N^{4d tau0}, c^{-4d} p_l^{4d})
        a = 4 * self.d * self.tau0 * math.log(N)
        b = 4 * self.d * (math.log(p_l) - math.log(self.c)) if p_l > 0 else -math.inf
        return math.log(self.C) + max(a, b)

    def p1_log_bound(self, N: int) -> float:
        # p_1 >= C N^{4d tau0}
        return math.log(self.C) + 4 * self.d * self.tau0 * math.log(N)


def paper_constants(d: int, n: int, kappa: float, c: float = 0.5, C: float = 4.0,
                    tau0: Optional[float] = None) -> LatticeConstants:
    if tau0 is None:
        tau0 = max(d * d + n, 12) + 1
    tau1 = (4 * d) ** (d + 1) * (tau0 + 1)
    N0 = math.factorial(d + 1) * kappa ** (d + 1) * C / c
    return LatticeConstants(d=d, c=c, C=C, tau0=tau0, tau1=tau1, N0=N0)


def surrogate_constants(d: int, c: float, C: float, tau0: float, tau1: float,
                        N0: float = 1.0) -> LatticeConstants:
    """Small exponents for finite-box experiments; only the orderings are kept."""
    return LatticeConstants(d=d, c=c, C=C, tau0=tau0, tau1=tau1, N0=N0,
                            surrogate=True)


@dataclass(frozen=True)
class CutParams:
    """Allowable parameters (N, theta, mu, tau) of Definition of a cut."""

    N: int
    theta: float
    mu: float
    tau: float
    consts: LatticeConstants

    def __post_init__(self):
        cc = self.consts
        if self.N <= cc.N0:
            raise ValueError(f"N={self.N} must exceed N0={cc.N0}")
        if not (cc.c < self.theta < cc.C and cc.c < self.mu < cc.C):
            raise ValueError("need c < theta, mu < C")
        if not (cc.tau0 <= self.tau <= cc.tau1 / (4 * cc.d)):
            raise ValueError("need tau0 <= tau <= tau1/(4d)")
        if self.log_small() >= self.log_large():
            raise ValueError("thresholds must separate: mu N^tau < theta N^{4d tau}")

    @property
    def surrogate(self) -> bool:
        return self.consts.surrogate

    def log_small(self) -> float:
        # mu N^tau
        return math.log(self.mu) + self.tau * math.log(self.N)

    def log_large(self) -> float:
        # theta N^{4 d tau}
        return math.log(self.theta) + 4 * self.consts.d * self.tau * math.log(self.N)


def tau_of_p(p: int, consts: LatticeConstants, N: int) -> float:
    """tau(p) with N^{tau(p)} = max(N^{tau0}, p/c), clipped into the allowable
    interval."""
    t = consts.tau0
    if p > 0:
        t = max(t, (math.log(p) - math.log(consts.c)) / math.log(N))
    return min(t, consts.tau1 / (4 * consts.d))


# ---------------------------------------------------------------------------
# presentations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffinePresentation:
    """A = [v_i; p_i]_l, codimension-l integer affine subspace of Z^d."""

    vectors: tuple
    constants: tuple
    n_opt_for: Optional[int] = None

    def __post_init__(self):
        if len(self.vectors) != len(self.constants):
            raise ValueError("vectors and constants must have equal length")
        if self.codim == 0 or self.codim > self.dim:
            raise ValueError("need 0 < codim <= d")
        if mat_rank(self.vectors) != self.codim:
            raise ValueError("presentation vectors must be linearly independent")
        if self.n_opt_for is not None:
            ps = self.constants
            if any(p < 0 for p in ps) or any(ps[i] > ps[i + 1] for i in range(len(ps) - 1)):
                raise ValueError("optimal presentation needs 0 <= p_1 <= ... <= p_l")

    @property
    def codim(self) -> int:
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return len(self.vectors[0])

    def display(self) -> tuple:
        """(p_1..p_l, v_1..v_l) flattened, the vector ordered by sign-lex."""
        flat = list(self.constants)
        for v in self.vectors:
            flat.extend(v)
        return tuple(flat)

    def key(self):
        return sign_lex_key(self.display())

    def prefix(self, length: int) -> "AffinePresentation":
        return AffinePresentation(self.vectors[:length], self.constants[:length],
                                  n_opt_for=self.n_opt_for)

    def contains(self, x) -> bool:
        return all(int(np.dot(v, x)) == p for v, p in zip(self.vectors, self.constants))

    def negated(self) -> "AffinePresentation":
        """A presentation of -A (not necessarily optimal)."""
        return AffinePresentation(tuple(tuple(-c for c in v) for v in self.vectors),
                                  self.constants)

    def translate(self, t) -> "AffinePresentation":
        """A presentation of A + t (constants shifted; not necessarily optimal)."""
        return AffinePresentation(
            self.vectors,
            tuple(p + int(np.dot(v, t)) for v, p in zip(self.vectors, self.constants)))


@dataclass(frozen=True)
class CutResult:
    ell: int
    subspace: Optional[AffinePresentation]  # None for ell == 0
    presentation: AffinePresentation        # full optimal presentation of the point
    params: CutParams

    @property
    def surrogate(self) -> bool:
        return self.params.surrogate

    def subspace_key(self):
        if self.subspace is None:
            return (0,)
        return (self.ell,) + self.subspace.display()


# ---------------------------------------------------------------------------
# B_N enumeration (cached per (d, squared radius))
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _ball_cached(d: int, sq_bound_num: int, sq_bound_den: int):
    """All x in Z^d with 0 < |x|^2 < sq_bound (exact rational bound), as an
    int array sorted by sign-lex, plus the per-row rank."""
    bound = math.isqrt(sq_bound_num // sq_bound_den) + 1
    rng = np.arange(-bound, bound + 1)
    grids = np.meshgrid(*([rng] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    sq = (pts * pts).sum(axis=1)
    keep = (sq > 0) & (sq * sq_bound_den < sq_bound_num)
    pts = pts[keep]
    order = sorted(range(len(pts)), key=lambda i: sign_lex_key(pts[i]))
    return np.array([pts[i] for i in order], dtype=np.int64)


def ball_bn(d: int, kappa_sq: int, N: int) -> np.ndarray:
    """B_N = {x in Z^d \\ 0 : |x| < kappa N}, sorted by the sign-lex order.

    kappa_sq is kappa^2 as an exact integer (kappa itself may be irrational).
    """
    return _ball_cached(d, kappa_sq * N * N, 1)


# ---------------------------------------------------------------------------
# optimal presentations
# ---------------------------------------------------------------------------

def _independent_of(v, chosen) -> bool:
    if not chosen:
        return True
    return mat_rank(list(chosen) + [tuple(int(x) for x in v)]) == len(chosen) + 1


def optimal_presentation_point(m, N: int, kappa_sq: int,
                               consts: Optional[LatticeConstants] = None
                               ) -> AffinePresentation:
    """N-optimal presentation of the point m in Z^d (codimension d).

    Greedy prefix construction: at each step take the pair (p, v), ordered by
    p first then sign-lex on v, with v in B_N independent of the vectors
    already chosen and (v, m) = p >= 0.
    """
    m = tuple(int(x) for x in m)
    d = len(m)
    bn = ball_bn(d, kappa_sq, N)
    if mat_rank(bn[: min(len(bn), 4 * d ** 2 + 8)]) < d and mat_rank(bn) < d:
        raise ValueError("B_N does not contain a basis of R^d; increase N")
    dots = bn @ np.array(m, dtype=np.int64)
    valid = dots >= 0
    cand = np.nonzero(valid)[0]
    order = cand[np.lexsort((cand, dots[cand]))]  # by p, ties by sign-lex rank
    chosen, ps = [], []
    for idx in order:
        v = tuple(int(x) for x in bn[idx])
        if _independent_of(v, chosen):
            chosen.append(v)
            ps.append(int(dots[idx]))
            if len(chosen) == d:
                break
    if len(chosen) < d:
        raise ValueError("could not complete a presentation inside B_N")
    return AffinePresentation(tuple(chosen), tuple(ps), n_opt_for=N)


def optimal_presentation_subspace(pres: AffinePresentation, N: int, kappa_sq: int
                                  ) -> AffinePresentation:
    """N-optimal presentation of the affine subspace given by `pres`.

    Candidate vectors are the elements of B_N lying in the rational span of the
    normals whose constant on A is a nonnegative integer.
    """
    d = pres.dim
    ell = pres.codim
    bn = ball_bn(d, kappa_sq, N)
    normals = [list(v) for v in pres.vectors]
    chosen, ps = [], []
    # precompute candidate (p, v) pairs
    pairs = []
    for row in bn:
        v = tuple(int(x) for x in row)
        if mat_rank(normals + [list(v)]) != ell:
            continue  # not constant on A
        # constant: v = sum c_i normals -> p = sum c_i p_i
        sol = solve_exact([[normals[i][j] for i in range(ell)] for j in range(d)],
                          list(v))
        if sol is None:
            continue
        p = sum(c * q for c, q in zip(sol, pres.constants))
        if p.denominator != 1 or p < 0:
            continue
        pairs.append((int(p), v))
    pairs.sort(key=lambda t: (t[0],) + sign_lex_key(t[1]))
    for p, v in pairs:
        if _independent_of(v, chosen):
            chosen.append(v)
            ps.append(p)
            if len(chosen) == ell:
                break
    if len(chosen) < ell:
        raise ValueError("subspace admits no presentation with vectors in B_N")
    return AffinePresentation(tuple(chosen), tuple(ps), n_opt_for=N)


def optimal_presentation(target, N: int, kappa_sq: int,
                         consts: Optional[LatticeConstants] = None):
    if isinstance(target, AffinePresentation):
        return optimal_presentation_subspace(target, N, kappa_sq)
    return optimal_presentation_point(target, N, kappa_sq, consts)


# ---------------------------------------------------------------------------
# cuts
# ---------------------------------------------------------------------------

def find_cut(m, params: CutParams, kappa_sq: int,
             presentation: Optional[AffinePresentation] = None) -> Optional[CutResult]:
    """The unique cut of m for allowable (N, theta, mu, tau), or None.

    Convention p_0 = 0, p_{d+1} = +infinity; the cut index l satisfies
    p_l < mu N^tau and p_{l+1} > theta N^{4 d tau} (log-space comparison).
    """
    d = params.consts.d
    pres = presentation or optimal_presentation_point(m, params.N, kappa_sq)
    ps = pres.constants
    log_small, log_large = params.log_small(), params.log_large()

    def below(p):  # p < mu N^tau
        return p == 0 or math.log(p) < log_small

    def above(p):  # p > theta N^{4d tau}
        return p is None or (p > 0 and math.log(p) > log_large)

    for ell in range(d + 1):
        p_lo = 0 if ell == 0 else ps[ell - 1]
        p_hi = None if ell == d else ps[ell]  # None encodes +infinity
        if below(p_lo) and above(p_hi):
            sub = pres.prefix(ell) if ell > 0 else None
            return CutResult(ell=ell, subspace=sub, presentation=pres, params=params)
    return None


# ---------------------------------------------------------------------------
# good points
# ---------------------------------------------------------------------------

def is_good_point(m, pres: AffinePresentation, N: int, root_norm: float,
                  consts: LatticeConstants, kappa_sq: int) -> bool:
    """Membership of m in the N-good portion A^g of A = [v_i;p_i]_l.

    Requires A itself N-good (p_l <= c N^{tau1/4d}); the root norm of m is
    supplied by the caller (graph module).
    """
    ell = pres.codim
    p_l = pres.constants[-1]
    if not _le_log(p_l, consts.good_subspace_log_bound(N)):
        raise ValueError("subspace is not N-good: p_l > c N^{tau1/(4d)}")
    if not pres.contains(m):
        raise ValueError("point does not lie on the subspace")
    if not _gt_log(root_norm, consts.root_log_bound(N)):
        return False
    strip = consts.strip_log_bound(N, p_l)
    bn = ball_bn(len(m), kappa_sq, N)
    dots = bn @ np.array(m, dtype=np.int64)
    normals = [list(v) for v in pres.vectors]
    for row, val in zip(bn, dots):
        if _lt_log(abs(int(val)), strip):
            # candidate violation; discard if v lies in the span of the normals
            if mat_rank(normals + [list(int(x) for x in row)]) == ell:
                continue
            return False
    return True


def _le_log(value: float, log_bound: float) -> bool:
    if value <= 0:
        return True
    return math.log(value) <= log_bound


def _lt_log(value: float, log_bound: float) -> bool:
    if value <= 0:
        return True
    return math.log(value) < log_bound


def _gt_log(value: float, log_bound: float) -> bool:
    return value > 0 and math.log(value) > log_bound


# ---------------------------------------------------------------------------
# decomposition of Z^d
# ---------------------------------------------------------------------------

@dataclass
class DecompositionEntry:
    point: tuple
    ell: int                     # 0..d
    witness: Optional[AffinePresentation]  # good subspace for 1 <= ell < d
    cascade_failed: bool = False


@dataclass
class Decomposition:
    N: int
    consts: LatticeConstants
    entries: dict = field(default_factory=dict)
    failures: int = 0

    @property
    def surrogate(self) -> bool:
        return self.consts.surrogate

    def class_counts(self):
        counts = {}
        for e in self.entries.values():
            counts[e.ell] = counts.get(e.ell, 0) + 1
        return counts


def decompose(N: int, box: Iterable, root_map, consts: LatticeConstants,
              kappa_sq: int) -> Decomposition:
    """Partition of the enumerated box into the classes A_0(N)..A_d(N).

    root_map(m) must return the root of the graph component of m (so that
    |r(m)| is available); points with |r(m)| <= C N^{tau1} land in class d,
    points whose first constant already exceeds C N^{4d tau0} in class 0, and
    the rest in the class of the good subspace produced by the cascade.
    A cascade failure (possible only with inconsistent surrogate exponents)
    is counted and the point is assigned to class d with a flag.
    """
    d = consts.d
    out = Decomposition(N=N, consts=consts)
    root_log = consts.root_log_bound(N)
    p1_log = consts.p1_log_bound(N)
    good_log = consts.good_subspace_log_bound(N)
    bn = ball_bn(d, kappa_sq, N)
    for m in box:
        m = tuple(int(x) for x in m)
        r = root_map(m)
        rnorm = math.sqrt(sum(x * x for x in r))
        if not _gt_log(rnorm, root_log):
            out.entries[m] = DecompositionEntry(m, d, None)
            continue
        pres = optimal_presentation_point(m, N, kappa_sq)
        ps = pres.constants
        if ps[0] > 0 and math.log(ps[0]) >= p1_log:
            out.entries[m] = DecompositionEntry(m, 0, None)
            continue
        assigned = False
        mvec = np.array(m, dtype=np.int64)
        dots = np.abs(bn @ mvec)
        for ell in range(1, d):
            p_l = ps[ell - 1]
            if not _le_log(p_l, good_log):
                break  # prefix no longer N-good; cascade cannot proceed
            strip = consts.strip_log_bound(N, p_l)
            normals = [list(v) for v in pres.vectors[:ell]]
            ok = True
            for row, val in zip(bn, dots):
                if _lt_log(int(val), strip):
                    if mat_rank(normals + [list(int(x) for x in row)]) == ell:
                        continue
                    ok = False
                    break
            if ok:
                out.entries[m] = DecompositionEntry(m, ell, pres.prefix(ell))
                assigned = True
                break
        if not assigned:
            out.entries[m] = DecompositionEntry(m, d, None, cascade_failed=True)
            out.failures += 1
    return out


# ---------------------------------------------------------------------------
# box iteration and subspace enumeration helpers
# ---------------------------------------------------------------------------

def lattice_box(d: int, radius: float) -> Iterator[tuple]:
    """Integer points with euclidean norm <= radius."""
    b = int(math.floor(radius))
    rng = range(-b, b + 1)
    if d == 1:
        for x in rng:
            if x * x <= radius * radius:
                yield (x,)
        return
    for head in lattice_box(d - 1, radius):
        hsq = sum(x * x for x in head)
        for x in rng:
            if hsq + x * x <= radius * radius:
                yield head + (x,)


def enumerate_cut_subspaces(box: Iterable, params: CutParams, kappa_sq: int):
    """Distinct associated subspaces of the cuts (0 < l < d) of box points.

    Returns {subspace_key: (AffinePresentation, [points])}; practical stand-in
    for enumerating H_p inside a finite region.
    """
    d = params.consts.d
    found = {}
    for m in box:
        cut = find_cut(m, params, kappa_sq)
        if cut is None or cut.ell == 0 or cut.ell >= d:
            continue
        key = cut.subspace_key()
        if key not in found:
            found[key] = (cut.subspace, [])
        found[key][1].append(tuple(int(x) for x in m))
    return found


def count_bound(consts_kappa_sq: int, N: int, ell: int, d: int, p: int) -> float:
    """Upper bound (2 kappa N + 1)^{l d} (p+1)^l on the number of codim-l
    subspaces with p_l <= p."""
    kappa = math.sqrt(consts_kappa_sq)
    return (2 * kappa * N + 1) ** (ell * d) * (p + 1) ** ell
