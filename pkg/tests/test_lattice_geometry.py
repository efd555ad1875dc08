"""Sign-lex order, optimal presentations (vs brute-force enumeration), cuts
(vs a direct threshold-scan oracle), good points (vs strip enumeration) and
the decomposition of Z^d."""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlskam.fixtures import (cut_constants, cut_params, decompose_constants,
                             default_graph)
from nlskam.lattice_geometry import (AffinePresentation, CutParams,
                                     ball_bn, count_bound, decompose,
                                     enumerate_cut_subspaces, find_cut,
                                     is_good_point, lattice_box,
                                     optimal_presentation,
                                     optimal_presentation_point,
                                     optimal_presentation_subspace,
                                     sign_lex_compare, sign_lex_key,
                                     surrogate_constants)

KAPPA_SQ = 2  # fixture kappa^2


# ---------------------------------------------------------------------------
# sign-lexicographic order
# ---------------------------------------------------------------------------

def test_sign_lex_spec_values():
    assert sign_lex_compare((0, 1), (1, 0)) == -1
    assert sign_lex_compare((1, 0), (1, 0)) == 0
    # equal (|a|): the one larger in plain Z-lex order is the smaller
    assert sign_lex_compare((1, 0), (-1, 0)) == -1


def test_sign_lex_length_mismatch():
    with pytest.raises(ValueError):
        sign_lex_compare((1,), (1, 2))


vec = st.lists(st.integers(-9, 9), min_size=3, max_size=3).map(tuple)


@given(vec, vec, vec)
@settings(max_examples=200, deadline=None)
def test_sign_lex_total_order(a, b, c):
    ka, kb, kc = sign_lex_key(a), sign_lex_key(b), sign_lex_key(c)
    assert (ka == kb) == (a == b)
    if ka <= kb and kb <= kc:
        assert ka <= kc


@given(st.sets(vec, min_size=1, max_size=8))
@settings(max_examples=100, deadline=None)
def test_sign_lex_unique_minimum(vs):
    vs = list(vs)
    lo = min(vs, key=sign_lex_key)
    assert sum(1 for v in vs if sign_lex_key(v) == sign_lex_key(lo)) == 1


@given(vec.filter(lambda v: any(v)))
@settings(max_examples=100, deadline=None)
def test_sign_lex_prefers_nonnegative(v):
    neg = tuple(-x for x in v)
    lo = min([v, neg], key=sign_lex_key)
    lead = next(x for x in lo if x != 0)
    assert lead > 0


# ---------------------------------------------------------------------------
# optimal presentations
# ---------------------------------------------------------------------------

def brute_force_optimal_point(m, N, kappa_sq):
    """Exhaustive minimum over all presentations of the point m with vectors
    in B_N: independent pairs (v1, v2) with p_i = (v_i, m) >= 0, ordered by
    sign-lex on the display vector (independent of the greedy path)."""
    bn = [tuple(int(x) for x in row) for row in ball_bn(2, kappa_sq, N)]
    best = None
    for v1 in bn:
        p1 = v1[0] * m[0] + v1[1] * m[1]
        if p1 < 0:
            continue
        for v2 in bn:
            if v1[0] * v2[1] - v1[1] * v2[0] == 0:
                continue
            p2 = v2[0] * m[0] + v2[1] * m[1]
            if p2 < 0:
                continue
            disp = (p1, p2) + v1 + v2
            key = sign_lex_key(disp)
            if best is None or key < best[0]:
                best = (key, (v1, v2), (p1, p2))
    return AffinePresentation(best[1], best[2])


def test_optimal_point_zero():
    pres = optimal_presentation_point((0, 0), 6, 1)
    assert pres.constants == (0, 0)


def test_optimal_point_five_zero_vs_oracle():
    pres = optimal_presentation_point((5, 0), 6, 1)
    oracle = brute_force_optimal_point((5, 0), 6, 1)
    assert pres.display() == oracle.display()


@pytest.mark.parametrize("seed", range(4))
def test_optimal_point_random_vs_oracle(seed):
    rng = np.random.default_rng(seed)
    for _ in range(12):
        m = tuple(int(x) for x in rng.integers(-9, 10, size=2))
        pres = optimal_presentation_point(m, 3, KAPPA_SQ)
        oracle = brute_force_optimal_point(m, 3, KAPPA_SQ)
        assert pres.display() == oracle.display(), m


def test_monotone_constants_and_prefix_optimality():
    rng = np.random.default_rng(7)
    for _ in range(20):
        m = tuple(int(x) for x in rng.integers(-15, 16, size=2))
        pres = optimal_presentation_point(m, 3, KAPPA_SQ)
        ps = pres.constants
        assert all(0 <= ps[i] <= ps[i + 1] for i in range(len(ps) - 1))
        # Lemma basso iii: the prefix presents an N-optimal subspace
        prefix = pres.prefix(1)
        re_opt = optimal_presentation_subspace(prefix, 3, KAPPA_SQ)
        assert re_opt.display() == prefix.display()


def test_negation_same_constants_same_abs_vectors():
    rng = np.random.default_rng(3)
    for _ in range(15):
        m = tuple(int(x) for x in rng.integers(-12, 13, size=2))
        pres = optimal_presentation_point(m, 3, KAPPA_SQ)
        neg = optimal_presentation_point(tuple(-x for x in m), 3, KAPPA_SQ)
        assert neg.constants == pres.constants
        for v, w in zip(pres.vectors, neg.vectors):
            assert tuple(abs(x) for x in v) == tuple(abs(x) for x in w)


def test_lower_bound_property_va3():
    # |(v, r)| >= p_{j+1} for v in B_N inside the full span but outside the
    # prefix span, for every point r of the prefix subspace
    bn = [tuple(int(x) for x in row) for row in ball_bn(2, KAPPA_SQ, 3)]
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = tuple(int(x) for x in rng.integers(-10, 11, size=2))
        pres = optimal_presentation_point(m, 3, KAPPA_SQ)
        v1 = pres.vectors[0]
        p2 = pres.constants[1]
        for v in bn:
            if v1[0] * v[1] - v1[1] * v[0] == 0:
                continue  # in the prefix span
            # v is in <v1, v2> automatically (full space, d = 2)
            assert abs(v[0] * m[0] + v[1] * m[1]) >= p2


def test_dispatch_point_vs_subspace():
    pres = optimal_presentation((4, 2), 3, KAPPA_SQ)
    assert pres.codim == 2
    sub = AffinePresentation(((1, 1),), (6,))
    re_opt = optimal_presentation(sub, 3, KAPPA_SQ)
    assert re_opt.codim == 1
    assert re_opt.contains((4, 2))


def test_subspace_not_representable_raises():
    # a direction far too steep for B_N at small N
    sub = AffinePresentation(((23, 1),), (0,))
    with pytest.raises(ValueError):
        optimal_presentation_subspace(sub, 2, 1)


# ---------------------------------------------------------------------------
# cuts
# ---------------------------------------------------------------------------

def scan_cut_oracle(ps, params):
    """Direct threshold scan of the p-vector with explicit conventions."""
    d = params.consts.d
    small = params.mu * params.N ** params.tau
    large = params.theta * params.N ** (4 * d * params.tau)
    hits = []
    full = (0,) + tuple(ps) + (math.inf,)
    for ell in range(d + 1):
        if full[ell] < small and full[ell + 1] > large:
            hits.append(ell)
    return hits


def test_cut_at_zero_and_d():
    params = cut_params()
    # p_1 beyond the large threshold -> cut at 0
    large = params.theta * params.N ** (4 * 2 * params.tau)
    target = int(large) + 9
    m = (target, target + 1)
    pres = optimal_presentation_point(m, params.N, KAPPA_SQ)
    if pres.constants[0] > large:
        cut = find_cut(m, params, KAPPA_SQ)
        assert cut is not None and cut.ell == 0
    # m = 0 has all constants 0 -> cut at d
    cut0 = find_cut((0, 0), params, KAPPA_SQ)
    assert cut0 is not None and cut0.ell == 2


def test_cut_matches_scan_oracle_and_unique():
    params = cut_params()
    rng = np.random.default_rng(11)
    for _ in range(200):
        m = tuple(int(x) for x in rng.integers(-60, 61, size=2))
        pres = optimal_presentation_point(m, params.N, KAPPA_SQ)
        hits = scan_cut_oracle(pres.constants, params)
        assert len(hits) <= 1
        cut = find_cut(m, params, KAPPA_SQ, presentation=pres)
        if cut is None:
            assert hits == []
        else:
            assert hits == [cut.ell]


def test_allowability_rejected():
    consts = cut_constants()
    with pytest.raises(ValueError):
        CutParams(N=2, theta=consts.C + 1, mu=1.0, tau=0.8, consts=consts)
    with pytest.raises(ValueError):
        CutParams(N=2, theta=1.0, mu=1.0, tau=consts.tau1, consts=consts)


# ---------------------------------------------------------------------------
# good points
# ---------------------------------------------------------------------------

def test_good_point_requires_large_root():
    consts = decompose_constants()
    sub = AffinePresentation(((0, 1),), (0,))
    # first condition |r| > C N^{tau1} fails
    assert not is_good_point((30, 0), sub, 2, 3.0, consts, KAPPA_SQ)


def test_good_point_zero_dot_fails():
    consts = decompose_constants()
    sub = AffinePresentation(((0, 1),), (0,))
    # (1, 0) in B_N is outside span((0,1)) and (v, m) = 0 for m = 0-ish rows
    assert not is_good_point((0, 0), sub, 2, 1e9, consts, KAPPA_SQ)


def test_good_set_matches_strip_enumeration():
    consts = decompose_constants()
    N = 2
    sub = AffinePresentation(((0, 1),), (0,))  # the x-axis
    bn = [tuple(int(x) for x in row) for row in ball_bn(2, KAPPA_SQ, N)]
    strip = consts.C * N ** (4 * 2 * consts.tau0)
    root_log = consts.root_log_bound(N)
    for a in range(-45, 46):
        m = (a, 0)
        rnorm = abs(a)  # surrogate root: the point itself (open stratum)
        expected = rnorm > math.exp(root_log)
        for v in bn:
            if v[0] == 0:
                continue  # v parallel to (0,1): inside the span
            if abs(v[0] * a) < strip:  # |(v, m)| below the strip bound
                expected = False
        got = is_good_point(m, sub, N, float(rnorm), consts, KAPPA_SQ)
        assert got == expected, (m, got, expected)


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def big_fixture():
    return default_graph(44.0)


def test_decompose_partition_radius_40(big_fixture):
    consts = decompose_constants()
    box = list(lattice_box(2, 40.0))
    parts = decompose(2, box, big_fixture.graph.root_of_extended, consts,
                      big_fixture.kappa_sq)
    assert len(parts.entries) == len(box)
    assert parts.failures == 0
    counts = parts.class_counts()
    assert set(counts) == {0, 1, 2}
    # class d: small root norm
    root_bound = math.exp(consts.root_log_bound(2))
    for m, entry in parts.entries.items():
        rnorm = math.sqrt(sum(
            x * x for x in big_fixture.graph.root_of_extended(m)))
        if entry.ell == 2:
            assert rnorm <= root_bound or entry.cascade_failed
        else:
            assert rnorm > root_bound
        if entry.ell == 0:
            pres = optimal_presentation_point(m, 2, big_fixture.kappa_sq)
            assert pres.constants[0] >= math.exp(consts.p1_log_bound(2)) - 1e-9


def test_decompose_witness_is_good(big_fixture):
    consts = decompose_constants()
    box = [m for m in lattice_box(2, 30.0)]
    parts = decompose(2, box, big_fixture.graph.root_of_extended, consts,
                      big_fixture.kappa_sq)
    for m, entry in parts.entries.items():
        if entry.ell == 1:
            rnorm = math.sqrt(sum(
                x * x for x in big_fixture.graph.root_of_extended(m)))
            assert is_good_point(m, entry.witness, 2, rnorm, consts,
                                 big_fixture.kappa_sq)


def test_count_bound_on_enumerated_subspaces(big_fixture):
    from nlskam.fixtures import decompose_params
    params = decompose_params()
    box = list(lattice_box(2, 25.0))
    found = enumerate_cut_subspaces(box, params, big_fixture.kappa_sq)
    assert found, "no cut subspaces; surrogate exponents mis-tuned"
    p_max = max(pres.constants[-1] for pres, _ in found.values())
    bound = count_bound(big_fixture.kappa_sq, params.N, 1, 2, p_max)
    assert len(found) <= bound


# ---------------------------------------------------------------------------
# neighborhood property (Lemma mah)
# ---------------------------------------------------------------------------

def mah_sample_points(t_max: int, restrictive, kappa_sq):
    """Points with an ell=1 cut for the restrictive parameters: multiples of
    primitive directions orthogonal to some B_N vector, plus the cut check."""
    dirs = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2)]
    out = []
    for u in dirs:
        step = max(1, int(math.hypot(*u)))
        for t in range(60, t_max + 1):
            m = (t * u[0], t * u[1])
            cut = find_cut(m, restrictive, kappa_sq)
            if cut is not None and cut.ell == 1:
                out.append((m, cut))
    return out


def run_neighborhood_check(n_pairs: int, rng):
    """Shared with the acceptance suite; returns (checked, counterexamples)."""
    consts = cut_constants()
    N, tau = 2, 0.8
    theta_r, mu_r = 1.0, 0.5        # restrictive (theta', mu')
    theta, mu = 0.5, 3.5            # relaxed
    restrictive = CutParams(N=N, theta=theta_r, mu=mu_r, tau=tau,
                            consts=consts)
    relaxed = CutParams(N=N, theta=theta, mu=mu, tau=tau, consts=consts)
    kappa = math.sqrt(KAPPA_SQ)
    radius = min((mu - mu_r) * N ** (tau - 1) / kappa,
                 (theta_r - theta) * N ** (4 * 2 * tau - 1) / kappa)
    assert radius > 1.0  # nonvacuous
    deltas = [dv for dv in itertools.product(range(-2, 3), repeat=2)
              if 0 < math.hypot(*dv) < radius]
    points = mah_sample_points(260, restrictive, KAPPA_SQ)
    assert points, "no restrictive cuts found; surrogate exponents broken"
    checked = 0
    counterexamples = 0
    while checked < n_pairs:
        m, cut_m = points[int(rng.integers(len(points)))]
        dv = deltas[int(rng.integers(len(deltas)))]
        r = (m[0] + dv[0], m[1] + dv[1])
        cut_r = find_cut(r, relaxed, KAPPA_SQ)
        checked += 1
        if cut_r is None or cut_r.ell != cut_m.ell:
            counterexamples += 1
            continue
        expected = cut_m.subspace.translate(dv)
        re_opt = optimal_presentation_subspace(expected, N, KAPPA_SQ)
        if re_opt.display() != cut_r.subspace.display():
            counterexamples += 1
    return checked, counterexamples


def test_neighborhood_property_sampled():
    checked, bad = run_neighborhood_check(1500, np.random.default_rng(23))
    assert checked == 1500
    assert bad == 0
