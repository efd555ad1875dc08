"""Block matrices vs the Poisson-bracket oracle, spectra, regions,
sigma-orthogonal diagonalization, conservation laws.

The red 2x2 block here follows the bracket-derived matrix
[[0, -2 sqrt(xi1 xi2)], [2 sqrt(xi1 xi2), -(xi1+xi2)]] (sigma of the column
index), which is exactly sigma_A-self-adjoint and reproduces the ad-action of
the normal form; it is hyperbolic for balanced actions and elliptic for
strongly unbalanced ones.
"""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from nlskam.exact import solve_exact
from nlskam.fixtures import default_graph, toy_graph
from nlskam.ham_algebra import (Bounds, Context, ModeData, MonomialKey,
                                TruncatedHamiltonian, poisson_bracket)
from nlskam.normal_form import (ParameterPoint, assemble_block,
                                block_spectrum, conserved_quantities_check,
                                diagonalize_block, discriminant_exact,
                                FrequencyMap, region_scan, sample_simplex)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def test_parameter_point_positive():
    with pytest.raises(ValueError):
        ParameterPoint((0.5, 0.0))


def test_isolated_vertex_block_is_zero():
    g = default_graph().graph
    comp = next(c for c in g.components_with_roots()
                if c.size == 1 and not c.incomplete)
    block = assemble_block(comp, 3)
    assert block.dim == 1
    assert np.allclose(block.evaluate((0.3, 0.4, 0.5)), 0.0)


def test_red_pair_block_entries():
    g = toy_graph().graph
    comp = g.component_of((1, 1))
    block = assemble_block(comp, 2)
    a = math.sqrt(0.2 * 0.3)
    got = block.evaluate((0.2, 0.3))
    want = np.array([[0.0, -2 * a], [2 * a, -(0.2 + 0.3)]])
    assert np.allclose(got, want)
    assert block.sigma == (1, -1)


def test_sigma_self_adjoint_exact_all_blocks():
    fix = default_graph()
    eta = (Fraction(1, 2), Fraction(2, 3), Fraction(3, 4))
    for comp in fix.graph.components_with_roots():
        if comp.incomplete:
            continue
        block = assemble_block(comp, 3)
        assert block.self_adjointness_defect_exact(eta) == 0


def test_red_free_blocks_symmetric():
    fix = default_graph()
    for comp in fix.graph.components_with_roots():
        if comp.incomplete or any(e.color == "red" for e in comp.edges):
            continue
        block = assemble_block(comp, 3)
        m = block.evaluate((0.3, 0.5, 0.7))
        assert np.allclose(m, m.T)


def test_block_depends_only_on_comb_class():
    fix = default_graph()
    by_class = {}
    for comp in fix.graph.components_with_roots():
        if comp.incomplete or comp.size < 2:
            continue
        by_class.setdefault(comp.comb_class, []).append(comp)
    family = next(v for v in by_class.values() if len(v) >= 2)
    b0 = assemble_block(family[0], 3)
    b1 = assemble_block(family[1], 3)
    assert b0.entries == b1.entries
    assert b0.sigma == b1.sigma


def test_homogeneity_degree_one():
    g = toy_graph().graph
    block = assemble_block(g.component_of((1, 1)), 2)
    xi = (0.21, 0.34)
    assert np.allclose(2.0 * block.evaluate(xi),
                       block.evaluate(tuple(2 * v for v in xi)))


def test_assemble_rejects_incomplete():
    fix = default_graph()
    comp = next(c for c in fix.graph.components_with_roots() if c.incomplete)
    with pytest.raises(ValueError):
        assemble_block(comp, 3)


# ---------------------------------------------------------------------------
# ad(N) bracket oracle (the arbiter for all sign conventions)
# ---------------------------------------------------------------------------

def primed_normal_form(graph, sites, xi, bounds=None):
    """N in the primed variables: (omega, y) + sum Omega~_k |z_k|^2 +
    the constant-coefficient quadratic (diagonal -2 xi.L(k) + edge terms)."""
    n = len(sites)
    ctx = Context.action_angle(sites, modes=ModeData.from_graph(graph))
    N = TruncatedHamiltonian(ctx, bounds or Bounds())
    zk = (0,) * n
    for h in range(n):
        i = tuple(1 if t == h else 0 for t in range(n))
        omega = sum(x * x for x in sites[h]) - 2 * xi[h]
        N.add_term(MonomialKey.make(zk, i), complex(omega))
    sq = [sum(x * x for x in s) for s in sites]
    for comp in graph.components_with_roots():
        if comp.incomplete:
            continue
        for m in comp.vertices:
            lv = comp.L[m]
            om_t = sum(x * x for x in m) + sum(lv[i] * sq[i] for i in range(n))
            om_t -= 2 * sum(lv[i] * xi[i] for i in range(n))
            N.add_term(MonomialKey.make(zk, zk, ((m, 1),), ((m, 1),)),
                       complex(om_t))
        for e in comp.edges:
            i, j = e.mark[0] - 1, e.mark[1] - 1
            c = 4 * math.sqrt(xi[i] * xi[j])
            if e.color == "black":
                N.add_term(MonomialKey.make(zk, zk, ((e.a, 1),), ((e.b, 1),)),
                           complex(c))
                N.add_term(MonomialKey.make(zk, zk, ((e.b, 1),), ((e.a, 1),)),
                           complex(c))
            else:
                N.add_term(MonomialKey.make(zk, zk,
                                            ((e.a, 1), (e.b, 1)), ()),
                           complex(c))
                N.add_term(MonomialKey.make(zk, zk, (),
                                            ((e.a, 1), (e.b, 1))),
                           complex(c))
    return ctx, N


def find_nu(sites, root):
    """Integer nu with sum nu_i j_i + r = 0 and mass sum nu_i = -1, if any."""
    d = len(root)
    n = len(sites)
    rows = [[sites[i][t] for i in range(n)] for t in range(d)]
    rows.append([1] * n)
    rhs = [-x for x in root] + [-1]
    sol = solve_exact(rows, rhs)
    if sol is None or any(s.denominator != 1 for s in sol):
        return None
    return tuple(int(s) for s in sol)


def adn_matrix(ctx, N, comp, nu, block):
    """Matrix of -(i/2) ad(N) on the (A, nu) block in the block's canonical
    vertex order, computed with the Poisson bracket."""
    order = block.vertices
    idx = {m: t for t, m in enumerate(order)}
    dim = len(order)
    out = np.zeros((dim, dim), dtype=complex)
    for col, m in enumerate(order):
        s = comp.sigma[m]
        k = tuple(s * v for v in nu)
        if s == 1:
            key = MonomialKey.make(k, (0,) * ctx.n, ((m, 1),), ())
        else:
            key = MonomialKey.make(k, (0,) * ctx.n, (), ((m, 1),))
        single = TruncatedHamiltonian(ctx, Bounds())
        single.add_term(key, 1.0 + 0j)
        br, _ = poisson_bracket(N, single)
        for key2, c in br.terms.items():
            val = -0.5j * complex(c)
            # identify the target basis element
            if key2.alpha and not key2.beta:
                m2, s2 = key2.alpha[0][0], 1
            elif key2.beta and not key2.alpha:
                m2, s2 = key2.beta[0][0], -1
            else:
                raise AssertionError(f"unexpected bracket term {key2}")
            assert comp.sigma[m2] == s2
            assert key2.k == tuple(s2 * v for v in nu)
            out[idx[m2], col] += val
    return out


def test_madin_bracket_vs_matrix_three_blocks():
    fix = default_graph()
    g = fix.graph
    sites = fix.sites.sites
    xi = (0.23, 0.37, 0.31)
    ctx, N = primed_normal_form(g, sites, xi)
    sq = [sum(x * x for x in s) for s in sites]
    checked = 0
    seen_classes = set()
    for comp in g.components_with_roots():
        if comp.incomplete or comp.comb_class in seen_classes:
            continue
        nu = find_nu(sites, comp.root)
        if nu is None:
            continue
        seen_classes.add(comp.comb_class)
        block = assemble_block(comp, 3)
        got = adn_matrix(ctx, N, comp, nu, block)
        rsq = sum(x * x for x in comp.root)
        scalar = 0.5 * (rsq + sum(nu[i] * sq[i] for i in range(3))) \
            - sum(nu[i] * xi[i] for i in range(3))
        want = block.evaluate(xi) + scalar * np.eye(block.dim)
        assert np.max(np.abs(got - want)) < 1e-10, comp.root
        checked += 1
        if checked >= 3:
            break
    assert checked >= 3, "fixture must provide three (A, nu) blocks"


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

def test_spectrum_1x1_zero():
    g = default_graph().graph
    comp = next(c for c in g.components_with_roots()
                if c.size == 1 and not c.incomplete)
    spec = block_spectrum(assemble_block(comp, 3), (0.2, 0.3, 0.4))
    assert np.allclose(spec.eigenvalues, 0.0)
    assert not spec.complex_pairs


def test_red_pair_spectrum_regions():
    # hyperbolic for balanced actions, elliptic beyond ratio 7 + 4 sqrt(3)
    g = toy_graph().graph
    block = assemble_block(g.component_of((1, 1)), 2)
    spec_mid = block_spectrum(block, (1.0, 1.0))
    assert len(spec_mid.complex_pairs) == 1
    spec_edge = block_spectrum(block, (20.0, 1.0))
    assert not spec_edge.complex_pairs
    boundary = 7 + 4 * math.sqrt(3)
    spec_in = block_spectrum(block, (boundary * 1.05, 1.0))
    assert not spec_in.complex_pairs
    spec_out = block_spectrum(block, (boundary * 0.95, 1.0))
    assert len(spec_out.complex_pairs) == 1


def test_eigenvalue_homogeneity():
    fix = default_graph()
    xi = (0.19, 0.41, 0.37)
    xi2 = tuple(2 * v for v in xi)
    for comp in fix.graph.components_with_roots():
        if comp.incomplete or comp.size < 2:
            continue
        block = assemble_block(comp, 3)
        l1 = np.sort_complex(np.linalg.eigvals(block.evaluate(xi)))
        l2 = np.sort_complex(np.linalg.eigvals(block.evaluate(xi2)))
        scale = max(1.0, np.max(np.abs(l2)))
        assert np.max(np.abs(2 * l1 - l2)) < 1e-12 * scale


def test_eigenvalues_distinct_off_discriminant():
    fix = default_graph()
    rng = np.random.default_rng(2)
    blocks = [assemble_block(c, 3) for c in fix.graph.components_with_roots()
              if not c.incomplete and c.size >= 2]
    near_misses = 0
    for _ in range(40):
        xi = tuple(0.05 + rng.random() for _ in range(3))
        for b in blocks:
            spec = block_spectrum(b, xi)
            if spec.degenerate:
                near_misses += 1
                # exact recheck at a nearby rational point
                eta = tuple(Fraction(int(1000 * math.sqrt(v)), 1000)
                            for v in xi)
                assert discriminant_exact(b, eta) != 0
    assert near_misses <= 2


def test_exact_discriminant_zero_on_crafted_degeneracy():
    # the 2x2 red block family degenerates exactly at xi1/xi2 = 7 + 4 sqrt(3);
    # rational points never hit it, so the discriminant is nonzero there
    g = toy_graph().graph
    block = assemble_block(g.component_of((1, 1)), 2)
    assert discriminant_exact(block, (Fraction(1), Fraction(1))) != 0


# ---------------------------------------------------------------------------
# region scan
# ---------------------------------------------------------------------------

def test_region_scan_toy():
    g = toy_graph().graph
    rep = region_scan(g, cone_samples=60, rng=np.random.default_rng(0), S0=3)
    assert rep["n_block_classes"] >= 2
    assert sum(rep["regions"].values()) == 60
    # the red family is hyperbolic on the balanced part of the simplex, so
    # not every sample is elliptic; single-vertex blocks alone are all real
    assert rep["regions"]


def test_region_scan_ray_invariance():
    g = toy_graph().graph
    block = assemble_block(g.component_of((1, 1)), 2)
    for t in (0.2, 1.0, 5.0):
        spec = block_spectrum(block, (t * 0.4, t * 0.6))
        base = block_spectrum(block, (0.4, 0.6))
        assert len(spec.complex_pairs) == len(base.complex_pairs)


# ---------------------------------------------------------------------------
# diagonalization
# ---------------------------------------------------------------------------

def test_diagonalize_1x1():
    g = default_graph().graph
    comp = next(c for c in g.components_with_roots()
                if c.size == 1 and not c.incomplete)
    diag = diagonalize_block(assemble_block(comp, 3), (0.2, 0.3, 0.4))
    assert np.allclose(diag.U, [[1.0]])


def test_diagonalize_real_and_complex():
    g = toy_graph().graph
    block = assemble_block(g.component_of((1, 1)), 2)
    # elliptic point
    de = diagonalize_block(block, (20.0, 1.0))
    assert de.sigma_residual < 1e-10
    assert de.canon_residual < 1e-10
    assert len(de.real_eigs) == 2
    # hyperbolic point: canonical 2x2 [[a,-b],[b,a]]
    dh = diagonalize_block(block, (1.0, 1.0))
    assert dh.sigma_residual < 1e-10
    assert dh.canon_residual < 1e-10
    assert len(dh.complex_pairs) == 1
    a, b = dh.complex_pairs[0]
    assert abs(a - (-1.0)) < 1e-10 and abs(abs(b) - math.sqrt(3)) < 1e-10


def test_diagonalize_symmetric_block():
    fix = default_graph()
    comp = next(c for c in fix.graph.components_with_roots()
                if not c.incomplete and c.size == 2
                and all(e.color == "black" for e in c.edges))
    block = assemble_block(comp, 3)
    xi = (0.3, 0.45, 0.2)
    diag = diagonalize_block(block, xi)
    assert diag.sigma_residual < 1e-10
    assert diag.canon_residual < 1e-10
    lam = sorted(np.linalg.eigvals(block.evaluate(xi)).real)
    assert np.allclose(sorted(diag.real_eigs), lam, atol=1e-10)


def test_diagonalize_homogeneity():
    # eigenvectors of rho C are eigenvectors of C: U(xi) also works at rho xi
    g = toy_graph().graph
    block = assemble_block(g.component_of((1, 1)), 2)
    xi = (20.0, 1.0)
    diag = diagonalize_block(block, xi)
    rho = 3.7
    C2 = block.evaluate(tuple(rho * v for v in xi))
    got = np.linalg.inv(diag.U) @ C2 @ diag.U
    assert np.max(np.abs(got - rho * diag.canonical)) < 1e-9


def test_diagonalize_refuses_degenerate():
    g = toy_graph().graph
    block = assemble_block(g.component_of((1, 1)), 2)
    boundary = 7 + 4 * math.sqrt(3)
    with pytest.raises(ArithmeticError):
        diagonalize_block(block, (boundary, 1.0), gap_tol=1e-3)


# ---------------------------------------------------------------------------
# conservation laws
# ---------------------------------------------------------------------------

def test_conserved_quantities_zero_state():
    g = toy_graph().graph
    block = assemble_block(g.component_of((1, 1)), 2)
    diag = diagonalize_block(block, (20.0, 1.0))
    state = np.zeros(2, dtype=complex)
    sig = np.array(block.sigma, dtype=float)
    before = np.sum(sig * np.abs(state) ** 2)
    after = np.sum(sig * np.abs(np.linalg.inv(diag.U) @ state) ** 2)
    assert before == after == 0


def test_conserved_quantities_red_pair():
    g = toy_graph().graph
    block = assemble_block(g.component_of((1, 1)), 2)
    diag = diagonalize_block(block, (20.0, 1.0))
    rng = np.random.default_rng(8)
    for _ in range(10):
        state = rng.normal(size=2) + 1j * rng.normal(size=2)
        sig = np.array(block.sigma, dtype=float)
        before = float(np.sum(sig * np.abs(state) ** 2))
        after = float(np.sum(sig * np.abs(np.linalg.inv(diag.U) @ state) ** 2))
        assert abs(before - after) < 1e-10


def test_conserved_quantities_check_fixture():
    fix = default_graph()
    rep = conserved_quantities_check(fix.graph, (0.23, 0.37, 0.31))
    assert rep["components"] > 0
    assert rep["max_residual"] < 1e-10


# ---------------------------------------------------------------------------
# frequency map
# ---------------------------------------------------------------------------

def test_frequency_map_basics():
    fix = default_graph()
    freq = FrequencyMap(fix.graph, (0.31, 0.47, 0.29))
    om = freq.omega((0.1, 0.2, 0.3))
    sq = [sum(x * x for x in s) for s in fix.sites.sites]
    assert np.allclose(om, np.array(sq) - 2 * np.array([0.1, 0.2, 0.3]))
    m = freq.modes()[0]
    xi = (0.31, 0.47, 0.29)
    comp = fix.graph.component_of(m)
    want = comp.sigma[m] * (sum(x * x for x in comp.root)
                            + 2 * freq.theta(m, xi))
    assert abs(freq.Omega(m, xi) - want) < 1e-12


def test_frequency_homogeneity_of_theta():
    fix = default_graph()
    freq = FrequencyMap(fix.graph, (0.31, 0.47, 0.29))
    m = next(m for m in freq.modes()
             if fix.graph.component_of(m).size >= 2)
    xi = (0.31, 0.47, 0.29)
    xi2 = tuple(2 * v for v in xi)
    assert abs(freq.theta(m, xi2) - 2 * freq.theta(m, xi)) < 1e-10


def test_theta_constant_on_strata():
    # same comb_class and same branch -> same theta (condition A3 shape)
    fix = default_graph()
    freq = FrequencyMap(fix.graph, (0.31, 0.47, 0.29))
    xi = (0.4, 0.33, 0.27)
    by_key = {}
    for m in freq.modes():
        comb, branch = freq._branch_of[m]
        by_key.setdefault((comb, branch), []).append(freq.theta(m, xi))
    for vals in by_key.values():
        assert max(abs(v - vals[0]) for v in vals) < 1e-12
