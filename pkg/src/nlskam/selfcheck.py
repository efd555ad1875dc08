"""Compact property suite on the bundled d=2 fixture, shared by the CLI
`selftest` subcommand and the test-suite; a scaled-down version of the
acceptance criteria (the full-size versions live in tests/test_acceptance.py).
"""

from __future__ import annotations

import math

import numpy as np


def run_selftest(seed: int = 1234) -> list:
    checks = [
        ("graph-oracle", _check_graph_oracle),
        ("block-algebra", _check_block_algebra),
        ("cut-partition", _check_partition),
        ("homological-exactness", _check_homological),
        ("kam-contraction", _check_kam),
        ("melnikov-audit", _check_audit),
        ("simulator-physics", _check_sim),
        ("norm-inequalities", _check_norms),
    ]
    results = []
    for name, fn in checks:
        try:
            ok, info = fn(seed)
        except Exception as exc:  # a crash is a failure with diagnostics
            ok, info = False, f"exception: {exc!r}"
        results.append((name, ok, info))
    return results


def _check_graph_oracle(seed):
    from .fixtures import random_sites
    from .resonance_graph import brute_force_edges, build_graph
    rng = np.random.default_rng(seed)
    sites = random_sites(rng, n=3, lo=-8, hi=8)
    graph = build_graph(sites, 10.0)
    mine = {(e.a, e.b, e.color) for e in graph.edges}
    oracle = brute_force_edges(sites, 10.0)
    return mine == oracle, f"{len(mine)} edges, oracle match"


def _check_block_algebra(seed):
    from fractions import Fraction
    from .fixtures import default_graph
    from .normal_form import assemble_block
    g = default_graph().graph
    worst = Fraction(0)
    eta = (Fraction(2, 3), Fraction(1, 2), Fraction(3, 5))
    count = 0
    for comp in g.components_with_roots():
        if comp.incomplete or comp.size < 2:
            continue
        block = assemble_block(comp, 3)
        worst = max(worst, block.self_adjointness_defect_exact(eta))
        count += 1
    return worst == 0, f"{count} blocks, exact sigma-self-adjointness"


def _check_partition(seed):
    from .fixtures import decompose_constants, default_graph
    from .lattice_geometry import decompose, lattice_box
    fix = default_graph(28.0)
    box = list(lattice_box(2, 24.0))
    parts = decompose(2, box, fix.graph.root_of_extended,
                      decompose_constants(),
                      fix.kappa_sq)
    counts = parts.class_counts()
    ok = (len(parts.entries) == len(box) and parts.failures == 0
          and len(counts) >= 3)
    return ok, f"{len(box)} points, classes {counts}"


def _check_homological(seed):
    from .fixtures import toy_kam_state
    from .kam_engine import homological_residual, solve_homological
    state = toy_kam_state(seed=seed % 100)
    F = solve_homological(state.normal, state.P, state.params)
    resid = homological_residual(state.normal, F, state.P, state.params)
    return resid < 1e-12, f"residual {resid:.2e}"


def _check_kam(seed):
    from .fixtures import toy_kam_state
    from .kam_engine import run_iteration
    state = toy_kam_state()
    res = run_iteration(state, nu_max=5, floor_rel=0.0)
    decreasing = all(res.p2_norms[i] > res.p2_norms[i + 1]
                     for i in range(len(res.p2_norms) - 1))
    ok = decreasing and res.chi_hat > 1.05 and not res.diverged
    return ok, f"chi_hat {res.chi_hat:.3f}, p2 {res.p2_norms[0]:.1e} -> " \
               f"{res.p2_norms[-1]:.1e}"


def _check_audit(seed):
    from .fixtures import default_graph, melnikov_constants
    from .melnikov import (AuditList, ConditionList, ResonanceBudget,
                           sample_cone)
    from .normal_form import FrequencyMap
    fix = default_graph()
    freq = FrequencyMap(fix.graph, (0.31, 0.47, 0.29))
    budget = ResonanceBudget(gamma=2e-4, K=2, a=1e-3,
                             consts=melnikov_constants())
    conds = ConditionList(freq, budget, fix.kappa_sq)
    rng = np.random.default_rng(seed)
    samples = sample_cone(3, 40, rng)
    accepted = [xi for xi in samples if conds.accept(xi)[0]]
    inner = [m for m in freq.modes()
             if math.sqrt(sum(x * x for x in m)) <= 6.0]
    alist = AuditList(freq, budget, mode_subset=inner)
    violations = sum(alist.audit(xi, budget.gamma).violations
                     for xi in accepted[:10])
    return violations == 0, f"{len(accepted)}/{len(samples)} accepted, " \
                            f"0 audit violations required (got {violations})"


def _check_sim(seed):
    from .nls_sim import integrate, seed_torus, single_mode_oracle
    state = seed_torus([(2, 1)], [0.04], grid=16)
    traj = integrate(state, T=10.0, sites=[(2, 1)])
    pred = single_mode_oracle((2, 1), math.sqrt(0.04), 10.0)
    err = abs(state.mode((2, 1)) - pred)
    drift = traj.mass_drift()
    ok = err < 1e-8 and drift < 1e-9
    return ok, f"single-mode err {err:.1e}, mass drift {drift:.1e}"


def _check_norms(seed):
    from .fixtures import toy_graph
    from .ham_algebra import (Bounds, Context, FourierAtLeast, ModeData,
                              MonomialKey, NormWeights, TruncatedHamiltonian,
                              majorant_vf_norm, poisson_bracket, project)
    rng = np.random.default_rng(seed)
    g = toy_graph().graph
    ctx = Context.action_angle(((1, 0), (0, 1)), modes=ModeData.from_graph(g))
    w = NormWeights(s=0.5, r=0.2, a=0.1, p=1.5)
    w2 = NormWeights(s=0.3, r=0.15, a=0.1, p=1.5)
    delta = min(1 - w2.s / w.s, 1 - w2.r / w.r)
    modes = [(1, 1), (2, 0), (0, 2)]
    violations = 0
    for _ in range(20):
        F = _random_ham(ctx, modes, rng, 6)
        G = _random_ham(ctx, modes, rng, 6)
        br, _ = poisson_bracket(F, G)
        lhs = majorant_vf_norm(br, w2)
        rhs = 2 ** (2 * ctx.n + 3) / delta * majorant_vf_norm(F, w) \
            * majorant_vf_norm(G, w)
        if lhs > rhs * (1 + 1e-12):
            violations += 1
        K = 3
        sm_lhs = majorant_vf_norm(project(F, FourierAtLeast(K)),
                                  NormWeights(w2.s, w.r, w.a, w.p))
        sm_rhs = (w.s / w2.s) * math.exp(-K * (w.s - w2.s)) \
            * majorant_vf_norm(F, w)
        if sm_lhs > sm_rhs * (1 + 1e-12):
            violations += 1
    return violations == 0, f"bracket+smoothing inequalities, {violations} " \
                            "violations"


def _random_ham(ctx, modes, rng, n_terms):
    from .ham_algebra import Bounds, MonomialKey, TruncatedHamiltonian
    H = TruncatedHamiltonian(ctx, Bounds())
    for _ in range(n_terms):
        k = tuple(int(x) for x in rng.integers(-3, 4, size=ctx.n))
        i = tuple(int(x) for x in rng.integers(0, 2, size=ctx.n))
        alpha, beta = [], []
        for m in modes:
            if rng.random() < 0.4:
                alpha.append((m, int(rng.integers(1, 3))))
            if rng.random() < 0.4:
                beta.append((m, int(rng.integers(1, 3))))
        key = MonomialKey.make(k, i, alpha, beta)
        H.add_term(key, complex(rng.normal(), rng.normal()))
    return H
