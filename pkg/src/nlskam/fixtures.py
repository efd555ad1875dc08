"""Bundled d=2 fixtures shared by the test-suite and the CLI selftest.

The default tangential sites pass the operational genericity probe on a
radius-12 box and have small kappa (so boundary cushions stay cheap); the
surrogate exponent sets keep only the ordering relations of the true constants
and are tuned so that both sides of a cut, good points and all decomposition
classes are realizable inside small boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice_geometry import CutParams, LatticeConstants, surrogate_constants
from .resonance_graph import TangentialSites, build_graph


# generic n=3 set with kappa^2 = 2; components of sizes 1..3, one red class
SITES_DEFAULT = ((-1, -1), (1, 0), (1, 1))

# minimal n=2 set used by the toy KAM runs
SITES_TOY = ((1, 0), (0, 1))


def default_sites() -> TangentialSites:
    return TangentialSites(SITES_DEFAULT)


def toy_sites() -> TangentialSites:
    return TangentialSites(SITES_TOY)


def decompose_constants(d: int = 2) -> LatticeConstants:
    """Surrogate constants satisfying the cascade chain
    C N^{4d tau0} <= c N^{tau1/(4d)} at N = 2, with C N^{tau1} small enough
    that good points exist in a radius-40 box."""
    return surrogate_constants(d=d, c=0.5, C=0.7, tau0=0.01, tau1=4.8, N0=1.0)


def decompose_params(N: int = 2, d: int = 2) -> CutParams:
    consts = decompose_constants(d)
    return CutParams(N=N, theta=0.55, mu=0.6, tau=0.6, consts=consts)


def cut_constants(d: int = 2) -> LatticeConstants:
    """Roomier surrogates for cut/neighborhood experiments (tau > 1 would make
    the mah radius nonvacuous only for large N; at N = 2 the radius comes from
    the mu side)."""
    return surrogate_constants(d=d, c=0.25, C=4.0, tau0=0.3, tau1=7.2, N0=1.0)


def cut_params(N: int = 2, theta: float = 0.5, mu: float = 3.5,
               tau: float = 0.8, d: int = 2) -> CutParams:
    return CutParams(N=N, theta=theta, mu=mu, tau=tau, consts=cut_constants(d))


def bilinear_constants(d: int = 2) -> LatticeConstants:
    """Surrogates for the bilinear/Toplitz machinery: mu N^tau must exceed the
    strata constants (up to (2 d kappa)^2) while theta N^{tau1} stays inside
    the box of high roots."""
    return surrogate_constants(d=d, c=0.01, C=40.0, tau0=0.01, tau1=0.4,
                               N0=1.0)


def bilinear_params(N: int = 2, d: int = 2) -> CutParams:
    return CutParams(N=N, theta=12.0, mu=11.0, tau=0.05,
                     consts=bilinear_constants(d))


def melnikov_constants(d: int = 2) -> LatticeConstants:
    """Surrogates for the O_+ machinery at K = 2: thresholds gamma K^{-tau}
    stay in float range and C K^{tau1} ~ 10 leaves plenty of high modes in a
    radius-12 box."""
    return surrogate_constants(d=d, c=0.4, C=1.2, tau0=0.25, tau1=3.0, N0=1.0)


@dataclass
class GraphFixture:
    sites: TangentialSites
    box_radius: float
    graph: object

    @property
    def kappa_sq(self) -> int:
        return self.sites.kappa_sq


_CACHE: dict = {}


def default_graph(box_radius: float = 12.0) -> GraphFixture:
    key = (SITES_DEFAULT, box_radius)
    if key not in _CACHE:
        sites = default_sites()
        _CACHE[key] = GraphFixture(sites=sites, box_radius=box_radius,
                                   graph=build_graph(sites, box_radius))
    return _CACHE[key]


def toy_graph(box_radius: float = 6.0) -> GraphFixture:
    key = (SITES_TOY, box_radius)
    if key not in _CACHE:
        sites = toy_sites()
        _CACHE[key] = GraphFixture(sites=sites, box_radius=box_radius,
                                   graph=build_graph(sites, box_radius))
    return _CACHE[key]


def random_sites(rng: np.random.Generator, d: int = 2, n: int = 3,
                 lo: int = -20, hi: int = 20, max_tries: int = 200
                 ) -> TangentialSites:
    """Random distinct spanning sites with entries in [lo, hi]."""
    for _ in range(max_tries):
        pts = [tuple(int(x) for x in rng.integers(lo, hi + 1, size=d))
               for _ in range(n)]
        if (0,) * d in pts or len(set(pts)) != n:
            continue
        try:
            return TangentialSites(tuple(pts))
        except ValueError:
            continue
    raise RuntimeError("could not draw spanning sites")


# ---------------------------------------------------------------------------
# toy compatible Hamiltonian (n = 2, five normal modes)
# ---------------------------------------------------------------------------

TOY_MODES = ((1, 1), (2, 0), (0, 2), (2, 1), (1, 2))

# distinct degree-1 theta slopes per toy mode (keeps all divisors simple)
_TOY_THETA = {
    (1, 1): (0.31, 0.17),
    (2, 0): (0.23, 0.41),
    (0, 2): (0.43, 0.19),
    (2, 1): (0.29, 0.37),
    (1, 2): (0.13, 0.47),
}


def toy_theta(m, xi) -> float:
    a, b = _TOY_THETA[tuple(m)]
    return a * xi[0] + b * xi[1]


def toy_frequencies(g, xi):
    omega = np.array([1.0 - 2 * xi[0], 1.0 - 2 * xi[1]])
    Omega = {}
    for m in TOY_MODES:
        comp = g.component_of(m)
        s = comp.sigma[m]
        rsq = float(sum(x * x for x in comp.root))
        Omega[m] = s * (rsq + 2 * toy_theta(m, xi))
    return omega, Omega


def toy_term_pool(ctx, degree_max: int = 4, k_max: int = 3):
    """Momentum- and mass-conserving monomial keys on the toy modes."""
    import itertools
    from .ham_algebra import MonomialKey, mass, momentum
    pool = []
    w_choices = [()]
    for m in TOY_MODES:
        w_choices.append(((m, 1),))
    for a in range(len(TOY_MODES)):
        for b in range(a, len(TOY_MODES)):
            if a == b:
                w_choices.append(((TOY_MODES[a], 2),))
            else:
                w_choices.append(((TOY_MODES[a], 1), (TOY_MODES[b], 1)))
    for k in itertools.product(range(-k_max, k_max + 1), repeat=2):
        for i in (((0, 0)), (1, 0), (0, 1)):
            for alpha in w_choices:
                for beta in w_choices:
                    key = MonomialKey.make(k, i, alpha, beta)
                    if key.degree == 0 and key.k_norm == 0:
                        continue
                    if key.degree > degree_max:
                        continue
                    if momentum(key, ctx) != (0, 0):
                        continue
                    if mass(key, ctx) != 0:
                        continue
                    pool.append(key)
    return pool


def toy_kam_state(eps0: float = 1e-4, theta0: float = 1e-3, seed: int = 11,
                  gamma: float = 1e-3, xi=(0.02, 0.03), K0: int = 14,
                  K_max=None, strict: bool = False, n_terms: int = 20):
    """The bundled toy compatible Hamiltonian: NLS-shaped frequencies on five
    normal modes of the n=2 graph, perturbed by a small random real momentum-
    and mass-conserving P with ||X_{P^{<=2}}|| / gamma ~ eps0 and a sizable
    degree >= 3 part (Theta ~ theta0) that feeds the triangular coupling of
    the step inequalities."""
    from .ham_algebra import (Bounds, Context, DegreeAtLeast, DegreeAtMost,
                              ModeData, TruncatedHamiltonian,
                              majorant_vf_norm, project)
    from .kam_engine import KamParams, KamState, NormalForm
    from .lattice_geometry import surrogate_constants

    fix = toy_graph()
    g = fix.graph
    ctx = Context.action_angle(SITES_TOY, modes=ModeData.from_graph(g))
    omega, Omega = toy_frequencies(g, xi)
    normal = NormalForm(omega=omega, Omega=Omega, pairs=[])
    consts = surrogate_constants(d=2, c=0.25, C=2.0, tau0=0.3, tau1=9.6, N0=1.0)
    params = KamParams(s=0.6, r=0.1, K=K0, theta=1.0, mu=1.0, gamma=gamma,
                       M=2.0, L=0.5, a=0.02, S0=8, consts=consts,
                       eps_scale=math.sqrt(sum(xi)), K_max=K_max,
                       strict=strict)
    bounds = Bounds(degree_max=5, k_max=14, mode_radius=3.0)
    rng = np.random.default_rng(seed)
    pool = toy_term_pool(ctx)
    pool_lo = [k for k in pool if k.degree <= 2]
    pool_hi = [k for k in pool if k.degree >= 3]
    w = params.weights()

    def draw(cands, count):
        H = TruncatedHamiltonian(ctx, bounds)
        picks = rng.choice(len(cands), size=min(count, len(cands)),
                           replace=False)
        for idx in picks:
            H.add_term(cands[idx], complex(rng.normal(), rng.normal()))
        for key, c in list(H.terms.items()):
            H.add_term(key.conjugated(), c.conjugate())
        return H

    P_lo = draw(pool_lo, n_terms)
    P_hi = draw(pool_hi, n_terms)
    n_lo = majorant_vf_norm(P_lo, w)
    n_hi = majorant_vf_norm(P_hi, w)
    P = P_lo.scaled(eps0 * gamma / max(n_lo, 1e-300)) \
        + P_hi.scaled(theta0 * gamma / max(n_hi, 1e-300))
    return KamState(ctx=ctx, normal=normal, P=P, params=params,
                    xi=tuple(xi)).measure()
