"""Sparse truncated Taylor-Fourier Hamiltonian algebra.

Monomials e^{i(k,x)} y^i z^alpha zbar^beta are indexed by an integer Fourier
vector k in Z^n, exponents i in N^n for the actions, and finitely supported
exponent maps alpha, beta on the normal modes (integer points of Z^d).  The
Poisson bracket follows the conventions fixed by {L, z_m} = i z_m and
{(w,y), e^{i(nu,x)}} = -i (w,nu) e^{i(nu,x)}:

    {F,G} = sum_h (F_x_h G_y_h - F_y_h G_x_h)
            + i sum_m (F_zbar_m G_z_m - F_z_m G_zbar_m).

Coefficients are complex floats by default; exact Gaussian-rational mode uses
`exact.FC` coefficients throughout (brackets, Birkhoff divisors and the text
serialization are then exact).

The majorant vector-field norm is the computable coefficient bound described
in the module functions: exact on single monomials and on diagonal quadratics
(where it returns sup_m |Q_m|), an upper bound in general, monotone under
projections.  All norm inequalities in the tests use this surrogate on both
sides.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Optional

import numpy as np

from .exact import FC, I_FC, as_complex, coeff_conj, coeff_is_zero
from .lattice_geometry import CutParams, find_cut

Vec = tuple


# ---------------------------------------------------------------------------
# mode bookkeeping
# ---------------------------------------------------------------------------

class ModeData:
    """sigma(m) and r(m) for normal modes; trivially sigma=1, r=m before the
    graph reduction, afterwards supplied by a ResonanceGraph."""

    def __init__(self, sigma: Callable[[Vec], int], root: Callable[[Vec], Vec]):
        self._sigma = sigma
        self._root = root

    @staticmethod
    def trivial() -> "ModeData":
        return ModeData(lambda m: 1, lambda m: m)

    @staticmethod
    def from_graph(graph) -> "ModeData":
        return ModeData(graph.sigma_of, graph.root_of)

    @staticmethod
    def from_dicts(sigma: dict, root: dict) -> "ModeData":
        return ModeData(lambda m: sigma[m], lambda m: root[m])

    def sigma(self, m) -> int:
        return self._sigma(tuple(m))

    def root(self, m) -> Vec:
        return tuple(self._root(tuple(m)))

    def root_norm(self, m) -> float:
        return math.sqrt(sum(x * x for x in self.root(m)))


@dataclass(frozen=True)
class Context:
    """Shared index data: n action-angle pairs attached to the sites, plus the
    sigma/root maps on the normal modes.  n = 0 describes the original
    u-variable algebra (no x, y)."""

    sites: tuple                # n tangential sites (possibly designated, n=0 use)
    n: int
    d: int
    modes: ModeData

    @staticmethod
    def action_angle(sites, modes: Optional[ModeData] = None) -> "Context":
        sites = tuple(tuple(int(x) for x in s) for s in sites)
        return Context(sites=sites, n=len(sites), d=len(sites[0]),
                       modes=modes or ModeData.trivial())

    @staticmethod
    def u_variables(d: int, designated_sites=()) -> "Context":
        sites = tuple(tuple(int(x) for x in s) for s in designated_sites)
        return Context(sites=sites, n=0, d=d, modes=ModeData.trivial())

    def pi_k(self, k) -> Vec:
        out = [0] * self.d
        for a, s in zip(k, self.sites[: len(k)]):
            for t in range(self.d):
                out[t] += a * s[t]
        return tuple(out)


@dataclass(frozen=True)
class MonomialKey:
    k: tuple
    i: tuple
    alpha: tuple  # sorted tuple of (mode, exponent)
    beta: tuple

    @staticmethod
    def make(k, i, alpha=(), beta=()) -> "MonomialKey":
        def norm_exp(items):
            acc = {}
            for m, e in items:
                m = tuple(int(x) for x in m)
                if e:
                    acc[m] = acc.get(m, 0) + int(e)
            return tuple(sorted((m, e) for m, e in acc.items() if e))
        return MonomialKey(tuple(int(x) for x in k), tuple(int(x) for x in i),
                           norm_exp(alpha), norm_exp(beta))

    @property
    def degree(self) -> int:
        return (2 * sum(self.i) + sum(e for _, e in self.alpha)
                + sum(e for _, e in self.beta))

    @property
    def w_degree(self) -> int:
        return sum(e for _, e in self.alpha) + sum(e for _, e in self.beta)

    @property
    def k_norm(self) -> int:
        return sum(abs(x) for x in self.k)

    def alpha_of(self, m) -> int:
        return dict(self.alpha).get(tuple(m), 0)

    def beta_of(self, m) -> int:
        return dict(self.beta).get(tuple(m), 0)

    def conjugated(self) -> "MonomialKey":
        return MonomialKey(tuple(-x for x in self.k), self.i, self.beta, self.alpha)


def momentum(key: MonomialKey, ctx: Context) -> Vec:
    """pi_r(k, alpha, beta) = pi(k) + sum_j (alpha_j - beta_j) sigma(j) r(j)."""
    out = list(ctx.pi_k(key.k))
    for m, e in key.alpha:
        s, r = ctx.modes.sigma(m), ctx.modes.root(m)
        for t in range(ctx.d):
            out[t] += e * s * r[t]
    for m, e in key.beta:
        s, r = ctx.modes.sigma(m), ctx.modes.root(m)
        for t in range(ctx.d):
            out[t] -= e * s * r[t]
    return tuple(out)


def mass(key: MonomialKey, ctx: Context) -> int:
    out = sum(key.k)
    for m, e in key.alpha:
        out += e * ctx.modes.sigma(m)
    for m, e in key.beta:
        out -= e * ctx.modes.sigma(m)
    return out


# ---------------------------------------------------------------------------
# bounds and the Hamiltonian container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bounds:
    degree_max: Optional[int] = None
    k_max: Optional[int] = None          # L1 bound on |k|
    mode_radius: Optional[float] = None  # euclidean bound on modes

    def admits(self, key: MonomialKey) -> bool:
        if self.degree_max is not None and key.degree > self.degree_max:
            return False
        if self.k_max is not None and key.k_norm > self.k_max:
            return False
        if self.mode_radius is not None:
            r2 = self.mode_radius ** 2
            for m, _ in key.alpha + key.beta:
                if sum(x * x for x in m) > r2:
                    return False
        return True

    def merge(self, other: "Bounds") -> "Bounds":
        def opt_min(a, b):
            if a is None:
                return b
            if b is None:
                return a
            return min(a, b)
        return Bounds(opt_min(self.degree_max, other.degree_max),
                      opt_min(self.k_max, other.k_max),
                      opt_min(self.mode_radius, other.mode_radius))


class TruncatedHamiltonian:
    """Sparse map MonomialKey -> coefficient with declared truncation bounds."""

    def __init__(self, ctx: Context, bounds: Bounds, terms: Optional[dict] = None):
        self.ctx = ctx
        self.bounds = bounds
        self.terms = {}
        if terms:
            for key, c in terms.items():
                self.set_term(key, c)

    # -- construction --

    @staticmethod
    def zero(ctx, bounds) -> "TruncatedHamiltonian":
        return TruncatedHamiltonian(ctx, bounds)

    def copy(self) -> "TruncatedHamiltonian":
        out = TruncatedHamiltonian(self.ctx, self.bounds)
        out.terms = dict(self.terms)
        return out

    def set_term(self, key: MonomialKey, c):
        if coeff_is_zero(c):
            self.terms.pop(key, None)
        else:
            self.terms[key] = c

    def add_term(self, key: MonomialKey, c):
        cur = self.terms.get(key)
        self.set_term(key, c if cur is None else cur + c)

    # -- algebra --

    def __add__(self, other: "TruncatedHamiltonian") -> "TruncatedHamiltonian":
        out = self.copy()
        out.bounds = self.bounds.merge(other.bounds)
        for key, c in other.terms.items():
            out.add_term(key, c)
        return out

    def __sub__(self, other: "TruncatedHamiltonian") -> "TruncatedHamiltonian":
        return self + other.scaled(-1)

    def scaled(self, factor) -> "TruncatedHamiltonian":
        out = TruncatedHamiltonian(self.ctx, self.bounds)
        for key, c in self.terms.items():
            out.set_term(key, c * factor)
        return out

    def filtered(self, pred) -> "TruncatedHamiltonian":
        out = TruncatedHamiltonian(self.ctx, self.bounds)
        for key, c in self.terms.items():
            if pred(key):
                out.terms[key] = c
        return out

    def __len__(self) -> int:
        return len(self.terms)

    # -- properties --

    def realified(self) -> "TruncatedHamiltonian":
        """Symmetrize to the nearest real Hamiltonian: coefficient of key
        becomes the average of itself and the conjugate of the conjugated
        key's coefficient (removes rounding junk that breaks reality)."""
        out = TruncatedHamiltonian(self.ctx, self.bounds)
        half = 0.5
        for key, c in self.terms.items():
            other = self.terms.get(key.conjugated())
            mirror = coeff_conj(other) if other is not None else None
            if isinstance(c, FC):
                out.set_term(key, (c + mirror) * Fraction(1, 2)
                             if mirror is not None else c)
            else:
                out.set_term(key, (c + mirror) * half
                             if mirror is not None else c)
        return out

    def is_real(self, tol: float = 0.0) -> bool:
        for key, c in self.terms.items():
            other = self.terms.get(key.conjugated())
            want = coeff_conj(c)
            if other is None:
                if abs(as_complex(want)) > tol:
                    return False
            elif abs(as_complex(other) - as_complex(want)) > tol:
                return False
        return True

    def is_momentum_conserving(self) -> bool:
        zero = (0,) * self.ctx.d
        return all(momentum(k, self.ctx) == zero for k in self.terms)

    def max_degree(self) -> int:
        return max((k.degree for k in self.terms), default=0)


# ---------------------------------------------------------------------------
# Poisson bracket and Lie transforms
# ---------------------------------------------------------------------------

def _imul(c):
    return c * I_FC if isinstance(c, FC) else 1j * c


def _exp_dec(items, m):
    """items with the exponent of mode m lowered by one."""
    out = []
    for mm, e in items:
        if mm == m:
            if e > 1:
                out.append((mm, e - 1))
        else:
            out.append((mm, e))
    return tuple(out)


def _tuple_dec(t, h):
    return t[:h] + (t[h] - 1,) + t[h + 1:]


def _tuple_add(a, b):
    return tuple(x + y for x, y in zip(a, b))


def _exp_merge(a, b):
    acc = dict(a)
    for m, e in b:
        acc[m] = acc.get(m, 0) + e
    return tuple(sorted(acc.items()))


@dataclass
class BracketReport:
    discarded: "TruncatedHamiltonian"

    def discarded_norm(self, weights: "NormWeights") -> float:
        return majorant_vf_norm(self.discarded, weights)


def poisson_bracket(F: TruncatedHamiltonian, G: TruncatedHamiltonian):
    """Exact bracket on the truncation; out-of-bound terms are split off into
    the report instead of silently vanishing.  Returns (H, report)."""
    ctx = F.ctx
    bounds = F.bounds.merge(G.bounds)
    kept = TruncatedHamiltonian(ctx, bounds)
    dropped = TruncatedHamiltonian(ctx, Bounds())

    def emit(key, c):
        if coeff_is_zero(c):
            return
        (kept if bounds.admits(key) else dropped).add_term(key, c)

    for kf, cf in F.terms.items():
        for kg, cg in G.terms.items():
            c0 = cf * cg
            # (x,y) part: sum_h F_y G_x - F_x G_y
            for h in range(ctx.n):
                if kf.k[h] != 0 and kg.i[h] > 0:
                    key = MonomialKey(_tuple_add(kf.k, kg.k),
                                      _tuple_dec(_tuple_add(kf.i, kg.i), h),
                                      _exp_merge(kf.alpha, kg.alpha),
                                      _exp_merge(kf.beta, kg.beta))
                    emit(key, _imul(c0) * (-kf.k[h] * kg.i[h]))
                if kf.i[h] > 0 and kg.k[h] != 0:
                    key = MonomialKey(_tuple_add(kf.k, kg.k),
                                      _tuple_dec(_tuple_add(kf.i, kg.i), h),
                                      _exp_merge(kf.alpha, kg.alpha),
                                      _exp_merge(kf.beta, kg.beta))
                    emit(key, _imul(c0) * (kf.i[h] * kg.k[h]))
            # complex part: i sum_m (F_zbar G_z - F_z G_zbar)
            for m, ef in kf.beta:
                eg = kg.alpha_of(m)
                if eg:
                    key = MonomialKey(_tuple_add(kf.k, kg.k),
                                      _tuple_add(kf.i, kg.i),
                                      _exp_merge(_exp_dec(kg.alpha, m), kf.alpha),
                                      _exp_merge(_exp_dec(kf.beta, m), kg.beta))
                    emit(key, _imul(c0) * (ef * eg))
            for m, ef in kf.alpha:
                eg = kg.beta_of(m)
                if eg:
                    key = MonomialKey(_tuple_add(kf.k, kg.k),
                                      _tuple_add(kf.i, kg.i),
                                      _exp_merge(_exp_dec(kf.alpha, m), kg.alpha),
                                      _exp_merge(_exp_dec(kg.beta, m), kf.beta))
                    emit(key, _imul(c0) * (-ef * eg))
    return kept, BracketReport(discarded=dropped)


@dataclass
class LieResult:
    hamiltonian: TruncatedHamiltonian
    orders: int
    tail_ratio: float
    tail_bound: float
    discarded: TruncatedHamiltonian


def lie_transform(H: TruncatedHamiltonian, F: TruncatedHamiltonian,
                  order_cap: int, weights: Optional["NormWeights"] = None,
                  tail_tol: Optional[float] = None) -> LieResult:
    """e^{ad F} H truncated at ad-order `order_cap`, with a geometric tail
    estimate from the measured norms of the last computed orders."""
    if order_cap < 2 and len(F.terms):
        raise ValueError("order_cap must be at least 2")
    ctx = H.ctx
    total = H.copy()
    term = H
    dropped = TruncatedHamiltonian(ctx, Bounds())
    norms = []
    for j in range(1, order_cap + 1):
        term, rep = poisson_bracket(F, term)
        term = term.scaled(Fraction(1, j) if _is_exact(term) else 1.0 / j)
        for key, c in rep.discarded.terms.items():
            dropped.add_term(key, c * (1.0 / j))
        if not term.terms:
            break
        total = total + term
        if weights is not None:
            norms.append(majorant_vf_norm(term, weights))
    ratio = 0.0
    tail = 0.0
    if weights is not None and len(norms) >= 2 and norms[-2] > 0:
        ratio = norms[-1] / norms[-2]
        tail = norms[-1] * ratio / (1 - ratio) if ratio < 1 else math.inf
    if tail_tol is not None and tail > tail_tol:
        raise ArithmeticError(f"Lie-series tail bound {tail:.3e} exceeds {tail_tol:.3e}")
    return LieResult(hamiltonian=total, orders=len(norms), tail_ratio=ratio,
                     tail_bound=tail, discarded=dropped)


def _is_exact(H: TruncatedHamiltonian) -> bool:
    return any(isinstance(c, FC) for c in H.terms.values())


# ---------------------------------------------------------------------------
# majorant norm
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormWeights:
    s: float
    r: float
    a: float
    p: float

    def __post_init__(self):
        if not (0 < self.s < 1):
            raise ValueError("need 0 < s < 1")
        if self.r <= 0 or self.a < 0:
            raise ValueError("need r > 0 and a >= 0")

    def shrunk(self, s=None, r=None) -> "NormWeights":
        return NormWeights(s if s is not None else self.s,
                           r if r is not None else self.r, self.a, self.p)

    def mode_weight(self, m) -> float:
        """w_hat(m) = e^{a|m|} <m>^p; the sup of |z_m| on the ball is
        r / w_hat(m)."""
        nm = math.sqrt(sum(x * x for x in m))
        return math.exp(self.a * nm) * max(1.0, nm) ** self.p


def majorant_vf_norm(H: TruncatedHamiltonian, w: NormWeights,
                     breakdown: bool = False):
    """Computable majorant bound on the (s,r)-weighted vector-field norm.

    Per monomial and vector-field direction the exact component sup over
    D(s,r) is used; components combine as: max over angle directions
    (weight 1/s), l1 over action directions (weight 1/r^2), and for the
    (z, zbar) block a Schur bound sqrt(max row sum * max col sum) on the
    weighted coefficient matrix of the w-quadratic part (exact for diagonal
    quadratics) plus an l1 term for the rest.
    """
    ctx = H.ctx
    x_comp = [0.0] * ctx.n
    y_total = 0.0
    quad_rows: dict = {}
    quad_cols: dict = {}
    rest = 0.0
    r2 = w.r * w.r
    for key, c in H.terms.items():
        if key.degree == 0 and key.k_norm == 0:
            continue  # scalar summand: excluded from norms
        ac = abs(as_complex(c))
        base = ac * math.exp(w.s * key.k_norm) * r2 ** sum(key.i)
        for m, e in key.alpha + key.beta:
            base *= (w.r / w.mode_weight(m)) ** e
        for h in range(ctx.n):
            if key.i[h] > 0:
                x_comp[h] += base * key.i[h] / r2
            if key.k[h] != 0:
                y_total += base * abs(key.k[h])
        quad = key.w_degree == 2
        # weighted component sup: (base / wtilde_m) * what_m / r with
        # wtilde_m = r / what_m, i.e. base * (what_m / r)^2
        for m, e in key.beta:   # z_m-direction via d/dzbar_m
            b = base * e * (w.mode_weight(m) / w.r) ** 2
            if quad:
                _quad_add(quad_rows, quad_cols, (m, 1),
                          _quad_source(key, m, bar=True), b)
            else:
                rest += b
        for m, e in key.alpha:  # zbar_m-direction via d/dz_m
            b = base * e * (w.mode_weight(m) / w.r) ** 2
            if quad:
                _quad_add(quad_rows, quad_cols, (m, -1),
                          _quad_source(key, m, bar=False), b)
            else:
                rest += b
    schur = 0.0
    if quad_rows:
        schur = math.sqrt(max(quad_rows.values()) * max(quad_cols.values()))
    x_part = max(x_comp) / w.s if ctx.n and any(x_comp) else 0.0
    y_part = y_total / r2
    w_part = schur + rest
    total = x_part + y_part + w_part
    if breakdown:
        return total, {"x": x_part, "y": y_part, "w_schur": schur, "w_rest": rest}
    return total


def _quad_source(key: MonomialKey, m, bar: bool):
    """The remaining w-factor of a w-quadratic monomial after removing one
    z^sigma_m factor; returns (mode, bar_flag)."""
    items = []
    for mm, e in key.alpha:
        items.extend([(mm, -1)] * e)
    for mm, e in key.beta:
        items.extend([(mm, 1)] * e)
    items.remove((tuple(m), 1 if bar else -1))
    return items[0]


def _quad_add(rows, cols, target, source, b):
    rows[target] = rows.get(target, 0.0) + b
    cols[source] = cols.get(source, 0.0) + b


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

class Selector:
    def admits(self, key: MonomialKey, ctx: Context) -> bool:  # pragma: no cover
        raise NotImplementedError


@dataclass(frozen=True)
class DegreeIs(Selector):
    value: int

    def admits(self, key, ctx):
        return key.degree == self.value


@dataclass(frozen=True)
class DegreeAtMost(Selector):
    value: int

    def admits(self, key, ctx):
        return key.degree <= self.value


@dataclass(frozen=True)
class DegreeAtLeast(Selector):
    value: int

    def admits(self, key, ctx):
        return key.degree >= self.value


@dataclass(frozen=True)
class FourierBelow(Selector):
    K: float

    def admits(self, key, ctx):
        return key.k_norm < self.K


@dataclass(frozen=True)
class FourierAtLeast(Selector):
    K: float

    def admits(self, key, ctx):
        return key.k_norm >= self.K


@dataclass(frozen=True)
class Diag(Selector):
    def admits(self, key, ctx):
        return (key.k_norm == 0 and sum(key.i) == 0 and len(key.alpha) == 1
                and key.alpha == key.beta and key.alpha[0][1] == 1)


@dataclass(frozen=True)
class LowMomentum(Selector):
    """(N,mu)-low monomials: sum_j |r(j)|(alpha_j+beta_j) < mu N^3, |k| < N."""

    N: int
    mu: float

    def admits(self, key, ctx):
        if key.k_norm >= self.N:
            return False
        tot = sum(ctx.modes.root_norm(m) * e for m, e in key.alpha)
        tot += sum(ctx.modes.root_norm(m) * e for m, e in key.beta)
        return tot < self.mu * self.N ** 3


@dataclass(frozen=True)
class SiteWeightAtLeast(Selector):
    """Site-weighted degree cutoff sum_l <j_l>(alpha_{j_l}+beta_{j_l}) >= K."""

    K: float

    def admits(self, key, ctx):
        sites = set(ctx.sites)
        tot = 0.0
        for m, e in key.alpha + key.beta:
            if m in sites:
                tot += max(1.0, math.sqrt(sum(x * x for x in m))) * e
        return tot >= self.K


class Bilinear(Selector):
    """(N,theta,mu,tau)-bilinear monomials g * z_m^s z_n^s' with both high
    modes carrying cuts at a common l (0 < l < d)."""

    def __init__(self, params: CutParams, kappa_sq: int):
        self.params = params
        self.kappa_sq = kappa_sq
        self._cut_cache: dict = {}

    def _cut(self, m):
        if m not in self._cut_cache:
            self._cut_cache[m] = find_cut(m, self.params, self.kappa_sq)
        return self._cut_cache[m]

    def high_log(self) -> float:
        p = self.params
        return math.log(p.theta) + p.consts.tau1 * math.log(p.N)

    def split_high(self, key: MonomialKey, ctx: Context):
        """Partition the w-factors into (high list, low weight sum)."""
        hl = self.high_log()
        high = []
        low_weight = 0.0
        for m, e in key.alpha:
            rn = ctx.modes.root_norm(m)
            if rn > 0 and math.log(rn) > hl:
                high.extend([(m, +1)] * e)
            else:
                low_weight += rn * e
        for m, e in key.beta:
            rn = ctx.modes.root_norm(m)
            if rn > 0 and math.log(rn) > hl:
                high.extend([(m, -1)] * e)
            else:
                low_weight += rn * e
        return high, low_weight

    def admits(self, key, ctx):
        p = self.params
        if key.k_norm >= p.N:
            return False
        if momentum(key, ctx) != (0,) * ctx.d:
            return False
        high, low_weight = self.split_high(key, ctx)
        if len(high) != 2:
            return False
        if low_weight >= p.mu * p.N ** 3:
            return False
        cuts = [self._cut(m) for m, _ in high]
        if any(c is None for c in cuts):
            return False
        ells = {c.ell for c in cuts}
        d = p.consts.d
        return len(ells) == 1 and 0 < cuts[0].ell < d


@dataclass(frozen=True)
class AdKernel(Selector):
    """Kernel of ad(N) for a nondegenerate diagonal N = (omega,y)+sum Om|z|^2:
    monomials with (omega,k) + sum_j (alpha_j - beta_j) Omega_j = 0."""

    omega: tuple
    Omega: tuple  # ((mode, value), ...) for hashability
    tol: float = 1e-9

    def admits(self, key, ctx):
        om = dict(self.Omega)
        val = sum(w * kk for w, kk in zip(self.omega, key.k))
        val += sum(om[m] * e for m, e in key.alpha)
        val -= sum(om[m] * e for m, e in key.beta)
        return abs(val) <= self.tol


def project(H: TruncatedHamiltonian, selector: Selector) -> TruncatedHamiltonian:
    return H.filtered(lambda key: selector.admits(key, H.ctx))


# ---------------------------------------------------------------------------
# the NLS quartic and the Birkhoff generator
# ---------------------------------------------------------------------------

def nls_quartic(ctx: Context, modes: Iterable[Vec], bounds: Optional[Bounds] = None,
                normal_degree_max: Optional[int] = None,
                exact: bool = True) -> TruncatedHamiltonian:
    """The momentum-conserving quartic sum over |alpha|=|beta|=2 with
    multinomial weights binom(2,alpha) binom(2,beta); u-variable algebra.

    normal_degree_max restricts |alpha_2|+|beta_2| (exponents off the
    designated sites)."""
    modes = [tuple(int(x) for x in m) for m in modes]
    site_set = set(ctx.sites)
    bounds = bounds or Bounds()
    H = TruncatedHamiltonian(ctx, bounds)
    by_sum: dict = {}
    for a in range(len(modes)):
        for b in range(a, len(modes)):
            s = tuple(x + y for x, y in zip(modes[a], modes[b]))
            by_sum.setdefault(s, []).append((modes[a], modes[b]))
    zero_k = ()
    zero_i = ()
    for s, pairs in by_sum.items():
        for (a, b) in pairs:
            ca = 2 if a != b else 1
            for (c, e) in pairs:
                cb = 2 if c != e else 1
                alpha = ((a, 1), (b, 1)) if a != b else ((a, 2),)
                beta = ((c, 1), (e, 1)) if c != e else ((c, 2),)
                if normal_degree_max is not None:
                    nd = sum(x[1] for x in alpha if x[0] not in site_set)
                    nd += sum(x[1] for x in beta if x[0] not in site_set)
                    if nd > normal_degree_max:
                        continue
                key = MonomialKey.make(zero_k, zero_i, alpha, beta)
                H.add_term(key, FC(ca * cb) if exact else complex(ca * cb))
    return H


def quadratic_energy(ctx: Context, modes: Iterable[Vec], exact: bool = True
                     ) -> TruncatedHamiltonian:
    """K = sum |k|^2 |u_k|^2 on the given modes."""
    H = TruncatedHamiltonian(ctx, Bounds())
    for m in modes:
        m = tuple(int(x) for x in m)
        sq = sum(x * x for x in m)
        key = MonomialKey.make((), (), ((m, 1),), ((m, 1),))
        H.add_term(key, FC(sq) if exact else complex(sq))
    return H


def birkhoff_generator(H_quartic: TruncatedHamiltonian) -> TruncatedHamiltonian:
    """F with coefficient -i c_{alpha,beta} / sum_k (alpha_k - beta_k)|k|^2 on
    every non-resonant monomial of the quartic; divisors are nonzero integers,
    so the result is exact whenever the input is."""
    ctx = H_quartic.ctx
    F = TruncatedHamiltonian(ctx, H_quartic.bounds)
    for key, c in H_quartic.terms.items():
        div = sum(e * sum(x * x for x in m) for m, e in key.alpha)
        div -= sum(e * sum(x * x for x in m) for m, e in key.beta)
        if div == 0:
            continue
        if isinstance(c, FC):
            F.set_term(key, c * FC(0, -1) / FC(div))
        else:
            F.set_term(key, -1j * c / div)
    return F


# ---------------------------------------------------------------------------
# action-angle substitution
# ---------------------------------------------------------------------------

def action_angle_compose(F: TruncatedHamiltonian, sites, xi,
                         y_order: int = 1, modes: Optional[ModeData] = None,
                         bounds: Optional[Bounds] = None) -> TruncatedHamiltonian:
    """Substitute u_{j_l} = sqrt(xi_l + y_l) e^{i x_l} on the designated sites
    and rename the remaining u's to z;  the fractional binomial series in
    y_l / xi_l is truncated at total y-degree <= y_order."""
    sites = [tuple(int(x) for x in s) for s in sites]
    site_index = {s: l for l, s in enumerate(sites)}
    n = len(sites)
    ctx2 = Context.action_angle(sites, modes=modes)
    out = TruncatedHamiltonian(ctx2, bounds or Bounds())
    xi = [float(v) for v in xi]
    for key, c in F.terms.items():
        a1 = [0] * n
        b1 = [0] * n
        alpha2, beta2 = [], []
        for m, e in key.alpha:
            if m in site_index:
                a1[site_index[m]] += e
            else:
                alpha2.append((m, e))
        for m, e in key.beta:
            if m in site_index:
                b1[site_index[m]] += e
            else:
                beta2.append((m, e))
        k_new = tuple(a1[l] - b1[l] for l in range(n))
        g = [(a1[l] + b1[l]) / 2.0 for l in range(n)]
        # distribute y-exponents with total <= y_order
        for i_vec in _exponent_vectors(n, y_order):
            coef = as_complex(c)
            ok = True
            for l in range(n):
                coef *= xi[l] ** (g[l] - i_vec[l]) * _frac_binom(g[l], i_vec[l])
                if coef == 0:
                    ok = False
                    break
            if not ok:
                continue
            key2 = MonomialKey.make(k_new, i_vec, alpha2, beta2)
            out.add_term(key2, coef)
    return out


def _exponent_vectors(n, total_max):
    if n == 0:
        yield ()
        return
    for head in range(total_max + 1):
        for tail in _exponent_vectors(n - 1, total_max - head):
            yield (head,) + tail


def _frac_binom(g: float, h: int) -> float:
    out = 1.0
    for t in range(h):
        out *= (g - t) / (t + 1)
    return out


# ---------------------------------------------------------------------------
# piecewise-Toplitz defect of diagonal quadratics
# ---------------------------------------------------------------------------

@dataclass
class ToeplitzDefect:
    groups: dict              # subspace key -> list of (mode, value)
    spreads: dict             # subspace key -> max |Q_m - Q_m'|
    max_spread: float
    bound: Optional[float]    # 2 ||X_Q|| N^{-4 d tau} when computable

    @property
    def within_bound(self) -> Optional[bool]:
        if self.bound is None:
            return None
        return self.max_spread <= self.bound + 1e-15


def toeplitz_defect(Q: dict, params: CutParams, kappa_sq: int,
                    weights: Optional[NormWeights] = None,
                    ctx: Optional[Context] = None) -> ToeplitzDefect:
    """Group the diagonal coefficients Q[m] by the subspace associated to the
    cut of m (0 < l < d) and measure the within-group spread; the quasi-
    Toplitz structure predicts spread <= 2 ||X_Q|| N^{-4 d tau}."""
    d = params.consts.d
    groups: dict = {}
    for m, val in Q.items():
        cut = find_cut(m, params, kappa_sq)
        if cut is None or not (0 < cut.ell < d):
            continue
        groups.setdefault(cut.subspace_key(), []).append((m, val))
    spreads = {}
    for key, entries in groups.items():
        vals = [abs(as_complex(v)) if not isinstance(v, (int, float)) else float(v)
                for _, v in entries]
        vals = [float(np.real(as_complex(v))) if not isinstance(v, (int, float))
                else float(v) for _, v in entries]
        spreads[key] = max(vals) - min(vals) if len(vals) > 1 else 0.0
    max_spread = max(spreads.values(), default=0.0)
    bound = None
    if weights is not None and ctx is not None:
        H = TruncatedHamiltonian(ctx, Bounds())
        for m, val in Q.items():
            H.add_term(MonomialKey.make((0,) * ctx.n, (0,) * ctx.n,
                                        ((m, 1),), ((m, 1),)), complex(val))
        norm = majorant_vf_norm(H, weights)
        log_bound = math.log(2 * norm) if norm > 0 else -math.inf
        log_bound -= 4 * d * params.tau * math.log(params.N)
        bound = math.exp(log_bound) if log_bound > -700 else 0.0
    return ToeplitzDefect(groups=groups, spreads=spreads, max_spread=max_spread,
                          bound=bound)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _coef_to_text(c) -> str:
    if isinstance(c, FC):
        return f"{c.re} {c.im}"
    z = complex(c)
    return f"{z.real!r} {z.imag!r}"


def _coef_from_text(re_s: str, im_s: str, rational: bool):
    if rational:
        return FC(Fraction(re_s), Fraction(im_s))
    return complex(float(re_s), float(im_s))


def _exps_to_text(items) -> str:
    if not items:
        return "."
    return ";".join(",".join(str(x) for x in m) + "^" + str(e) for m, e in items)


def _exps_from_text(s: str):
    if s == ".":
        return ()
    out = []
    for part in s.split(";"):
        mode, e = part.split("^")
        out.append((tuple(int(x) for x in mode.split(",")), int(e)))
    return tuple(out)


def to_text(H: TruncatedHamiltonian) -> str:
    rational = _is_exact(H) or not H.terms
    header = {
        "schema": "nlskam/ham/1",
        "n": H.ctx.n,
        "d": H.ctx.d,
        "sites": [list(s) for s in H.ctx.sites],
        "rational": rational,
        "bounds": {"degree_max": H.bounds.degree_max, "k_max": H.bounds.k_max,
                   "mode_radius": H.bounds.mode_radius},
    }
    lines = ["#! " + json.dumps(header, sort_keys=True)]
    for key in sorted(H.terms, key=lambda t: (t.k, t.i, t.alpha, t.beta)):
        c = H.terms[key]
        lines.append(" | ".join([
            " ".join(str(x) for x in key.k) if key.k else ".",
            " ".join(str(x) for x in key.i) if key.i else ".",
            _exps_to_text(key.alpha),
            _exps_to_text(key.beta),
            _coef_to_text(c),
        ]))
    return "\n".join(lines) + "\n"


def from_text(text: str, modes: Optional[ModeData] = None) -> TruncatedHamiltonian:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#! "):
        raise ValueError("missing header line")
    header = json.loads(lines[0][3:])
    if header.get("schema") != "nlskam/ham/1":
        raise ValueError(f"unsupported schema {header.get('schema')}")
    sites = tuple(tuple(s) for s in header["sites"])
    if header["n"]:
        ctx = Context.action_angle(sites, modes=modes)
    else:
        ctx = Context.u_variables(header["d"], designated_sites=sites)
    b = header["bounds"]
    H = TruncatedHamiltonian(ctx, Bounds(b["degree_max"], b["k_max"],
                                         b["mode_radius"]))
    for ln in lines[1:]:
        k_s, i_s, a_s, b_s, c_s = [part.strip() for part in ln.split("|")]
        k = tuple(int(x) for x in k_s.split()) if k_s != "." else ()
        i = tuple(int(x) for x in i_s.split()) if i_s != "." else ()
        re_s, im_s = c_s.split()
        key = MonomialKey.make(k, i, _exps_from_text(a_s), _exps_from_text(b_s))
        H.add_term(key, _coef_from_text(re_s, im_s, header["rational"]))
    return H
