"""The KAM step and iteration on truncated Hamiltonians at a fixed parameter
point: kernel extraction, homological solve, Lie transform, frequency and
constant updates, acceptance re-filtering, and decay diagnostics.

H = N + P with N = (omega, y) + sum_m Omega_m |z_m|^2 + C, C supported on the
finitely many hyperbolic 2x2 blocks a(|z_h|^2-|z_k|^2) + b(z_h z_k + conj).
One step solves ad(F) N = [P<=2] - P^{<=2}_{<=K} exactly on the truncation
(blockwise linear solve built from the Poisson bracket itself, so the residual
vanishes to machine precision), transforms H by e^{ad F}, absorbs [P<=2] into
N, and updates (M, L, a) by the standard step rules.

The smallness constants of the convergence proof are unachievable numerically;
`strict` mode enforces them, the default desk mode evaluates and logs them
while relying on the exact homological residual plus the measured contraction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .ham_algebra import (Bounds, Context, DegreeAtMost, DegreeIs, Diag,
                          FourierBelow, MonomialKey, NormWeights, Selector,
                          TruncatedHamiltonian, lie_transform, majorant_vf_norm,
                          poisson_bracket, project)
from .lattice_geometry import LatticeConstants

Vec = tuple


class SmallDivisorError(ArithmeticError):
    def __init__(self, key, divisor, threshold):
        self.key = key
        self.divisor = divisor
        self.threshold = threshold
        super().__init__(f"divisor {divisor:.3e} below {threshold:.3e} "
                         f"at k={key.k}, alpha={key.alpha}, beta={key.beta}")


# ---------------------------------------------------------------------------
# parameters and state
# ---------------------------------------------------------------------------

@dataclass
class KamParams:
    s: float
    r: float
    K: int
    theta: float
    mu: float
    gamma: float
    M: float
    L: float
    a: float
    S0: float
    consts: LatticeConstants
    eps_scale: float = 1.0        # epsilon of the underlying scaling
    K_max: Optional[int] = None
    strict: bool = False

    @property
    def lam(self) -> float:
        return self.gamma / self.M

    def weights(self, a_mode: float = 0.0, p_mode: float = 1.5) -> NormWeights:
        return NormWeights(s=self.s, r=self.r, a=a_mode, p=p_mode)

    def check_invariants(self) -> list:
        """eq-(palleK)-style relations; returns the violated ones."""
        bad = []
        if not self.gamma <= 2 * self.eps_scale ** 2 * self.M:
            bad.append("gamma <= 2 eps^2 M")
        if not self.S0 > 4 * math.sqrt(max(1, 1)) * self.M * self.L:
            bad.append("S0 > 4 sqrt(n) M L")
        if not self.a <= self.M:
            bad.append("a <= M")
        if not self.L * self.M < 4:
            bad.append("L M < 4")
        return bad


@dataclass
class NormalForm:
    """N at a fixed xi: frequency vector, diagonal coefficients, 2x2 blocks."""

    omega: np.ndarray
    Omega: dict                   # mode -> float (real modes)
    pairs: list = field(default_factory=list)   # (h, k, a, b)

    def copy(self) -> "NormalForm":
        return NormalForm(self.omega.copy(), dict(self.Omega),
                          [tuple(p) for p in self.pairs])

    def pair_modes(self):
        out = set()
        for h, k, _, _ in self.pairs:
            out.update((tuple(h), tuple(k)))
        return out

    def to_hamiltonian(self, ctx: Context, bounds: Bounds) -> TruncatedHamiltonian:
        n = len(self.omega)
        H = TruncatedHamiltonian(ctx, bounds)
        for hidx in range(n):
            i = tuple(1 if t == hidx else 0 for t in range(n))
            H.add_term(MonomialKey.make((0,) * n, i), complex(self.omega[hidx]))
        for m, om in self.Omega.items():
            H.add_term(MonomialKey.make((0,) * n, (0,) * n, ((m, 1),), ((m, 1),)),
                       complex(om))
        for h, k, a, b in self.pairs:
            zk = (0,) * n
            H.add_term(MonomialKey.make(zk, zk, ((h, 1),), ((h, 1),)), complex(a))
            H.add_term(MonomialKey.make(zk, zk, ((k, 1),), ((k, 1),)), complex(-a))
            H.add_term(MonomialKey.make(zk, zk, ((h, 1), (k, 1)), ()), complex(b))
            H.add_term(MonomialKey.make(zk, zk, (), ((h, 1), (k, 1))), complex(b))
        return H


@dataclass
class KamState:
    ctx: Context
    normal: NormalForm
    P: TruncatedHamiltonian
    params: KamParams
    xi: tuple
    step: int = 0
    eps: tuple = (0.0, 0.0, 0.0)
    Theta: float = 0.0
    accepted_xi: Optional[list] = None
    filter_hook: Optional[object] = None     # callable(state) -> accepted list
    log: list = field(default_factory=list)

    def hamiltonian(self) -> TruncatedHamiltonian:
        return self.normal.to_hamiltonian(self.ctx, self.P.bounds) + self.P

    def measure(self) -> "KamState":
        w = self.params.weights()
        g = self.params.gamma
        p2 = project(self.P, DegreeAtMost(2))
        eps = tuple(majorant_vf_norm(project(p2, DegreeIs(h)), w) / g
                    for h in (0, 1, 2))
        theta = majorant_vf_norm(self.P, w) / g
        return replace(self, eps=eps, Theta=theta)

    def p2_norm(self) -> float:
        return majorant_vf_norm(project(self.P, DegreeAtMost(2)),
                                self.params.weights())


# ---------------------------------------------------------------------------
# kernel extraction
# ---------------------------------------------------------------------------

def extract_kernel(P: TruncatedHamiltonian, K: int, normal: NormalForm
                   ) -> TruncatedHamiltonian:
    """[P<=2]: the k = 0 part of P^{<=2}_{<=K} lying in ker ad(N): linear in y,
    diagonal |z_m|^2, and on hyperbolic pairs the antisymmetric diagonal
    combination plus the z_h z_k / conj terms."""
    ctx = P.ctx
    n = ctx.n
    pair_of = {}
    for h, k, _, _ in normal.pairs:
        pair_of[tuple(h)] = tuple(k)
        pair_of[tuple(k)] = tuple(h)
    out = TruncatedHamiltonian(ctx, P.bounds)
    diag_pair: dict = {}
    for key, c in P.terms.items():
        if key.k_norm != 0 or key.degree > 2 or key.k_norm > K:
            continue
        if key.degree == 0:
            continue  # scalar summand
        if key.w_degree == 0 and sum(key.i) == 1:
            out.add_term(key, c)
            continue
        if key.w_degree == 2 and sum(key.i) == 0:
            if key.alpha == key.beta and len(key.alpha) == 1:
                m = key.alpha[0][0]
                if m in pair_of:
                    diag_pair[m] = diag_pair.get(m, 0) + c
                else:
                    out.add_term(key, c)
            elif not key.beta and len(key.alpha) == 2:
                (m1, _), (m2, _) = key.alpha
                if pair_of.get(m1) == m2:
                    out.add_term(key, c)
            elif not key.alpha and len(key.beta) == 2:
                (m1, _), (m2, _) = key.beta
                if pair_of.get(m1) == m2:
                    out.add_term(key, c)
    for h, k, _, _ in normal.pairs:
        h, k = tuple(h), tuple(k)
        ch = diag_pair.get(h, 0)
        ck = diag_pair.get(k, 0)
        anti = (ch - ck) / 2.0
        if anti:
            zk = (0,) * n
            out.add_term(MonomialKey.make(zk, zk, ((h, 1),), ((h, 1),)), anti)
            out.add_term(MonomialKey.make(zk, zk, ((k, 1),), ((k, 1),)), -anti)
    return out


# ---------------------------------------------------------------------------
# homological equation
# ---------------------------------------------------------------------------

def solve_homological(normal: NormalForm, P: TruncatedHamiltonian,
                      params: KamParams, kernel: Optional[TruncatedHamiltonian]
                      = None) -> TruncatedHamiltonian:
    """F = ad(N)^{-1}(P^{<=2}_{<=K} - [P<=2]), solved orbit-by-orbit with the
    ad(N)-matrix built from the Poisson bracket itself; raises
    SmallDivisorError when an orbit eigenvalue falls below gamma K^{-2d tau1}.
    """
    ctx = P.ctx
    K = params.K
    kernel = kernel if kernel is not None else extract_kernel(P, K, normal)
    rhs = project(project(P, DegreeAtMost(2)),
                  FourierBelow(K + 1)) - kernel
    rhs = rhs.filtered(lambda key: key.degree > 0 or key.k_norm > 0)
    N_ham = normal.to_hamiltonian(ctx, Bounds())
    log_thr = -2 * params.consts.d * params.consts.tau1 * math.log(params.K)
    threshold = params.gamma * (math.exp(log_thr) if log_thr > -700 else 0.0)
    F = TruncatedHamiltonian(ctx, P.bounds)
    remaining = dict(rhs.terms)
    while remaining:
        seed = next(iter(remaining))
        orbit = _ad_orbit(N_ham, seed)
        idx = {key: t for t, key in enumerate(orbit)}
        dim = len(orbit)
        A = np.zeros((dim, dim), dtype=complex)
        for b, key in enumerate(orbit):
            single = TruncatedHamiltonian(ctx, Bounds())
            single.add_term(key, 1.0 + 0j)
            br, _ = poisson_bracket(N_ham, single)
            for key2, c in br.terms.items():
                if key2 in idx:
                    A[idx[key2], b] = complex(c)
                elif abs(complex(c)) > 1e-12:
                    raise AssertionError("ad-orbit not closed")
        eigs = np.linalg.eigvals(A)
        small = np.min(np.abs(eigs)) if dim else math.inf
        if small < threshold:
            raise SmallDivisorError(seed, float(small), threshold)
        # {F, N} = [P<=2] - P^{<=2}_{<=K} = -R  <=>  {N, F} = R  <=>  A f = r
        b_vec = np.array([complex(remaining.pop(key, 0.0)) for key in orbit])
        f_vec = np.linalg.solve(A, b_vec)
        for key, val in zip(orbit, f_vec):
            if abs(val) > 0:
                F.add_term(key, complex(val))
    return F


def _ad_orbit(N_ham: TruncatedHamiltonian, seed: MonomialKey) -> list:
    orbit = [seed]
    seen = {seed}
    frontier = [seed]
    ctx = N_ham.ctx
    while frontier:
        nxt = []
        for key in frontier:
            single = TruncatedHamiltonian(ctx, Bounds())
            single.add_term(key, 1.0 + 0j)
            br, _ = poisson_bracket(N_ham, single)
            for key2, c in br.terms.items():
                if key2 not in seen and abs(complex(c)) > 1e-14:
                    seen.add(key2)
                    orbit.append(key2)
                    nxt.append(key2)
        frontier = nxt
        if len(orbit) > 64:
            raise AssertionError("ad-orbit unexpectedly large")
    return orbit


def homological_residual(normal: NormalForm, F, P, params,
                         kernel=None) -> float:
    """|| ad(F) N + P^{<=2}_{<=K} - [P<=2] || with the state's weights."""
    ctx = P.ctx
    kernel = kernel if kernel is not None else extract_kernel(P, params.K, normal)
    rhs = project(project(P, DegreeAtMost(2)), FourierBelow(params.K + 1)) - kernel
    rhs = rhs.filtered(lambda key: key.degree > 0 or key.k_norm > 0)
    N_ham = normal.to_hamiltonian(ctx, Bounds())
    adFN, _ = poisson_bracket(F, N_ham)
    resid = adFN + rhs
    return majorant_vf_norm(resid, params.weights())


# ---------------------------------------------------------------------------
# the step
# ---------------------------------------------------------------------------

@dataclass
class StepReport:
    step: int
    eps_before: tuple
    eps_after: tuple
    Theta_after: float
    p2_before: float
    p2_after: float
    F_norm: float
    homological_residual: float
    lie_orders: int
    lie_tail: float
    smallness_lhs: float          # eq-(rpiu) left side, logged
    smallness_ok: bool
    delta_omega: tuple
    accepted_fraction: Optional[float] = None


def kam_step(state: KamState, s_next: Optional[float] = None,
             r_next: Optional[float] = None, order_cap: int = 8) -> tuple:
    """One KAM step; returns (new_state, StepReport)."""
    params = state.params
    ctx = state.ctx
    state = state.measure()
    w = params.weights()
    s_next = s_next if s_next is not None else params.s * (1 - 1 / 8)
    r_next = r_next if r_next is not None else params.r * (1 - 1 / 8)
    delta = min(1 - r_next / params.r, 1 - s_next / params.s)
    n = ctx.n
    eps_norm = sum(state.eps)
    tau1 = params.consts.tau1
    lhs = (2 ** (2 * n + 14) / max(delta, 1e-9) * eps_norm
           * math.exp(4 * params.consts.d * tau1 * math.log(params.K))) \
        if eps_norm else 0.0
    smallness_ok = lhs < 0.5
    if params.strict and not smallness_ok:
        raise ArithmeticError(f"strict mode: smallness {lhs:.3e} >= 1/2")

    kernel = extract_kernel(state.P, params.K, state.normal)
    F = solve_homological(state.normal, state.P, params, kernel)
    resid = homological_residual(state.normal, F, state.P, params, kernel)
    F_norm = majorant_vf_norm(F, w)

    H = state.hamiltonian()
    lie = lie_transform(H, F, order_cap, weights=w)
    H_new = lie.hamiltonian.filtered(lambda key: key.degree > 0 or key.k_norm > 0)
    H_new = H_new.realified()  # H is real; strip antisymmetric rounding junk

    # updates of the normal form (eq nucleo absorbed into N)
    normal2 = state.normal.copy()
    delta_omega = np.zeros(n)
    for key, c in kernel.terms.items():
        if key.w_degree == 0 and sum(key.i) == 1:
            h = key.i.index(1)
            delta_omega[h] = complex(c).real
    normal2.omega = normal2.omega + delta_omega
    pair_of = {}
    for idx2, (h, k, a, b) in enumerate(normal2.pairs):
        pair_of[tuple(h)] = idx2
        pair_of[tuple(k)] = idx2
    new_pairs = [list(p) for p in normal2.pairs]
    for key, c in kernel.terms.items():
        if key.w_degree != 2:
            continue
        if key.alpha == key.beta and len(key.alpha) == 1:
            m = key.alpha[0][0]
            if m in pair_of:
                idx2 = pair_of[m]
                sign = 1.0 if tuple(new_pairs[idx2][0]) == m else -1.0
                new_pairs[idx2][2] += sign * complex(c).real
            else:
                normal2.Omega[m] = normal2.Omega.get(m, 0.0) + complex(c).real
        elif not key.beta and len(key.alpha) == 2:
            m = key.alpha[0][0]
            if m in pair_of:
                new_pairs[pair_of[m]][3] += complex(c).real
    normal2.pairs = [tuple(p) for p in new_pairs]

    N2 = normal2.to_hamiltonian(ctx, state.P.bounds)
    P_new = H_new - N2

    # parameter updates (emmepiu)
    M2 = params.M * (1 + 2 * eps_norm)
    L2 = params.L / max(1 - params.M * params.L * eps_norm, 1e-12)
    a2 = params.a - (params.S0 + 2) * params.M * eps_norm
    params2 = replace(params, s=s_next, r=r_next, M=M2, L=L2, a=a2)

    state2 = KamState(ctx=ctx, normal=normal2, P=P_new, params=params2,
                      xi=state.xi, step=state.step + 1,
                      accepted_xi=state.accepted_xi,
                      filter_hook=state.filter_hook, log=state.log)
    accepted_fraction = None
    if state.filter_hook is not None:
        kept = state.filter_hook(state2)
        total0 = len(state.accepted_xi) if state.accepted_xi else len(kept)
        state2.accepted_xi = kept
        accepted_fraction = len(kept) / max(total0, 1)
    state2 = state2.measure()
    report = StepReport(step=state.step, eps_before=state.eps,
                        eps_after=state2.eps, Theta_after=state2.Theta,
                        p2_before=state.p2_norm(), p2_after=state2.p2_norm(),
                        F_norm=F_norm, homological_residual=resid,
                        lie_orders=lie.orders, lie_tail=lie.tail_bound,
                        smallness_lhs=lhs, smallness_ok=smallness_ok,
                        delta_omega=tuple(delta_omega),
                        accepted_fraction=accepted_fraction)
    state2.log = state.log + [report]
    return state2, report


# ---------------------------------------------------------------------------
# iteration
# ---------------------------------------------------------------------------

@dataclass
class IterationResult:
    states: list
    reports: list
    p2_norms: list
    chi_hat: float
    converged: bool
    diverged: bool
    k_capped: bool

    def to_jsonl(self) -> str:
        lines = []
        for st, rep in zip(self.states[1:], self.reports):
            lines.append(json.dumps({
                "j": st.step, "eps": list(st.eps), "Theta": st.Theta,
                "omega": [float(x) for x in st.normal.omega],
                "K_j": st.params.K, "r_j": st.params.r, "s_j": st.params.s,
                "p2": rep.p2_after,
                "accepted_fraction": rep.accepted_fraction,
            }))
        return "\n".join(lines) + "\n"

    def decay_csv(self) -> str:
        out = ["j,p2_norm"]
        for j, v in enumerate(self.p2_norms):
            out.append(f"{j},{v!r}")
        return "\n".join(out) + "\n"


def run_iteration(state0: KamState, nu_max: int, floor_rel: float = 1e-12,
                  order_cap: int = 8) -> IterationResult:
    """Iterate kam_step with the schedule delta_nu = 2^{-nu-3},
    K_nu = 4^nu K_0 capped at K_max; aborts on two consecutive growths of
    |eps| and fits log ||P_j^{<=2}|| to b - c chi^j."""
    state = state0.measure()
    w0 = state.params.weights()
    floor = floor_rel * max(majorant_vf_norm(state.hamiltonian(), w0), 1e-300)
    norms = [state.p2_norm()]
    states, reports = [state], []
    K0 = state.params.K
    growths = 0
    k_capped = False
    converged = False
    diverged = False
    for nu in range(nu_max):
        if norms[-1] < floor:
            converged = True
            break
        delta = 2.0 ** (-nu - 3)
        K_nu = K0 * 4 ** nu
        if state.params.K_max is not None and K_nu > state.params.K_max:
            K_nu = state.params.K_max
            k_capped = True
        params = replace(state.params, K=int(K_nu))
        state = replace(state, params=params)
        state, rep = kam_step(state, s_next=state.params.s * (1 - delta),
                              r_next=state.params.r * (1 - delta),
                              order_cap=order_cap)
        states.append(state)
        reports.append(rep)
        norms.append(rep.p2_after)
        if sum(rep.eps_after) > sum(rep.eps_before):
            growths += 1
            if growths >= 2:
                diverged = True
                break
        else:
            growths = 0
    if norms[-1] < floor:
        converged = True
    chi_hat = fit_chi(norms)
    return IterationResult(states=states, reports=reports, p2_norms=norms,
                           chi_hat=chi_hat, converged=converged,
                           diverged=diverged, k_capped=k_capped)


def fit_chi(norms, chi_lo: float = 1.0005, chi_hi: float = 2 ** (1 / 3),
            grid: int = 400) -> float:
    """Least-squares fit of log norms_j = b - c chi^j over chi in the allowed
    interval (default pivot chi = 1.2 is inside it)."""
    ys = np.array([math.log(max(v, 1e-300)) for v in norms])
    js = np.arange(len(norms))
    best_chi, best_err = chi_lo, math.inf
    for chi in np.linspace(chi_lo, chi_hi, grid):
        f = chi ** js
        A = np.stack([np.ones_like(f), -f], axis=1)
        coef, res, *_ = np.linalg.lstsq(A, ys, rcond=None)
        err = float(np.sum((A @ coef - ys) ** 2))
        if err < best_err and coef[1] > 0:
            best_err, best_chi = err, float(chi)
    return best_chi


# ---------------------------------------------------------------------------
# compatibility checks (A1)-(A5)
# ---------------------------------------------------------------------------

@dataclass
class CompatibilityReport:
    a1_lip_ok: bool
    a1_close_ok: bool
    a2_theta_ok: bool
    a4_theta_ok: bool
    a5_min_quotient: Optional[float]
    a5_ok: Optional[bool]
    details: dict

    @property
    def all_ok(self) -> bool:
        checks = [self.a1_lip_ok, self.a1_close_ok, self.a2_theta_ok,
                  self.a4_theta_ok]
        if self.a5_ok is not None:
            checks.append(self.a5_ok)
        return all(checks)


def compatibility_check(state: KamState, omega_map=None, theta_inf=None,
                        xi_pairs=None, radial_min=None) -> CompatibilityReport:
    """Numeric verification of (A1)-(A5) from sampled data.

    omega_map: callable xi -> omega vector (defaults to the shifted NLS map
    omega0 - 2 xi + accumulated corrections); theta_inf: sup |theta| over
    modes; radial_min: precomputed minimum radial quotient (melnikov).
    """
    params = state.params
    eps2 = params.eps_scale ** 2
    details: dict = {}
    a1_lip_ok = True
    a1_close_ok = True
    if omega_map is not None and xi_pairs:
        worst = 0.0
        for xi_a, xi_b in xi_pairs:
            da = np.max(np.abs(np.asarray(xi_a) - np.asarray(xi_b)))
            do = np.max(np.abs(omega_map(xi_a) - omega_map(xi_b)))
            if do > 0:
                worst = max(worst, da / do)
        details["omega_inv_lip"] = worst
        a1_lip_ok = worst <= params.L + 1e-12
        closes = [float(np.max(np.abs(omega_map(xi) - _vsq(state))))
                  for xi in [p[0] for p in xi_pairs]]
        details["omega_minus_v"] = max(closes) if closes else 0.0
        a1_close_ok = (max(closes) if closes else 0.0) <= params.M * eps2 + 1e-12
    a2_ok = True
    if theta_inf is not None:
        details["theta_inf"] = theta_inf
        a2_ok = theta_inf <= params.M * eps2 / 2 + 1e-12
    st = state.measure()
    details["Theta"] = st.Theta
    a4_ok = st.Theta < 1.0
    a5_ok = None
    if radial_min is not None:
        details["radial_min"] = radial_min
        a5_ok = radial_min > params.a
    return CompatibilityReport(a1_lip_ok=a1_lip_ok, a1_close_ok=a1_close_ok,
                               a2_theta_ok=a2_ok, a4_theta_ok=a4_ok,
                               a5_min_quotient=radial_min, a5_ok=a5_ok,
                               details=details)


def _vsq(state: KamState) -> np.ndarray:
    return np.array([sum(x * x for x in s) for s in state.ctx.sites],
                    dtype=float)


# ---------------------------------------------------------------------------
# shifted frequency map (for acceptance re-filtering)
# ---------------------------------------------------------------------------

class ShiftedFrequency:
    """FrequencyMap wrapper adding the accumulated constant corrections of the
    iteration (frequencies are tracked on the sampled accepted set only; the
    corrections are flat in xi, measured at the working point)."""

    def __init__(self, base, delta_omega=None, delta_Omega=None):
        self.base = base
        self.delta_omega = np.zeros(base.sites.n) if delta_omega is None \
            else np.asarray(delta_omega, dtype=float)
        self.delta_Omega = dict(delta_Omega or {})

    @property
    def graph(self):
        return self.base.graph

    @property
    def sites(self):
        return self.base.sites

    @property
    def xi_ref(self):
        return self.base.xi_ref

    def modes(self):
        return self.base.modes()

    def omega(self, xi):
        return self.base.omega(xi) + self.delta_omega

    def Omega(self, m, xi):
        return self.base.Omega(m, xi) + self.delta_Omega.get(tuple(m), 0.0)

    def Omega_table(self, modes, xi):
        table = self.base.Omega_table(modes, xi)
        for m in table:
            table[m] = table[m] + self.delta_Omega.get(m, 0.0)
        return table

    def shifted(self, d_omega, d_Omega) -> "ShiftedFrequency":
        acc = dict(self.delta_Omega)
        for m, v in d_Omega.items():
            acc[tuple(m)] = acc.get(tuple(m), 0.0) + v
        return ShiftedFrequency(self.base, self.delta_omega
                                + np.asarray(d_omega, dtype=float), acc)
