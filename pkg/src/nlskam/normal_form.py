"""Block matrices of the quadratic normal form, their spectra over the
parameter cone, the elliptic region, sigma-orthogonal diagonalization and the
frequency maps omega(xi), Omega_k(xi).

For a component A with root r, color map sigma and shifts L the matrix C_A of
the normal-form action on the Lagrangian block u'_k = (z')^{sigma(k)}_k is

    c_{u'_h, u'_k} = 2 sigma(k) sqrt(xi_i xi_j)   (h,k) an edge marked (i,j),
    c_{u'_k, u'_k} = - sigma(k) (xi, L(k)),

with sigma of the column index; C_A is then self-adjoint for the indefinite
form sigma_A = diag(sigma(k)), symmetric when the component has no red edge,
and homogeneous of degree one in xi.  Entries are stored as maps
(i,j) -> coefficient with value sum c_ij sqrt(xi_i xi_j), so the substitution
xi = eta^2 makes them exact polynomials in eta.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .resonance_graph import ResonanceComponent, ResonanceGraph, TangentialSites

Vec = tuple


@dataclass(frozen=True)
class ParameterPoint:
    xi: tuple

    def __post_init__(self):
        object.__setattr__(self, "xi", tuple(float(v) for v in self.xi))
        if any(v <= 0 for v in self.xi):
            raise ValueError("actions xi must be strictly positive")

    def scaled(self, rho: float) -> "ParameterPoint":
        return ParameterPoint(tuple(rho * v for v in self.xi))


class BlockMatrix:
    """C_A for one combinatorial class; entries homogeneous of degree 1."""

    def __init__(self, comb_class, vertices, sigma_diag, entries, n_sites):
        self.comb_class = comb_class
        self.vertices = tuple(vertices)        # canonical vertex order
        self.sigma = tuple(sigma_diag)
        self.entries = entries                 # dim x dim list of {(i,j): coeff}
        self.n = n_sites

    @property
    def dim(self) -> int:
        return len(self.vertices)

    def evaluate(self, xi) -> np.ndarray:
        xi = [float(v) for v in xi]
        out = np.zeros((self.dim, self.dim))
        for a in range(self.dim):
            for b in range(self.dim):
                val = 0.0
                for (i, j), c in self.entries[a][b].items():
                    val += c * math.sqrt(xi[i] * xi[j])
                out[a, b] = val
        return out

    def evaluate_exact(self, eta):
        """Exact Fraction matrix at xi_l = eta_l^2 (eta rational, positive)."""
        eta = [Fraction(v) for v in eta]
        out = [[Fraction(0)] * self.dim for _ in range(self.dim)]
        for a in range(self.dim):
            for b in range(self.dim):
                for (i, j), c in self.entries[a][b].items():
                    out[a][b] += Fraction(c) * eta[i] * eta[j]
        return out

    def sigma_matrix(self) -> np.ndarray:
        return np.diag(np.array(self.sigma, dtype=float))

    def self_adjointness_defect_exact(self, eta) -> Fraction:
        """max |(sigma C^T sigma - C)_{ab}| as an exact Fraction."""
        c = self.evaluate_exact(eta)
        worst = Fraction(0)
        for a in range(self.dim):
            for b in range(self.dim):
                lhs = self.sigma[a] * c[b][a] * self.sigma[b]
                worst = max(worst, abs(lhs - c[a][b]))
        return worst


def assemble_block(component: ResonanceComponent, n_sites: int) -> BlockMatrix:
    """Matrix of the block attached to a complete component."""
    if component.incomplete:
        raise ValueError("component touches the box boundary; block undefined")
    if component.flags:
        raise ValueError(f"component failed genericity checks: {component.flags}")
    from .lattice_geometry import sign_lex_key
    order = sorted(component.vertices,
                   key=lambda v: (-component.sigma[v],
                                  sign_lex_key(component.L[v])))
    index = {v: a for a, v in enumerate(order)}
    dim = len(order)
    entries = [[{} for _ in range(dim)] for _ in range(dim)]
    for v in order:
        a = index[v]
        lv = component.L[v]
        diag = entries[a][a]
        for i in range(n_sites):
            if lv[i]:
                pair = (i, i)
                diag[pair] = diag.get(pair, 0) - component.sigma[v] * lv[i]
    for e in component.edges:
        a, b = index[e.a], index[e.b]
        i, j = e.mark[0] - 1, e.mark[1] - 1
        pair = (min(i, j), max(i, j))
        # column convention: sigma of the column vertex
        entries[a][b][pair] = entries[a][b].get(pair, 0) + 2 * component.sigma[e.b]
        entries[b][a][pair] = entries[b][a].get(pair, 0) + 2 * component.sigma[e.a]
    return BlockMatrix(component.comb_class, order,
                       [component.sigma[v] for v in order], entries, n_sites)


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

@dataclass
class Spectrum:
    eigenvalues: np.ndarray       # complex array
    real: list                    # indices classified as real
    complex_pairs: list           # list of (idx_plus, idx_minus)
    degenerate: bool
    min_gap: float


def block_spectrum(B: BlockMatrix, xi, gap_tol: float = 1e-8) -> Spectrum:
    m = B.evaluate(xi)
    lam = np.linalg.eigvals(m)
    scale = max(1.0, float(np.max(np.abs(lam))) if len(lam) else 1.0)
    real_idx, pairs, used = [], [], set()
    for idx, v in enumerate(lam):
        if idx in used:
            continue
        if abs(v.imag) <= gap_tol * scale:
            real_idx.append(idx)
            used.add(idx)
        else:
            best, bdist = None, math.inf
            for jdx in range(len(lam)):
                if jdx == idx or jdx in used:
                    continue
                dist = abs(lam[jdx] - np.conj(v))
                if dist < bdist:
                    best, bdist = jdx, dist
            if best is not None and bdist <= 1e-6 * scale:
                used.update((idx, best))
                hi, lo = (idx, best) if v.imag > 0 else (best, idx)
                pairs.append((hi, lo))
            else:
                real_idx.append(idx)  # unmatched; counted real with a flag below
                used.add(idx)
    gaps = [abs(a - b) for a, b in itertools.combinations(lam, 2)]
    min_gap = min(gaps) if gaps else math.inf
    return Spectrum(eigenvalues=lam, real=real_idx, complex_pairs=pairs,
                    degenerate=bool(gaps) and min_gap < gap_tol * scale,
                    min_gap=min_gap)


def discriminant_exact(B: BlockMatrix, eta) -> Fraction:
    """Exact discriminant of the characteristic polynomial at xi = eta^2;
    zero iff the spectrum is genuinely degenerate there."""
    from .exact import char_poly_exact
    coeffs = char_poly_exact(B.evaluate_exact(eta))
    return _poly_discriminant(coeffs)


def _poly_discriminant(c):
    """Discriminant of sum c_j t^j via the resultant of p and p'."""
    n = len(c) - 1
    dp = [j * c[j] for j in range(1, n + 1)]
    res = _resultant(c, dp)
    lead = c[n]
    sign = (-1) ** (n * (n - 1) // 2)
    return sign * res / lead


def _resultant(p, q):
    dp, dq = len(p) - 1, len(q) - 1
    size = dp + dq
    if size == 0:
        return Fraction(1)
    rows = []
    for sh in range(dq):
        row = [Fraction(0)] * size
        for j, cj in enumerate(reversed(p)):
            row[sh + j] = Fraction(cj)
        rows.append(row)
    for sh in range(dp):
        row = [Fraction(0)] * size
        for j, cj in enumerate(reversed(q)):
            row[sh + j] = Fraction(cj)
        rows.append(row)
    return _det_fraction(rows)


def _det_fraction(rows):
    n = len(rows)
    m = [row[:] for row in rows]
    det = Fraction(1)
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
            det = -det
        det *= m[col][col]
        inv = 1 / m[col][col]
        for r in range(col + 1, n):
            if m[r][col] != 0:
                f = m[r][col] * inv
                m[r] = [a - f * b for a, b in zip(m[r], m[col])]
    return det


# ---------------------------------------------------------------------------
# diagonalization
# ---------------------------------------------------------------------------

@dataclass
class BlockDiagonalization:
    U: np.ndarray
    canonical: np.ndarray
    real_eigs: list
    complex_pairs: list           # (a, b) parts of a +- i b
    sigma_residual: float         # ||U^T sigma U - sigma||
    canon_residual: float         # ||U^{-1} C U - canonical||
    cond: float


def diagonalize_block(B: BlockMatrix, xi, gap_tol: float = 1e-8
                      ) -> BlockDiagonalization:
    """sigma_A-orthogonal transform to the canonical form: real eigenvalues on
    the diagonal, complex pairs as 2x2 blocks [[a,-b],[b,a]]."""
    C = B.evaluate(xi)
    sigma = np.array(B.sigma, dtype=float)
    spec = block_spectrum(B, xi, gap_tol)
    if spec.degenerate:
        raise ArithmeticError("spectrum degenerate at xi; refusing to diagonalize")
    lam, vecs = np.linalg.eig(C)
    scale = max(1.0, float(np.max(np.abs(lam))))
    pieces = []  # (signs tuple, columns (dim x w), canonical block (w x w))
    used = set()
    for idx in range(len(lam)):
        if idx in used:
            continue
        v = lam[idx]
        if abs(v.imag) <= gap_tol * scale:
            used.add(idx)
            w = np.real(vecs[:, idx])
            if np.linalg.norm(w) < 1e-12:
                w = np.imag(vecs[:, idx])
            q = float(w @ (sigma * w))
            if abs(q) < 1e-12:
                raise ArithmeticError("sigma-isotropic eigenvector; cannot normalize")
            w = w / math.sqrt(abs(q))
            sgn = 1 if q > 0 else -1
            pieces.append(((sgn,), w.reshape(-1, 1),
                           np.array([[v.real]])))
        else:
            jdx = min((j for j in range(len(lam)) if j not in used and j != idx),
                      key=lambda j: abs(lam[j] - np.conj(v)))
            used.update((idx, jdx))
            if v.imag < 0:
                v = np.conj(v)
                idx = jdx
            w = vecs[:, idx]          # eigenvector of a + i b
            # normalize the sigma-bilinear square B(w,w) to 1
            bww = complex(w @ (sigma * w))
            if abs(bww) < 1e-12:
                raise ArithmeticError("degenerate sigma-square on a complex pair")
            w = w / np.sqrt(bww)
            u = np.sqrt(2.0) * np.real(w)
            vv = np.sqrt(2.0) * np.imag(w)
            a, b = v.real, v.imag
            # basis (u, v): matrix [[a, b], [-b, a]]; signs (+1, -1)
            pieces.append(((1, -1), np.stack([u, vv], axis=1),
                           np.array([[a, b], [-b, a]])))
    arrangement = _arrange(pieces, tuple(B.sigma))
    if arrangement is None:
        raise ArithmeticError("no block arrangement matches the sigma pattern")
    cols, canon_blocks = [], []
    for piece_idx in arrangement:
        signs, colmat, cb = pieces[piece_idx]
        cols.append(colmat)
        canon_blocks.append(cb)
    U = np.concatenate(cols, axis=1)
    canonical = np.zeros_like(C)
    pos = 0
    real_eigs, cpairs = [], []
    for cb in canon_blocks:
        wdt = cb.shape[0]
        canonical[pos:pos + wdt, pos:pos + wdt] = cb
        if wdt == 1:
            real_eigs.append(float(cb[0, 0]))
        else:
            cpairs.append((float(cb[0, 0]), float(cb[1, 0])))
        pos += wdt
    sig = np.diag(sigma)
    sigma_res = float(np.max(np.abs(U.T @ sig @ U - sig)))
    Uinv = np.linalg.inv(U)
    canon_res = float(np.max(np.abs(Uinv @ C @ U - canonical)))
    return BlockDiagonalization(U=U, canonical=canonical, real_eigs=real_eigs,
                                complex_pairs=cpairs, sigma_residual=sigma_res,
                                canon_residual=canon_res,
                                cond=float(np.linalg.cond(U)))


def _arrange(pieces, sigma_pattern):
    """Order the eigen-pieces so the concatenated sign tuples equal the block's
    sigma pattern (backtracking; blocks are tiny)."""
    target = list(sigma_pattern)

    def rec(remaining, pos):
        if pos == len(target):
            return [] if not remaining else None
        for t, piece_idx in enumerate(remaining):
            signs = pieces[piece_idx][0]
            if list(signs) == target[pos: pos + len(signs)]:
                rest = remaining[:t] + remaining[t + 1:]
                tail = rec(rest, pos + len(signs))
                if tail is not None:
                    return [piece_idx] + tail
        return None

    return rec(list(range(len(pieces))), 0)


# ---------------------------------------------------------------------------
# frequency map
# ---------------------------------------------------------------------------

class FrequencyMap:
    """omega(xi) = (|j_i|^2 - 2 xi_i) and Omega_k(xi) = sigma(k)(|r(k)|^2 +
    2 theta_k(xi)), theta_k the eigenvalue branch of the block of k.

    Branches are labeled by sorted order at a reference point xi_ref and
    tracked by continuity along the segment xi_ref -> xi.
    """

    def __init__(self, graph: ResonanceGraph, xi_ref, path_steps: int = 8):
        self.graph = graph
        self.sites = graph.sites
        self.xi_ref = tuple(float(v) for v in xi_ref)
        self.path_steps = path_steps
        self._blocks: dict = {}          # comb_class -> BlockMatrix
        self._branch_of: dict = {}       # mode -> (comb_class, branch index)
        self._assign_branches()

    def _assign_branches(self):
        for comp in self.graph.components_with_roots():
            if comp.incomplete:
                continue
            if comp.comb_class not in self._blocks:
                self._blocks[comp.comb_class] = assemble_block(comp, self.sites.n)
            block = self._blocks[comp.comb_class]
            # vertex order in the block is canonical; match component vertices
            from .lattice_geometry import sign_lex_key
            order = sorted(comp.vertices,
                           key=lambda v: (-comp.sigma[v], sign_lex_key(comp.L[v])))
            for branch, v in enumerate(order):
                self._branch_of[v] = (comp.comb_class, branch)

    def has_mode(self, m) -> bool:
        return tuple(m) in self._branch_of

    def modes(self):
        return sorted(self._branch_of)

    def omega(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        v = np.array([sum(x * x for x in s) for s in self.sites.sites], dtype=float)
        return v - 2.0 * xi

    def theta_branches(self, comb_class, xi) -> np.ndarray:
        """All branches of one block at xi, ordered consistently with xi_ref."""
        block = self._blocks[comb_class]
        lam_ref = np.linalg.eigvals(block.evaluate(self.xi_ref))
        order = np.lexsort((lam_ref.imag, lam_ref.real))
        lam_prev = lam_ref[order]
        xi0 = np.array(self.xi_ref)
        xi1 = np.asarray(xi, dtype=float)
        for t in np.linspace(0.0, 1.0, self.path_steps + 1)[1:]:
            lam_now = np.linalg.eigvals(block.evaluate(xi0 + t * (xi1 - xi0)))
            lam_prev = _match(lam_prev, lam_now)
        return lam_prev

    def theta(self, m, xi) -> complex:
        comb, branch = self._branch_of[tuple(m)]
        return complex(self.theta_branches(comb, xi)[branch])

    def Omega(self, m, xi) -> complex:
        m = tuple(m)
        comp = self.graph.component_of(m)
        s = comp.sigma[m]
        rsq = sum(x * x for x in comp.root)
        return s * (rsq + 2.0 * self.theta(m, xi))

    def Omega_table(self, modes, xi) -> dict:
        """Omega for many modes at one xi (block spectra computed once)."""
        cache: dict = {}
        out = {}
        for m in modes:
            m = tuple(m)
            comb, branch = self._branch_of[m]
            if comb not in cache:
                cache[comb] = self.theta_branches(comb, xi)
            comp = self.graph.component_of(m)
            rsq = sum(x * x for x in comp.root)
            out[m] = comp.sigma[m] * (rsq + 2.0 * complex(cache[comb][branch]))
        return out

    def theta_branches_batch(self, comb_class, xis: np.ndarray) -> np.ndarray:
        """Branch-tracked eigenvalues for many xi at once: one vectorized eig
        per path step, permutation matching by brute force over the (at most
        (d+1)!) permutations of a block."""
        import itertools as it
        block = self._blocks[comb_class]
        dim = block.dim
        count = len(xis)
        lam_ref = np.linalg.eigvals(block.evaluate(self.xi_ref))
        order = np.lexsort((lam_ref.imag, lam_ref.real))
        prev = np.broadcast_to(lam_ref[order], (count, dim)).copy()
        xi0 = np.asarray(self.xi_ref)
        perms = np.array(list(it.permutations(range(dim))), dtype=np.intp)
        for t in np.linspace(0.0, 1.0, self.path_steps + 1)[1:]:
            pts = xi0[None, :] + t * (np.asarray(xis) - xi0[None, :])
            mats = _evaluate_batch(block, pts)
            now = np.linalg.eigvals(mats)              # (count, dim)
            if dim == 1:
                prev = now
                continue
            # cost of each permutation: sum_i |prev_i - now_{perm_i}|
            cand = now[:, perms]                       # (count, n_perms, dim)
            cost = np.abs(prev[:, None, :] - cand).sum(axis=2)
            best = np.argmin(cost, axis=1)
            prev = cand[np.arange(count), best]
        return prev

    def Omega_table_batch(self, modes, xis: np.ndarray) -> np.ndarray:
        """(n_samples, n_modes) complex table of Omega values."""
        modes = [tuple(m) for m in modes]
        xis = np.asarray(xis, dtype=float)
        cache: dict = {}
        out = np.empty((len(xis), len(modes)), dtype=complex)
        for col, m in enumerate(modes):
            comb, branch = self._branch_of[m]
            if comb not in cache:
                cache[comb] = self.theta_branches_batch(comb, xis)
            comp = self.graph.component_of(m)
            rsq = sum(x * x for x in comp.root)
            out[:, col] = comp.sigma[m] * (rsq + 2.0 * cache[comb][:, branch])
        return out

    def complex_pair_modes(self, xi, gap_tol: float = 1e-8):
        """Mode pairs whose block eigenvalues are a complex pair at xi."""
        pairs = []
        for comb, block in self._blocks.items():
            spec = block_spectrum(block, xi, gap_tol)
            if spec.complex_pairs:
                members = [m for m, (cc, _) in self._branch_of.items() if cc == comb]
                pairs.append((comb, sorted(members)))
        return pairs


def _match(prev: np.ndarray, now: np.ndarray) -> np.ndarray:
    """Permute `now` to minimize total distance to `prev` (continuity)."""
    from scipy.optimize import linear_sum_assignment
    cost = np.abs(prev[:, None] - now[None, :])
    _, cols = linear_sum_assignment(cost)
    return now[cols]


def _evaluate_batch(block: BlockMatrix, xis: np.ndarray) -> np.ndarray:
    """Stack of C_A(xi) over many xi (entries are sums of c sqrt(xi_i xi_j))."""
    count = len(xis)
    out = np.zeros((count, block.dim, block.dim))
    for a in range(block.dim):
        for b in range(block.dim):
            for (i, j), c in block.entries[a][b].items():
                out[:, a, b] += c * np.sqrt(xis[:, i] * xis[:, j])
    return out


# ---------------------------------------------------------------------------
# region scan
# ---------------------------------------------------------------------------

def sample_simplex(n: int, count: int, rng: np.random.Generator,
                   floor: float = 0.05) -> np.ndarray:
    """Uniform samples of the open unit simplex with all coordinates >= floor
    of their uniform share (keeps xi strictly positive)."""
    raw = rng.dirichlet(np.ones(n), size=count)
    return floor / n + (1 - floor) * raw


def region_scan(graph: ResonanceGraph, cone_samples: int, rng=None,
                S0: int = 8, gap_tol: float = 1e-8, collision_tol: float = 1e-9
                ) -> dict:
    """Classify sampled rays of the parameter cone by the real/complex
    signature of every block; flags cross-block collisions
    -(xi,k) + theta_i +- theta_j ~ 0 for |k| < S0."""
    rng = rng or np.random.default_rng(0)
    n = graph.sites.n
    blocks = {}
    for comp in graph.components_with_roots():
        if not comp.incomplete and comp.comb_class not in blocks:
            blocks[comp.comb_class] = assemble_block(comp, n)
    samples = sample_simplex(n, cone_samples, rng)
    regions: dict = {}
    elliptic = []
    collisions = []
    kvecs = [k for k in itertools.product(range(-S0 + 1, S0), repeat=n)
             if 0 < sum(abs(x) for x in k) < S0]
    for row in samples:
        signature = []
        thetas = []
        for comb in sorted(blocks, key=repr):
            spec = block_spectrum(blocks[comb], row, gap_tol)
            signature.append((len(spec.real), len(spec.complex_pairs)))
            thetas.append(spec.eigenvalues)
        signature = tuple(signature)
        regions.setdefault(signature, []).append(row.tolist())
        if all(p == 0 for _, p in signature):
            elliptic.append(row.tolist())
        for (ia, la), (ib, lb) in itertools.combinations(enumerate(thetas), 2):
            for va in la:
                for vb in lb:
                    for k in kvecs:
                        base = -float(np.dot(row, k))
                        for sgn in (1.0, -1.0):
                            if abs(base + va + sgn * vb) < collision_tol:
                                collisions.append({"xi": row.tolist(),
                                                   "blocks": (ia, ib),
                                                   "k": list(k)})
    return {
        "n_samples": cone_samples,
        "n_block_classes": len(blocks),
        "regions": {str(sig): len(pts) for sig, pts in regions.items()},
        "region_samples": {str(sig): pts[:3] for sig, pts in regions.items()},
        "elliptic_found": bool(elliptic),
        "elliptic_samples": elliptic[:5],
        "collisions": collisions,
    }


# ---------------------------------------------------------------------------
# conservation-law residuals
# ---------------------------------------------------------------------------

def conserved_quantities_check(graph: ResonanceGraph, xi, rng=None,
                               gap_tol: float = 1e-8) -> dict:
    """Per complete component: invariance of the standard form
    sum sigma(k) |z_k|^2 under the diagonalizing transform, hence agreement of
    the conserved quantities L, M, K before/after."""
    rng = rng or np.random.default_rng(1)
    out = {"components": 0, "max_residual": 0.0, "skipped_degenerate": 0}
    n = graph.sites.n
    for comp in graph.components_with_roots():
        if comp.incomplete:
            continue
        block = assemble_block(comp, n)
        try:
            diag = diagonalize_block(block, xi, gap_tol)
        except ArithmeticError:
            out["skipped_degenerate"] += 1
            continue
        dim = block.dim
        state = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        new_state = np.linalg.inv(diag.U) @ state
        sig = np.array(block.sigma, dtype=float)
        before = float(np.sum(sig * np.abs(state) ** 2))
        after = float(np.sum(sig * np.abs(new_state) ** 2))
        out["components"] += 1
        out["max_residual"] = max(out["max_residual"], abs(before - after))
    return out


def export_spectra_json(graph: ResonanceGraph, xi) -> str:
    n = graph.sites.n
    rows = []
    seen = set()
    for comp in graph.components_with_roots():
        if comp.incomplete or comp.comb_class in seen:
            continue
        seen.add(comp.comb_class)
        block = assemble_block(comp, n)
        spec = block_spectrum(block, xi)
        rows.append({
            "dim": block.dim,
            "sigma": list(block.sigma),
            "root": list(comp.root),
            "eigenvalues": [[float(v.real), float(v.imag)]
                            for v in spec.eigenvalues],
            "n_real": len(spec.real),
            "n_complex_pairs": len(spec.complex_pairs),
            "degenerate": spec.degenerate,
        })
    return json.dumps({"schema": "nlskam/spectra/1", "xi": list(xi),
                       "blocks": rows}, indent=1, sort_keys=True)
