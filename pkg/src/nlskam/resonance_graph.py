"""The geometric colored graph Gamma_S on the normal sites S^c.

For distinct tangential sites j_i, j_j the sphere with the two sites as
antipodes and the pair of hyperplanes through them orthogonal to j_i - j_j
produce two kinds of edges between normal sites:

  black, marked (i, j):  q = p + j_j - j_i   and  (p - j_i, j_i - j_j) = 0
  red,   marked (i, j):  p + q = j_i + j_j   and  (p - j_i, p - j_j) = 0

Connected components carry a root r, a color sigma(k) = +-1 (red-edge path
parity from the root) and an integer shift vector L(k) in Z^n satisfying

  k + sum_i L_i(k) j_i = sigma(k) r,
  |k|^2 + sum_i L_i(k) |j_i|^2 = sigma(k) |r|^2,
  sigma(k) = 1 + sum_i L_i(k).

Components whose vertices are near the enumeration boundary are flagged
incomplete and excluded from genericity statistics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .exact import mat_rank
from .lattice_geometry import lattice_box, sign_lex_key

Vec = tuple


@dataclass(frozen=True)
class TangentialSites:
    sites: tuple

    def __post_init__(self):
        pts = [tuple(int(x) for x in s) for s in self.sites]
        object.__setattr__(self, "sites", tuple(pts))
        if len(set(pts)) != len(pts):
            raise ValueError("tangential sites must be distinct")
        if len(pts) < 1:
            raise ValueError("need at least one site")
        d = len(pts[0])
        if any(len(p) != d for p in pts):
            raise ValueError("sites must share a dimension")
        if not self.spans_zd():
            raise ValueError("sites must span Z^d over Z")

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def d(self) -> int:
        return len(self.sites[0])

    @property
    def kappa_sq(self) -> int:
        return max(sum(x * x for x in s) for s in self.sites)

    @property
    def kappa(self) -> float:
        return math.sqrt(self.kappa_sq)

    def spans_zd(self) -> bool:
        # S spans Z^d over Z iff the Smith normal form of the site matrix has
        # all unit invariant factors; equivalently the gcd of the d x d minors
        # is 1.
        m = np.array(self.sites, dtype=object).T  # d x n
        d, n = m.shape
        if mat_rank(self.sites) < d:
            return False
        from itertools import combinations
        from math import gcd
        g = 0
        for cols in combinations(range(n), d):
            sub = [[int(m[i][j]) for j in cols] for i in range(d)]
            g = gcd(g, abs(_int_det(sub)))
            if g == 1:
                return True
        return g == 1

    def pi(self, coeffs) -> Vec:
        """pi(a) = sum_i a_i j_i."""
        out = [0] * self.d
        for a, s in zip(coeffs, self.sites):
            for t in range(self.d):
                out[t] += a * s[t]
        return tuple(out)


def _int_det(rows):
    n = len(rows)
    if n == 1:
        return rows[0][0]
    if n == 2:
        return rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0]
    det = 0
    for j in range(n):
        minor = [r[:j] + r[j + 1:] for r in rows[1:]]
        det += (-1) ** j * rows[0][j] * _int_det(minor)
    return det


@dataclass(frozen=True)
class Edge:
    a: Vec
    b: Vec
    color: str          # "black" | "red"
    mark: tuple         # (i, j), 1-based site indices

    def other(self, v):
        return self.b if v == self.a else self.a


@dataclass
class ResonanceComponent:
    vertices: tuple
    edges: tuple
    root: Vec
    sigma: dict
    L: dict
    comb_class: tuple
    incomplete: bool = False
    flags: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.vertices)

    def type_of(self, m) -> Vec:
        m = tuple(m)
        if m not in self.sigma:
            raise KeyError(f"{m} is not a vertex of this component")
        return tuple(x - y for x, y in zip(m, self.root))


class ResonanceGraph:
    """Gamma_S restricted to the ball |m| <= box_radius in S^c."""

    def __init__(self, sites: TangentialSites, box_radius: float):
        if box_radius <= sites.kappa:
            raise ValueError("box radius must exceed kappa")
        self.sites = sites
        self.box_radius = float(box_radius)
        self.vertices = [m for m in lattice_box(sites.d, box_radius)
                         if m not in set(sites.sites)]
        self._vset = set(self.vertices)
        self.edges = self._build_edges()
        self._adj = {}
        for e in self.edges:
            self._adj.setdefault(e.a, []).append(e)
            self._adj.setdefault(e.b, []).append(e)
        self._components: Optional[list] = None
        self._comp_of: dict = {}

    # -- construction -----------------------------------------------------

    def _build_edges(self):
        S = self.sites.sites
        n = self.sites.n
        edges = {}
        pts = np.array(self.vertices, dtype=np.int64)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                ji = np.array(S[i], dtype=np.int64)
                jj = np.array(S[j], dtype=np.int64)
                # black: p on H_{i,j}, q = p + j_j - j_i
                orth = (pts - ji) @ (ji - jj)
                for p in pts[orth == 0]:
                    q = tuple(int(x) for x in p + jj - ji)
                    p = tuple(int(x) for x in p)
                    if q in self._vset:
                        key = (min(p, q), max(p, q), "black")
                        if key not in edges:
                            mark = (i + 1, j + 1) if p <= q else (j + 1, i + 1)
                            a, b = min(p, q), max(p, q)
                            edges[key] = Edge(a, b, "black", mark)
                if i < j:
                    # red: p on the sphere, q antipodal
                    sphere = ((pts - ji) * (pts - jj)).sum(axis=1)
                    for p in pts[sphere == 0]:
                        q = tuple(int(x) for x in ji + jj - p)
                        p = tuple(int(x) for x in p)
                        if q in self._vset and p != q:
                            key = (min(p, q), max(p, q), "red")
                            if key not in edges:
                                edges[key] = Edge(min(p, q), max(p, q), "red",
                                                  (i + 1, j + 1))
        return tuple(edges.values())

    # -- components --------------------------------------------------------

    def components_with_roots(self):
        if self._components is not None:
            return self._components
        seen = set()
        comps = []
        for v in self.vertices:
            if v in seen:
                continue
            comp_vs, comp_es = self._collect(v)
            seen.update(comp_vs)
            comps.append(self._finalize(comp_vs, comp_es))
        self._components = comps
        for c in comps:
            for v in c.vertices:
                self._comp_of[v] = c
        return comps

    def _collect(self, v0):
        stack, vs, es = [v0], {v0}, set()
        while stack:
            v = stack.pop()
            for e in self._adj.get(v, ()):
                es.add(e)
                w = e.other(v)
                if w not in vs:
                    vs.add(w)
                    stack.append(w)
        return tuple(sorted(vs)), tuple(es)

    def _finalize(self, vs, es) -> ResonanceComponent:
        flags = []
        adj = {v: [] for v in vs}
        for e in es:
            adj[e.a].append(e)
            adj[e.b].append(e)
        incomplete = any(math.sqrt(sum(x * x for x in v)) >
                         self.box_radius - 2 * self.sites.kappa for v in vs)
        root = self._choose_root(vs, adj)
        sigma, L, ok = self._propagate(root, vs, adj)
        if not ok:
            flags.append("sigma-parity-inconsistent")
        # verify the defining identities
        S = self.sites.sites
        sq = [sum(x * x for x in s) for s in S]
        rsq = sum(x * x for x in root)
        for k in vs:
            lv = L[k]
            lhs = tuple(k[t] + sum(lv[i] * S[i][t] for i in range(len(S)))
                        for t in range(len(k)))
            if lhs != tuple(sigma[k] * x for x in root):
                flags.append(f"defL-shift-inconsistent at {k}")
            if sum(x * x for x in k) + sum(lv[i] * sq[i] for i in range(len(S))) \
                    != sigma[k] * rsq:
                flags.append(f"defL-energy-inconsistent at {k}")
            if sigma[k] != 1 + sum(lv):
                flags.append(f"defL-mass-inconsistent at {k}")
        comb = self._comb_class(vs, es, root, sigma, L)
        return ResonanceComponent(vertices=vs, edges=tuple(es), root=root,
                                  sigma=sigma, L=L, comb_class=comb,
                                  incomplete=incomplete, flags=flags)

    def _choose_root(self, vs, adj):
        """Deterministic, translation-equivariant root.

        Primary rule: the vertex minimizing the sorted tuple of sign-lex keys
        of the relative offsets (translation invariant).  If the path radius
        from that vertex exceeds floor((d+1)/2) fall back to a tree-center
        choice with the same key as tiebreaker.
        """
        def rel_key(v):
            return tuple(sorted(sign_lex_key(tuple(u[t] - v[t] for t in range(len(v))))
                                for u in vs))

        root = min(vs, key=rel_key)
        bound = (self.sites.d + 1) // 2
        if self._eccentricity(root, vs, adj) > bound:
            ecc = {v: self._eccentricity(v, vs, adj) for v in vs}
            best = min(ecc.values())
            root = min((v for v in vs if ecc[v] == best), key=rel_key)
        return root

    @staticmethod
    def _eccentricity(v0, vs, adj):
        dist = {v0: 0}
        frontier = [v0]
        while frontier:
            nxt = []
            for v in frontier:
                for e in adj[v]:
                    w = e.other(v)
                    if w not in dist:
                        dist[w] = dist[v] + 1
                        nxt.append(w)
            frontier = nxt
        return max(dist.values()) if len(dist) == len(vs) else math.inf

    def _propagate(self, root, vs, adj):
        """BFS from the root accumulating (sigma, L) along edges; returns the
        maps plus a consistency flag checked over all non-tree edges."""
        n = self.sites.n
        sigma = {root: 1}
        L = {root: tuple([0] * n)}
        ok = True
        frontier = [root]
        seen = {root}
        while frontier:
            nxt = []
            for v in frontier:
                for e in adj[v]:
                    w = e.other(v)
                    s, lam = self._step(sigma[v], L[v], e, v)
                    if w in seen:
                        if sigma[w] != s or L[w] != lam:
                            ok = False
                        continue
                    sigma[w], L[w] = s, lam
                    seen.add(w)
                    nxt.append(w)
            frontier = nxt
        return sigma, L, ok

    @staticmethod
    def _step(s, lam, e: Edge, v):
        """Traverse e out of vertex v carrying (sigma, L)."""
        i, j = e.mark[0] - 1, e.mark[1] - 1
        lam = list(lam)
        if e.color == "black":
            # leaving the H_{i,j} endpoint: w = v + j_j - j_i
            if v == e.a:
                lam[i] += 1
                lam[j] -= 1
            else:
                lam[i] -= 1
                lam[j] += 1
            return s, tuple(lam)
        # red: w = j_i + j_j - v, sigma flips
        lam[i] += 1
        lam[j] += 1
        return -s, tuple(-x for x in lam)

    @staticmethod
    def _comb_class(vs, es, root, sigma, L):
        """Canonical key of the marked combinatorial graph: vertices ordered by
        (-sigma, sign-lex on L), edges by index pairs."""
        order = sorted(vs, key=lambda v: (-sigma[v], sign_lex_key(L[v])))
        index = {v: i for i, v in enumerate(order)}
        vkey = tuple((sigma[v], L[v]) for v in order)
        ekey = tuple(sorted((min(index[e.a], index[e.b]),
                             max(index[e.a], index[e.b]), e.color, e.mark)
                            for e in es))
        return (vkey, ekey)

    # -- queries -----------------------------------------------------------

    def component_of(self, m) -> ResonanceComponent:
        self.components_with_roots()
        m = tuple(m)
        if m not in self._comp_of:
            raise KeyError(f"{m} outside the enumerated box")
        return self._comp_of[m]

    def root_of(self, m) -> Vec:
        return self.component_of(m).root

    def root_of_extended(self, m) -> Vec:
        """Root map extended to all of the box: tangential sites are their
        own root (they carry no normal-mode data)."""
        m = tuple(m)
        if m in set(self.sites.sites):
            return m
        return self.component_of(m).root

    def sigma_of(self, m) -> int:
        return self.component_of(m).sigma[tuple(m)]

    def type_of(self, m) -> Vec:
        """m - r(m); bounded by d*kappa on generic red-free components."""
        comp = self.component_of(m)
        return comp.type_of(m)

    # -- genericity --------------------------------------------------------

    def genericity_probe(self) -> dict:
        """Operational genericity checks (not a proof of genericity)."""
        comps = self.components_with_roots()
        d = self.sites.d
        report = {
            "n_components": len(comps),
            "n_complete": 0,
            "oversized": [],
            "affinely_dependent": [],
            "inconsistent": [],
            "passes": True,
        }
        for c in comps:
            if c.incomplete:
                continue
            report["n_complete"] += 1
            if c.size > d + 1:
                report["oversized"].append(c.root)
            if c.size >= 2:
                base = c.vertices[0]
                rows = [tuple(v[t] - base[t] for t in range(d))
                        for v in c.vertices[1:]]
                if mat_rank(rows) < len(rows):
                    report["affinely_dependent"].append(c.root)
            if c.flags:
                report["inconsistent"].append((c.root, tuple(c.flags)))
        report["passes"] = not (report["oversized"] or report["affinely_dependent"]
                                or report["inconsistent"])
        return report

    # -- export ------------------------------------------------------------

    def to_json(self) -> str:
        comps = self.components_with_roots()
        payload = {
            "schema": "nlskam/graph/1",
            "sites": [list(s) for s in self.sites.sites],
            "box_radius": self.box_radius,
            "vertices": [list(v) for v in self.vertices],
            "edges": [{"a": list(e.a), "b": list(e.b), "color": e.color,
                       "mark": list(e.mark)} for e in self.edges],
            "components": [{
                "root": list(c.root),
                "incomplete": c.incomplete,
                "vertices": [list(v) for v in c.vertices],
                "sigma": {str(list(v)): c.sigma[v] for v in c.vertices},
                "L": {str(list(v)): list(c.L[v]) for v in c.vertices},
            } for c in comps],
        }
        return json.dumps(payload, indent=1, sort_keys=True)


def build_graph(sites: TangentialSites, box_radius: float) -> ResonanceGraph:
    return ResonanceGraph(sites, box_radius)


def brute_force_edges(sites: TangentialSites, box_radius: float):
    """O(|box|^2) pair-enumeration oracle for the edge set.

    Tests every ordered pair of box points against the raw defining equations,
    vectorized in chunks over the first index.
    """
    S = sites.sites
    pts_list = [m for m in lattice_box(sites.d, box_radius)
                if m not in set(S)]
    pts = np.array(pts_list, dtype=np.int64)
    M = len(pts)
    found = set()
    chunk = max(1, 2 ** 22 // max(M, 1))
    for lo in range(0, M, chunk):
        P = pts[lo:lo + chunk]                       # (c, d)
        D = pts[None, :, :] - P[:, None, :]          # q - p
        Ssum = pts[None, :, :] + P[:, None, :]       # q + p
        for i in range(sites.n):
            for j in range(sites.n):
                if i == j:
                    continue
                ji = np.array(S[i], dtype=np.int64)
                jj = np.array(S[j], dtype=np.int64)
                delta = jj - ji
                mask = (D == delta).all(axis=2)
                mask &= ((P - ji) @ (ji - jj) == 0)[:, None]
                for a, b in zip(*np.nonzero(mask)):
                    p = tuple(int(x) for x in P[a])
                    q = tuple(int(x) for x in pts[b])
                    if p != q:
                        found.add((min(p, q), max(p, q), "black"))
                if i < j:
                    mask = (Ssum == ji + jj).all(axis=2)
                    mask &= (((P - ji) * (P - jj)).sum(axis=1) == 0)[:, None]
                    for a, b in zip(*np.nonzero(mask)):
                        p = tuple(int(x) for x in P[a])
                        q = tuple(int(x) for x in pts[b])
                        if p != q:
                            found.add((min(p, q), max(p, q), "red"))
    return found
