"""Command-line orchestration: configuration, pipelines and report emission.

Subcommands:
  graph build|probe      graph JSON and the operational genericity report
  blocks spectrum|regions   per-block spectra, cone region scan
  lattice decompose|cuts    partition statistics, cut statistics
  melnikov measure|audit    excluded-measure curves, key-inequality audits
  kam run                   trajectory JSONL and decay CSV for the toy run
  sim run|freq              NLS trajectories and frequency-shift tables
  selftest                  compact property suite on the bundled fixture

Exit codes: 0 ok, 2 config validation error, 3 numerical failure.  All outputs
are schema-versioned; a fixed seed makes every product byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    def __init__(self, fieldname: str, message: str):
        self.fieldname = fieldname
        super().__init__(f"config field '{fieldname}': {message}")


@dataclass
class RunConfig:
    dimension: int = 2
    sites: tuple = ()
    box_radius: float = 12.0
    seed: int = 1234
    output_dir: str = "out"
    # surrogate exponents (None -> fixture defaults)
    lattice: dict = field(default_factory=dict)
    cut: dict = field(default_factory=dict)
    norm_weights: dict = field(default_factory=dict)
    melnikov: dict = field(default_factory=dict)
    kam: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    paper_constants: bool = False

    @staticmethod
    def load(path, overrides=None) -> "RunConfig":
        from . import fixtures
        data = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except FileNotFoundError:
                raise ConfigError("config", f"file not found: {path}")
            except json.JSONDecodeError as exc:
                raise ConfigError("config", f"invalid JSON: {exc}")
        if overrides:
            data.update(overrides)
        cfg = RunConfig()
        known = set(vars(cfg))
        for key, value in data.items():
            if key == "schema":
                continue
            if key not in known:
                raise ConfigError(key, "unknown field")
            setattr(cfg, key, value)
        if not cfg.sites:
            cfg.sites = fixtures.SITES_DEFAULT
        cfg.sites = tuple(tuple(int(x) for x in s) for s in cfg.sites)
        if not isinstance(cfg.dimension, int) or cfg.dimension < 1:
            raise ConfigError("dimension", "must be a positive integer")
        for s in cfg.sites:
            if len(s) != cfg.dimension:
                raise ConfigError("sites", f"site {list(s)} has wrong dimension")
        if cfg.box_radius <= 0:
            raise ConfigError("box_radius", "must be positive")
        if not isinstance(cfg.seed, int):
            raise ConfigError("seed", "must be an integer (mandatory for "
                                      "reproducibility)")
        return cfg

    def tangential_sites(self):
        from .resonance_graph import TangentialSites
        try:
            return TangentialSites(self.sites)
        except ValueError as exc:
            raise ConfigError("sites", str(exc))

    def constants(self):
        from .lattice_geometry import surrogate_constants, paper_constants
        sites = self.tangential_sites()
        if self.paper_constants:
            return paper_constants(d=self.dimension, n=sites.n,
                                   kappa=sites.kappa)
        from . import fixtures
        if not self.lattice:
            return fixtures.melnikov_constants(self.dimension)
        lat = dict(self.lattice)
        for fieldname in ("c", "C", "tau0", "tau1"):
            if fieldname not in lat:
                raise ConfigError(f"lattice.{fieldname}", "required in "
                                  "surrogate mode")
        return surrogate_constants(d=self.dimension, c=lat["c"], C=lat["C"],
                                   tau0=lat["tau0"], tau1=lat["tau1"],
                                   N0=lat.get("N0", 1.0))

    def cut_params(self):
        from .lattice_geometry import CutParams
        from . import fixtures
        if not self.cut:
            return fixtures.cut_params()
        cut = dict(self.cut)
        for fieldname in ("N", "theta", "mu", "tau"):
            if fieldname not in cut:
                raise ConfigError(f"cut.{fieldname}", "required")
        try:
            return CutParams(N=int(cut["N"]), theta=cut["theta"], mu=cut["mu"],
                             tau=cut["tau"], consts=self.constants())
        except ValueError as exc:
            raise ConfigError("cut", str(exc))

    def out_path(self, name: str) -> Path:
        out = Path(self.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return out / name


def _write(path: Path, text: str, quiet=False):
    path.write_text(text)
    if not quiet:
        print(f"wrote {path}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_graph(cfg: RunConfig, action: str) -> int:
    from .resonance_graph import build_graph
    sites = cfg.tangential_sites()
    graph = build_graph(sites, cfg.box_radius)
    if action == "build":
        _write(cfg.out_path("graph.json"), graph.to_json())
    report = graph.genericity_probe()
    payload = dict(report)
    payload["schema"] = "nlskam/probe/1"
    payload["sites"] = [list(s) for s in sites.sites]
    payload["oversized"] = [list(v) for v in payload["oversized"]]
    payload["affinely_dependent"] = [list(v) for v in
                                     payload["affinely_dependent"]]
    payload["inconsistent"] = [[list(v), list(f)] for v, f in
                               payload["inconsistent"]]
    _write(cfg.out_path("genericity.json"), json.dumps(payload, indent=1,
                                                       sort_keys=True))
    return EXIT_OK if report["passes"] else EXIT_NUMERIC


def cmd_blocks(cfg: RunConfig, action: str) -> int:
    from .resonance_graph import build_graph
    from .normal_form import (assemble_block, block_spectrum,
                              export_spectra_json, region_scan)
    sites = cfg.tangential_sites()
    graph = build_graph(sites, cfg.box_radius)
    rng = np.random.default_rng(cfg.seed)
    xi = tuple(0.5 + 0.5 * rng.random() for _ in range(sites.n))
    if action == "spectrum":
        _write(cfg.out_path("spectra.json"), export_spectra_json(graph, xi))
        rows = ["t," + ",".join(f"eig{i}" for i in range(8))]
        seen = set()
        for comp in graph.components_with_roots():
            if comp.incomplete or comp.comb_class in seen or comp.size < 2:
                continue
            seen.add(comp.comb_class)
            block = assemble_block(comp, sites.n)
            for t in np.linspace(0.05, 1.0, 20):
                xs = tuple(t * v for v in xi)
                lam = sorted(block_spectrum(block, xs).eigenvalues,
                             key=lambda z: (z.real, z.imag))
                row = [repr(float(t))]
                row += [repr(float(z.real)) for z in lam]
                rows.append(",".join(row))
        _write(cfg.out_path("spectral_curves.csv"), "\n".join(rows) + "\n")
        return EXIT_OK
    report = region_scan(graph, cone_samples=int(cfg.melnikov.get(
        "cone_samples", 200)), rng=np.random.default_rng(cfg.seed))
    report["schema"] = "nlskam/regions/1"
    _write(cfg.out_path("regions.json"), json.dumps(report, indent=1,
                                                    sort_keys=True))
    return EXIT_OK


def cmd_lattice(cfg: RunConfig, action: str) -> int:
    from .lattice_geometry import decompose, find_cut, lattice_box
    from .resonance_graph import build_graph
    from . import fixtures
    sites = cfg.tangential_sites()
    graph = build_graph(sites, cfg.box_radius + 2 * sites.kappa + 1)
    box = list(lattice_box(cfg.dimension, cfg.box_radius))
    if action == "decompose":
        consts = fixtures.decompose_constants(cfg.dimension)
        parts = decompose(2, box, graph.root_of_extended, consts,
                          sites.kappa_sq)
        payload = {
            "schema": "nlskam/decompose/1",
            "N": parts.N,
            "surrogate": parts.surrogate,
            "class_counts": {str(k): v for k, v in
                             sorted(parts.class_counts().items())},
            "cascade_failures": parts.failures,
            "n_points": len(parts.entries),
        }
        _write(cfg.out_path("decompose.json"), json.dumps(payload, indent=1,
                                                          sort_keys=True))
        return EXIT_OK
    params = cfg.cut_params()
    counts = {}
    for m in box:
        cut = find_cut(m, params, sites.kappa_sq)
        key = "none" if cut is None else str(cut.ell)
        counts[key] = counts.get(key, 0) + 1
    payload = {"schema": "nlskam/cuts/1", "surrogate": params.surrogate,
               "params": {"N": params.N, "theta": params.theta,
                          "mu": params.mu, "tau": params.tau},
               "cut_counts": counts, "n_points": len(box)}
    _write(cfg.out_path("cuts.json"), json.dumps(payload, indent=1,
                                                 sort_keys=True))
    return EXIT_OK


def _melnikov_setup(cfg: RunConfig):
    from .resonance_graph import build_graph
    from .normal_form import FrequencyMap
    from .melnikov import ConditionList, ResonanceBudget
    from . import fixtures
    sites = cfg.tangential_sites()
    graph = build_graph(sites, float(cfg.melnikov.get("box_radius",
                                                      cfg.box_radius)))
    xi_ref = tuple(cfg.melnikov.get("xi_ref", [0.3 + 0.1 * i for i in
                                               range(sites.n)]))
    if len(xi_ref) != sites.n:
        raise ConfigError("melnikov.xi_ref", f"needs {sites.n} entries")
    freq = FrequencyMap(graph, xi_ref)
    consts = cfg.constants()
    budget = ResonanceBudget(gamma=float(cfg.melnikov.get("gamma", 1e-3)),
                             K=int(cfg.melnikov.get("K", 2)),
                             a=float(cfg.melnikov.get("a", 1e-3)),
                             consts=consts,
                             S0=int(cfg.melnikov.get("S0", 8)))
    conds = ConditionList(freq, budget, sites.kappa_sq)
    return sites, graph, freq, budget, conds


def cmd_melnikov(cfg: RunConfig, action: str) -> int:
    from .melnikov import AuditList, measure_sweep, sample_cone
    sites, graph, freq, budget, conds = _melnikov_setup(cfg)
    rng = np.random.default_rng(cfg.seed)
    n_samples = int(cfg.melnikov.get("samples", 400))
    samples = sample_cone(sites.n, n_samples, rng,
                          scale=float(cfg.melnikov.get("scale", 1.0)))
    if action == "measure":
        grid = cfg.melnikov.get("gamma_grid")
        if grid is None:
            g0 = budget.gamma
            grid = [g0 * (i + 1) for i in range(10)]
        curve = measure_sweep(conds, samples, grid)
        _write(cfg.out_path("measure.csv"), curve.to_csv())
        payload = {"schema": "nlskam/measure/1", "slope": curve.slope,
                   "r_squared": curve.r_squared,
                   "doubling_ratios": curve.doubling_ratios}
        _write(cfg.out_path("measure.json"), json.dumps(payload, indent=1,
                                                        sort_keys=True))
        return EXIT_OK
    accepted = [xi for xi in samples if conds.accept(xi)[0]][
        : int(cfg.melnikov.get("audit_samples", 25))]
    inner = [m for m in freq.modes()
             if math.sqrt(sum(x * x for x in m)) <= cfg.box_radius / 2]
    alist = AuditList(freq, budget, mode_subset=inner)
    results = [alist.audit(xi, budget.gamma) for xi in accepted]
    worst = min((r.worst_margin for r in results), default=math.inf)
    payload = {"schema": "nlskam/audit/1", "n_accepted": len(accepted),
               "worst_margin": worst,
               "violations": sum(r.violations for r in results)}
    _write(cfg.out_path("audit.json"), json.dumps(payload, indent=1,
                                                  sort_keys=True))
    return EXIT_OK if payload["violations"] == 0 else EXIT_NUMERIC


def cmd_kam(cfg: RunConfig) -> int:
    from . import fixtures
    from .kam_engine import run_iteration
    kam = dict(cfg.kam)
    state = fixtures.toy_kam_state(
        eps0=float(kam.get("eps0", 1e-4)),
        theta0=float(kam.get("theta0", 1e-3)),
        gamma=float(kam.get("gamma", 1e-3)),
        seed=int(kam.get("seed", cfg.seed)),
    )
    try:
        result = run_iteration(state, nu_max=int(kam.get("nu_max", 5)),
                               floor_rel=float(kam.get("floor_rel", 0.0)))
    except ArithmeticError as exc:
        print(f"kam run failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _write(cfg.out_path("kam_trajectory.jsonl"), result.to_jsonl())
    _write(cfg.out_path("kam_decay.csv"), result.decay_csv())
    print(f"chi_hat = {result.chi_hat:.4f}; converged={result.converged}; "
          f"diverged={result.diverged}")
    return EXIT_OK if not result.diverged else EXIT_NUMERIC


def cmd_sim(cfg: RunConfig, action: str) -> int:
    from .nls_sim import frequency_shift, integrate, seed_torus
    sim = dict(cfg.sim)
    sites = cfg.tangential_sites()
    xi = tuple(sim.get("xi", [0.01 * (i + 1) for i in range(sites.n)]))
    if len(xi) != sites.n:
        raise ConfigError("sim.xi", f"needs {sites.n} entries")
    grid = int(sim.get("grid", 33))
    T = float(sim.get("T", 10.0))
    state = seed_torus(sites.sites, xi, grid, d=cfg.dimension,
                       kappa_sign=int(sim.get("kappa_sign", 1)))
    try:
        traj = integrate(state, T=T, dt=sim.get("dt"), sites=sites.sites,
                         sample_every=int(sim.get("sample_every", 10)))
    except ValueError as exc:
        print(f"sim failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _write(cfg.out_path("trajectory.csv"), traj.to_csv(sites.sites))
    if action == "freq":
        rows = ["site,omega,shift,ratio_to_xi,amplitude_ok"]
        for s, v in zip(sites.sites, xi):
            fit = frequency_shift(traj, s, v)
            tag = " ".join(str(x) for x in s)
            rows.append(f"{tag},{fit.omega!r},{fit.shift!r},"
                        f"{fit.ratio_to_xi!r},{fit.amplitude_ok}")
        _write(cfg.out_path("frequency_shifts.csv"), "\n".join(rows) + "\n")
    print(f"mass drift {traj.mass_drift():.2e}, momentum drift "
          f"{traj.momentum_drift():.2e}")
    return EXIT_OK


def cmd_selftest(cfg: RunConfig) -> int:
    from .selfcheck import run_selftest
    results = run_selftest(seed=cfg.seed)
    failed = [name for name, ok, info in results if not ok]
    for name, ok, info in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {info}")
    return EXIT_OK if not failed else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlskam",
        description="resonance graphs, normal forms and KAM iteration for "
                    "the resonant cubic NLS on T^d")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--output-dir", help="override output directory")
    parser.add_argument("--seed", type=int, help="override RNG seed")
    parser.add_argument("--paper-constants", action="store_true",
                        help="use the strict constants instead of surrogates")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, actions in (("graph", ["build", "probe"]),
                          ("blocks", ["spectrum", "regions"]),
                          ("lattice", ["decompose", "cuts"]),
                          ("melnikov", ["measure", "audit"]),
                          ("sim", ["run", "freq"])):
        p = sub.add_parser(name)
        p.add_argument("action", choices=actions)
    sub.add_parser("kam").add_argument("action", choices=["run"])
    sub.add_parser("selftest")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.paper_constants:
        overrides["paper_constants"] = True
    try:
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "graph":
            return cmd_graph(cfg, args.action)
        if args.command == "blocks":
            return cmd_blocks(cfg, args.action)
        if args.command == "lattice":
            return cmd_lattice(cfg, args.action)
        if args.command == "melnikov":
            return cmd_melnikov(cfg, args.action)
        if args.command == "kam":
            return cmd_kam(cfg)
        if args.command == "sim":
            return cmd_sim(cfg, args.action)
        if args.command == "selftest":
            return cmd_selftest(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
