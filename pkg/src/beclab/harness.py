"""Experiment configuration, scenario runners, manifests and convergence reports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from . import definetti, dynamics, manybody
from .fock import FockSector
from .potentials import make_interaction, read_tabulated, scale, tabulated_interaction
from .spectral import BandScheme, Grid2D, Projector, TrapPotential, build_basis
from .variational import (FlowConfig, classify_stability, galerkin_minimize, gn_minimizer, minimize_hartree,
                          minimize_nls)

log = logging.getLogger("beclab")

SCENARIOS = ("gn", "stability", "nls", "hartree", "manybody-sweep", "prop1-sweep", "lemmas",
             "definetti-sweep", "dynamics-sweep")
NEEDS_GRID = {"gn", "stability", "nls", "hartree", "manybody-sweep", "prop1-sweep", "dynamics-sweep"}
NEEDS_INTERACTION = {"stability", "hartree", "manybody-sweep", "prop1-sweep", "dynamics-sweep"}
NEEDS_BETA = {"hartree", "manybody-sweep", "prop1-sweep", "dynamics-sweep"}
NEEDS_N = {"hartree", "manybody-sweep", "prop1-sweep", "dynamics-sweep"}

# scenario options and their defaults
OPTIONS = {
    "gn": {},
    "stability": {},
    "nls": {"a_over_astar": [-0.9, -1.2], "seeds": [0, 1, 2], "a_star": 11.7008964522},
    "hartree": {},
    "manybody-sweep": {"basis_cutoff": 20.0, "a_star": 11.7008964522},
    "prop1-sweep": {"K1": 15.0, "K2": 15.0, "basis_cutoff": 16.0},
    "lemmas": {"lemma1_cases": 100, "lemma2_cases": 50, "max_particles": 8, "max_modes": 6,
               "tolerance": 1e-12},
    "definetti-sweep": {"dims": [2, 3], "Ms": [4, 6, 8, 10], "states": 50, "samples": 16384},
    "dynamics-sweep": {"modes": 9, "initial_data": 5, "excitation": 0.1, "basis_cutoff": 20.0,
                       "order_time_step": 0.01, "nls_order_time_step": 0.005},
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def workers() -> int:
    raw = os.environ.get("BEC_LAB_WORKERS", "")
    cpus = os.cpu_count() or 1
    if not raw:
        return 1
    try:
        return max(1, min(int(raw), cpus))
    except ValueError:
        raise ConfigError([f"BEC_LAB_WORKERS: expected an integer, got {raw!r}"])


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    seed: int
    output_dir: str
    grid: dict | None
    interaction: dict | None
    trap: dict | None
    beta: float | None
    N_list: tuple
    d_list: tuple
    scheme: BandScheme | None
    solver: FlowConfig
    propagator: dynamics.PropagatorConfig
    options: dict
    source: str = ""

    def make_grid(self) -> Grid2D:
        return Grid2D(float(self.grid["side_length"]), int(self.grid["points"]))

    def make_trap(self) -> TrapPotential:
        if not self.trap:
            return TrapPotential.none()
        return TrapPotential(float(self.trap.get("strength", 1.0)), float(self.trap.get("exponent", 2.0)))

    def make_interaction(self, grid: Grid2D | None = None):
        spec = dict(self.interaction)
        grid = grid or self.make_grid()
        if "file" in spec:
            path = Path(spec["file"])
            if not path.is_absolute() and self.source:
                path = Path(self.source).parent / path
            g, values = read_tabulated(path)
            return tabulated_interaction(values, g)
        profile = spec.pop("profile")
        return make_interaction(profile, spec, grid)

    def stability_interaction(self):
        """The unscaled profile on a box wide enough for the stability flow."""
        if "file" in self.interaction:
            return self.make_interaction()
        w = self.make_interaction()
        width = w.length_scale
        return self.make_interaction(Grid2D(24.0 * width, 128))

    def record(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "source"}
        out["scheme"] = None if self.scheme is None else asdict(self.scheme)
        out["solver"] = asdict(self.solver)
        out["propagator"] = asdict(self.propagator)
        out["N_list"], out["d_list"] = list(self.N_list), list(self.d_list)
        return out


def _type_ok(value, kind) -> bool:
    if kind is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, kind)


def _check(raw: dict, path: str, key: str, kind, problems: list, required: bool = False, default=None):
    if key not in raw:
        if required:
            problems.append(f"{path}{key}: required")
        return default
    value = raw[key]
    if not _type_ok(value, kind):
        problems.append(f"{path}{key}: expected {kind.__name__}, got {type(value).__name__}")
        return default
    return value


def _dataclass_section(raw, name, cls, problems):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        problems.append(f"{name}: expected a table")
        return cls()
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for k, v in raw.items():
        if k not in known:
            problems.append(f"{name}.{k}: unknown field")
            continue
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        problems.append(f"{name}: {exc}")
        return cls()


def parse_config(raw: dict, source: str = "") -> ExperimentConfig:
    """Validate a config mapping; raises ConfigError listing every problem as ``path: message``."""
    problems: list[str] = []
    scenario = _check(raw, "", "scenario", str, problems, required=True)
    if scenario is not None and scenario not in SCENARIOS:
        problems.append(f"scenario: unknown scenario {scenario!r}; expected one of {', '.join(SCENARIOS)}")
        scenario = None
    seed = _check(raw, "", "seed", int, problems, default=0)
    output_dir = _check(raw, "", "output_dir", str, problems, default="results")
    known_top = {"scenario", "seed", "output_dir", "grid", "interaction", "trap", "beta", "N_list", "d_list",
                 "scheme", "solver", "propagator", "options"}
    for k in raw:
        if k not in known_top:
            problems.append(f"{k}: unknown field")

    grid = raw.get("grid")
    if grid is not None or (scenario in NEEDS_GRID):
        if not isinstance(grid, dict):
            problems.append("grid: required" if grid is None else "grid: expected a table")
        else:
            L = _check(grid, "grid.", "side_length", float, problems, required=True)
            n = _check(grid, "grid.", "points", int, problems, required=True)
            if L is not None and n is not None:
                try:
                    Grid2D(float(L), int(n))
                except ValueError as exc:
                    problems.append(f"grid: {exc}")

    inter = raw.get("interaction")
    if inter is not None or scenario in NEEDS_INTERACTION:
        if not isinstance(inter, dict):
            problems.append("interaction: required" if inter is None else "interaction: expected a table")
        elif "file" in inter:
            if scenario in NEEDS_BETA:
                problems.append("interaction.file: tabulated interactions cannot be rescaled")
        elif "profile" not in inter:
            problems.append("interaction.profile: required")

    trap = raw.get("trap")
    if trap is not None:
        if not isinstance(trap, dict):
            problems.append("trap: expected a table")
        else:
            s = _check(trap, "trap.", "strength", float, problems, default=1.0)
            e = _check(trap, "trap.", "exponent", float, problems, default=2.0)
            if s is not None and s < 0:
                problems.append("trap.strength: must be nonnegative")
            if e is not None and not e > 0:
                problems.append("trap.exponent: must be positive")

    beta = _check(raw, "", "beta", float, problems, required=scenario in NEEDS_BETA)
    if beta is not None and not beta > 0:
        problems.append("beta: must be positive")
    N_list = _check(raw, "", "N_list", list, problems, required=scenario in NEEDS_N, default=[])
    if N_list and not all(_type_ok(x, int) and x >= 1 for x in N_list):
        problems.append("N_list: entries must be positive integers")
    d_list = _check(raw, "", "d_list", list, problems, required=scenario == "manybody-sweep", default=[])
    if d_list and not all(_type_ok(x, int) and x >= 1 for x in d_list):
        problems.append("d_list: entries must be positive integers")

    scheme = None
    sch = raw.get("scheme")
    if sch is not None:
        if not isinstance(sch, dict):
            problems.append("scheme: expected a table")
        else:
            eps = _check(sch, "scheme.", "epsilon", float, problems, required=True)
            M = _check(sch, "scheme.", "M", int, problems, required=True)
            surrogate = _check(sch, "scheme.", "surrogate_N", int, problems, default=100)
            for k in sch:
                if k not in ("epsilon", "M", "surrogate_N"):
                    problems.append(f"scheme.{k}: unknown field")
            if eps is not None and M is not None:
                try:
                    scheme = BandScheme(float(eps), int(M), int(surrogate))
                    if beta is not None:
                        scheme.check_interaction(float(beta))
                except ValueError as exc:
                    problems.append(f"scheme: {exc}")

    solver = _dataclass_section(raw.get("solver"), "solver", FlowConfig, problems)
    propagator = _dataclass_section(raw.get("propagator"), "propagator", dynamics.PropagatorConfig, problems)

    opts = raw.get("options", {})
    options = {}
    if not isinstance(opts, dict):
        problems.append("options: expected a table")
    elif scenario is not None:
        defaults = OPTIONS[scenario]
        for k, v in opts.items():
            if k not in defaults:
                problems.append(f"options.{k}: unknown option for scenario {scenario}")
            elif not isinstance(v, type(defaults[k])) and not (isinstance(defaults[k], float) and _type_ok(v, float)):
                problems.append(f"options.{k}: expected {type(defaults[k]).__name__}")
        options = {**defaults, **{k: v for k, v in opts.items() if k in defaults}}

    if problems:
        raise ConfigError(problems)
    cfg = ExperimentConfig(scenario, seed, output_dir, grid, inter, trap, None if beta is None else float(beta),
                           tuple(N_list), tuple(d_list), scheme, solver, propagator, options, source)
    # interaction parameters are checked by building the profile once
    if inter is not None and "file" not in inter:
        try:
            cfg.make_interaction(cfg.make_grid() if grid else Grid2D(1.0, 8))
        except (ValueError, KeyError) as exc:
            raise ConfigError([f"interaction: {exc}"])
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"])
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"])
    return parse_config(raw, str(path))


# ---------------------------------------------------------------------------
# serialization


def fmt(x) -> str:
    return f"{x:.17g}"


def _json(obj, indent=0) -> str:
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(_json(v, indent + 1) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return fmt(x)
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def dumps(obj) -> str:
    """JSON with every float written to 17 significant digits."""
    return _json(obj) + "\n"


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class Collector:
    """Single writer for a results directory; keeps the manifest in sync."""

    MANIFEST = "manifest.json"

    def __init__(self, root, config: ExperimentConfig):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.config_hash = hashlib.sha256(dumps(config.record()).encode()).hexdigest()
        self.files: dict[str, str] = {}
        self.complete = False
        old = self.load_manifest(self.root)
        if old and old.get("config_hash") == self.config_hash:
            self.files = {k: v for k, v in old["files"].items()
                          if (self.root / k).is_file() and sha256(self.root / k) == v}

    @classmethod
    def attach(cls, root) -> "Collector":
        """Reopen a finished results directory to add derived files."""
        man = cls.load_manifest(root)
        if man is None:
            raise FileNotFoundError(f"{root}: no manifest.json")
        out = cls.__new__(cls)
        out.root = Path(root)
        out.config_hash, out.files = man["config_hash"], dict(man["files"])
        out.complete = bool(man.get("complete", False))
        return out

    @classmethod
    def load_manifest(cls, root) -> dict | None:
        p = Path(root) / cls.MANIFEST
        if not p.is_file():
            return None
        return json.loads(p.read_text())

    def has(self, rel: str) -> bool:
        return rel in self.files

    def write_text(self, rel: str, text: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        self.files[rel] = sha256(p)
        self.flush()
        return p

    def write_json(self, rel: str, obj) -> Path:
        return self.write_text(rel, dumps(obj))

    def write_csv(self, rel: str, header, rows) -> Path:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(x) if isinstance(x, (float, np.floating)) else
                         (int(x) if isinstance(x, (bool, np.bool_)) else x) for x in row])
        return self.write_text(rel, buf.getvalue())

    def read_json(self, rel: str):
        return json.loads((self.root / rel).read_text())

    def flush(self, complete: bool | None = None) -> None:
        if complete is not None:
            self.complete = complete
        man = {"config_hash": self.config_hash, "complete": self.complete,
               "files": dict(sorted(self.files.items()))}
        (self.root / self.MANIFEST).write_text(dumps(man))


def verify_manifest(root) -> list[str]:
    """Problems found when comparing the directory against its manifest."""
    root = Path(root)
    man = Collector.load_manifest(root)
    if man is None:
        return ["manifest.json missing"]
    problems = []
    on_disk = {str(p.relative_to(root)) for p in root.rglob("*") if p.is_file()} - {Collector.MANIFEST}
    for rel in sorted(on_disk - set(man["files"])):
        problems.append(f"{rel}: not in manifest")
    for rel, h in man["files"].items():
        if rel not in on_disk:
            problems.append(f"{rel}: listed but missing")
        elif sha256(root / rel) != h:
            problems.append(f"{rel}: hash mismatch")
    return problems


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class Outcome:
    ok: bool
    summary: dict
    lines: list[str] = field(default_factory=list)


def _pool_map(fn, jobs):
    n = workers()
    if n == 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, jobs))


def run_gn(cfg: ExperimentConfig, out: Collector) -> Outcome:
    grid = cfg.make_grid()
    solver = cfg.solver if cfg.solver != FlowConfig() else FlowConfig(gradient_tolerance=1e-5)
    res = gn_minimizer(grid, solver)
    rec = {"a_star": res.energy, "converged": res.converged, "iterations": res.iterations,
           "residual": res.residual, "side_length": grid.side_length, "points": grid.n}
    out.write_json("gn.json", rec)
    return Outcome(res.converged, rec, [f"gn: a* = {res.energy:.10f}"])


def run_stability(cfg: ExperimentConfig, out: Collector) -> Outcome:
    report = classify_stability(cfg.stability_interaction(), replace(cfg.solver, max_iterations=min(
        cfg.solver.max_iterations, 600)))
    out.write_json("stability.json", report.record())
    return Outcome(True, report.record(), [f"stability: {report.verdict} (index {report.hartree_index:.6f})"])


def run_nls(cfg: ExperimentConfig, out: Collector) -> Outcome:
    grid, trap = cfg.make_grid(), cfg.make_trap()
    a_star = cfg.options["a_star"]
    records, ok = [], True
    for ratio in cfg.options["a_over_astar"]:
        for seed in cfg.options["seeds"]:
            res = minimize_nls(grid, trap, ratio * a_star, replace(cfg.solver, seed=int(seed)))
            rec = {"a": ratio * a_star, "a_over_astar": ratio, "seed": seed, **res.record()}
            records.append(rec)
            expect_collapse = ratio < -1
            ok &= bool(res.unbounded_detected) if expect_collapse else bool(res.converged and np.isfinite(res.energy))
    out.write_json("nls.json", {"records": records})
    lines = [f"nls: a/a*={r['a_over_astar']:+.2f} seed={r['seed']} energy={r['energy']:.6g} "
             f"converged={r['converged']} unbounded={r['unbounded_detected']}" for r in records]
    return Outcome(ok, {"records": records}, lines)


def run_hartree(cfg: ExperimentConfig, out: Collector) -> Outcome:
    grid, trap = cfg.make_grid(), cfg.make_trap()
    w = cfg.make_interaction(grid)
    nls = minimize_nls(grid, trap, w.mass_a, cfg.solver)
    rows = []
    for N in cfg.N_list:
        res = minimize_hartree(grid, trap, scale(w, cfg.beta, N, check_resolution=False), cfg.solver)
        rows.append([N, res.energy, nls.energy, abs(res.energy - nls.energy), res.converged and nls.converged])
    out.write_csv("hartree.csv", ["N", "e_hartree", "e_nls", "abs_gap", "converged"], rows)
    gaps = [r[3] for r in rows]
    decreasing = all(b < a for a, b in zip(gaps, gaps[1:]))
    summary = {"e_nls": nls.energy, "gaps": gaps, "strictly_decreasing": decreasing}
    out.write_json("hartree_summary.json", summary)
    return Outcome(decreasing and all(r[4] for r in rows), summary,
                   [f"hartree: N={r[0]} |e_H - e_nls| = {r[3]:.3e}" for r in rows])


def _manybody_cell(job):
    cfg, N, d = job
    grid = cfg.make_grid()
    w = cfg.make_interaction(grid)
    basis = build_basis(grid, cfg.make_trap(), cfg.options["basis_cutoff"])
    if basis.dim < d:
        raise ValueError(f"basis cutoff {cfg.options['basis_cutoff']} yields {basis.dim} < {d} modes")
    basis = basis.truncate(d)
    t = manybody.one_body_matrix(basis)
    wN = scale(w, cfg.beta, N, check_resolution=False)
    V = manybody.symmetrize_tensor(manybody.two_body_tensor(basis, wN))
    Vc = manybody.symmetrize_tensor(manybody.contact_tensor(basis, w.mass_a))
    H = manybody.hamiltonian_from_tensors(t, V, N)
    e_N, psi = manybody.ground_state(H, seed=cfg.seed)
    e_H, _ = galerkin_minimize(t, V, seed=cfg.seed)
    e_Hmod, _ = galerkin_minimize(FlowConfig.modified_fraction(N) * t, V, seed=cfg.seed) if N >= 2 else (e_H, None)
    e_nls, _ = galerkin_minimize(t, Vc, seed=cfg.seed)
    frac = manybody.condensate_fraction(manybody.reduced_density(H.sector, psi, 1))
    cell = {"N": N, "d": d, "e_N": e_N, "e_H": e_H, "e_H_modified": e_Hmod, "e_nls": e_nls,
            "gap": e_N - e_nls, "condensate_fraction": frac, "sector_dim": H.dim}
    if cfg.scheme is not None:
        dec = manybody.sector_decompose(H.sector, psi, cfg.scheme, basis=basis)
        cell["sector_components"] = len(dec.components)
        cell["pythagoras_error"] = dec.pythagoras_error(psi)
    return cell


def _cell_name(N, d) -> str:
    return f"cells/N{N:04d}_d{d:03d}.json"


def run_manybody(cfg: ExperimentConfig, out: Collector) -> Outcome:
    report = classify_stability(cfg.stability_interaction())
    out.write_json("stability.json", report.record())
    todo = [(N, d) for N in sorted(cfg.N_list) for d in sorted(cfg.d_list) if not out.has(_cell_name(N, d))]
    lines = [f"manybody-sweep: w is {report.verdict}; {len(todo)} cells to compute"]
    for cell in _pool_map(_manybody_cell, [(cfg, N, d) for N, d in todo]):
        out.write_json(_cell_name(cell["N"], cell["d"]), cell)
    table, summary = convergence_report(out.root, collector=out)
    lines += [f"  N={r['N']} d={r['d']} e_N={r['e_N']:.8f} gap={r['gap']:.3e} frac={r['condensate_fraction']:.4f}"
              for r in table]
    ok = summary["variational_ok"] and summary["gap_monotone"] and report.verdict == "strictly-stable"
    return Outcome(ok, summary, lines)


def run_prop1(cfg: ExperimentConfig, out: Collector) -> Outcome:
    grid = cfg.make_grid()
    w = cfg.make_interaction(grid)
    basis = build_basis(grid, cfg.make_trap(), cfg.options["basis_cutoff"])
    rows = []
    for N in cfg.N_list:
        b = manybody.projected_interaction_bound(basis, cfg.options["K1"], cfg.options["K2"],
                                                 scale(w, cfg.beta, N, check_resolution=False))
        rows.append([N, b.min_eigenvalue, b.fitted_C, b.rank1, b.rank2])
    out.write_csv("prop1.csv", ["N", "lambda_min", "fitted_C", "rank1", "rank2"], rows)
    Cs = [r[2] for r in rows]
    spread = max(Cs) / min(Cs) if min(Cs) > 0 else math.inf
    summary = {"C_min": min(Cs), "C_max": max(Cs), "spread": spread, "stable": spread <= 3}
    out.write_json("prop1_summary.json", summary)
    return Outcome(summary["stable"], summary, [f"prop1-sweep: C in [{min(Cs):.4g}, {max(Cs):.4g}], spread {spread:.3f}"])


def _random_sector_state(sector: FockSector, mask: np.ndarray, rng) -> np.ndarray:
    k = int(rng.integers(1, 4))
    Y = np.zeros((sector.dim, k), dtype=complex)
    Y[mask] = rng.normal(size=(mask.sum(), k)) + 1j * rng.normal(size=(mask.sum(), k))
    if k == 1:
        return Y[:, 0] / np.linalg.norm(Y)
    rho = Y @ Y.conj().T
    return rho / np.trace(rho).real


def lemma1_case(rng, max_N: int, max_d: int):
    while True:
        N = int(rng.integers(2, max_N + 1))
        d = int(rng.integers(2, max_d + 1))
        labels = rng.integers(0, 3, size=d)  # 0 -> P1, 1 -> P2, 2 -> Q
        if not (np.any(labels == 0) and np.any(labels == 1)):
            continue
        j1 = int(rng.integers(1, N))
        j2 = int(rng.integers(1, N - j1 + 1))
        if not np.any(labels == 2) and j1 + j2 != N:
            j2 = N - j1
        if np.any(labels == 2) or j1 + j2 == N:
            break
    sector = FockSector(d, N)
    P1 = Projector.from_modes(np.flatnonzero(labels == 0), d)
    P2 = Projector.from_modes(np.flatnonzero(labels == 1), d)
    occ = sector.states
    mask = (occ[:, P1.mask].sum(axis=1) == j1) & (occ[:, P2.mask].sum(axis=1) == j2)
    return sector, _random_sector_state(sector, mask, rng), P1, P2, j1, j2


def lemma2_case(rng, max_N: int, max_d: int):
    while True:
        N = int(rng.integers(2, max_N + 1))
        d = int(rng.integers(1, max_d + 1))
        inP = rng.random(d) < 0.5
        if not inP.any():
            continue
        j = int(rng.integers(2, N + 1))
        if inP.all():
            j = N
        break
    sector = FockSector(d, N)
    P = Projector.from_modes(np.flatnonzero(inP), d)
    mask = sector.states[:, P.mask].sum(axis=1) == j
    return sector, _random_sector_state(sector, mask, rng), P, j


def run_lemmas(cfg: ExperimentConfig, out: Collector) -> Outcome:
    o = cfg.options
    rng = np.random.default_rng(cfg.seed)
    rows, passed = [], 0
    for i in range(o["lemma1_cases"]):
        sector, state, P1, P2, j1, j2 = lemma1_case(rng, o["max_particles"], o["max_modes"])
        N = sector.particle_count
        value = manybody.verify_sector_trace(sector, state, P1, P2)
        expected = j1 * j2 / (N * (N - 1))
        err = abs(value - expected)
        ok = err <= o["tolerance"]
        passed += ok
        rows.append(["lemma1", i, N, sector.mode_count, j1, j2, value, expected, err, ok])
    for i in range(o["lemma2_cases"]):
        sector, state, P, j = lemma2_case(rng, o["max_particles"], o["max_modes"])
        res = manybody.extract_sector_state(sector, state, P)
        ok = res.identity_error <= o["tolerance"] and abs(res.trace - 1) <= 1e-10
        passed += ok
        rows.append(["lemma2", i, sector.particle_count, sector.mode_count, j, sector.particle_count - j,
                     res.trace, 1.0, res.identity_error, ok])
    total = o["lemma1_cases"] + o["lemma2_cases"]
    out.write_csv("lemmas.csv", ["lemma", "case", "N", "d", "j1", "j2", "value", "expected", "error", "pass"], rows)
    summary = {"passed": passed, "total": total}
    out.write_json("lemmas_summary.json", summary)
    return Outcome(passed == total, summary, [f"lemmas: {passed}/{total}"])


def run_definetti(cfg: ExperimentConfig, out: Collector) -> Outcome:
    o = cfg.options
    records, s = definetti.definetti_sweep(o["dims"], o["Ms"], o["states"], o["samples"], cfg.seed)
    out.write_csv("definetti.csv", definetti.CSV_HEADER, [r.row() for r in records])
    summary = asdict(s)
    rates = {}
    for d in o["dims"]:
        for M in o["Ms"]:
            cell = [r for r in records if r.d == d and r.M == M]
            rates[f"d{d}_M{M}"] = sum(r.sat_theorem for r in cell) / len(cell)
    summary["theorem_rate_by_cell"] = rates
    out.write_json("definetti_summary.json", summary)
    ok = s.valid_measures == s.checks and s.husimi_rate == 1.0 and s.product_zero == s.valid_measures
    return Outcome(ok, summary, [f"definetti-sweep: husimi envelope {s.husimi_rate:.0%}, "
                                 f"theorem bound satisfied {s.theorem_rate:.1%} of {s.checks} checks"])


def _dynamics_initial(basis, count: int, excitation: float, seed: int):
    out = []
    for s in range(count):
        rng = np.random.default_rng([seed, s])
        c = np.zeros(basis.dim, dtype=complex)
        c[0] = 1.0
        k = min(5, basis.dim)
        c[1:k] = excitation * (rng.normal(size=k - 1) + 1j * rng.normal(size=k - 1))
        out.append(basis.synthesize(c / np.linalg.norm(c)))
    return out


def _dynamics_job(job):
    u0, beta, w, N, basis, prop, nls = job
    return dynamics.compare_one(u0, beta, w, N, basis, prop, nls)


def run_dynamics(cfg: ExperimentConfig, out: Collector) -> Outcome:
    o = cfg.options
    grid = cfg.make_grid()
    w = cfg.make_interaction(grid)
    trap = cfg.make_trap()
    basis = build_basis(grid, trap, o["basis_cutoff"]).truncate(o["modes"])
    prop = cfg.propagator
    inits = _dynamics_initial(basis, o["initial_data"], o["excitation"], cfg.seed)
    Ns = sorted(cfg.N_list)

    free = dynamics.compare(inits[0], cfg.beta, None, Ns, basis, prop)
    free_max = max(float(r.trace_distances.max()) for r in free)
    out.write_csv("dynamics_free.csv", dynamics.CSV_HEADER, [row for r in free for row in r.rows()])

    final = np.zeros((len(inits), len(Ns)))
    nls_drift = mb_drift = 0.0
    for k, u0 in enumerate(inits):
        nls = dynamics.evolve_nls(grid, u0, trap, w.mass_a, prop)
        recs = _pool_map(_dynamics_job, [(u0, cfg.beta, w, N, basis, prop, nls) for N in Ns])
        out.write_csv(f"dynamics_u{k}.csv", dynamics.CSV_HEADER, [row for r in recs for row in r.rows()])
        final[k] = [r.trace_distances[-1] for r in recs]
        nls_drift = max(nls_drift, float(np.max(np.abs(nls.energies - nls.energies[0]))))
        mb_drift = max(mb_drift, max(float(np.max(np.abs(r.manybody_energies - r.manybody_energies[0])))
                                     for r in recs))
    T = max(prop.final_time, 1e-300)
    conserved = nls_drift <= 1e-6 * T and mb_drift <= 1e-8
    medians = np.median(final, axis=0)
    monotone = bool(np.all(np.diff(medians) <= 1e-12))

    # time-step self-convergence of both propagators at the final time
    u0 = inits[0]
    nls_run = lambda h: dynamics.evolve_nls(grid, u0, trap, w.mass_a, replace(prop, time_step=h)).fields[-1]
    nls_ratio = dynamics.self_convergence_ratio(nls_run, o["nls_order_time_step"])
    Nmid = Ns[len(Ns) // 2]
    H = manybody.assemble(basis, scale(w, cfg.beta, Nmid, check_resolution=False), Nmid)
    psi0 = H.sector.coherent_state(basis.coefficients(u0))
    mb_run = lambda h: dynamics.evolve_manybody(psi0, H, replace(prop, time_step=h, method="split")).states[-1]
    mb_ratio = dynamics.self_convergence_ratio(mb_run, o["order_time_step"])
    order_ok = all(3.5 <= r <= 4.5 for r in (nls_ratio, mb_ratio))

    summary = {"N_list": Ns, "median_final_trace_distance": medians.tolist(), "monotone": monotone,
               "free_max_trace_distance": free_max, "nls_order_ratio": nls_ratio,
               "manybody_order_ratio": mb_ratio, "order_ok": order_ok,
               "nls_energy_drift": nls_drift, "manybody_energy_drift": mb_drift, "conserved": conserved}
    out.write_json("dynamics_summary.json", summary)
    lines = [f"dynamics-sweep: w=0 max trace distance {free_max:.2e}",
             "  median trace distance at T: " + " ".join(f"N={N}:{m:.4f}" for N, m in zip(Ns, medians)),
             f"  dt-halving error ratios: nls {nls_ratio:.3f}, many-body {mb_ratio:.3f}",
             f"  energy drift: nls {nls_drift:.2e}, many-body {mb_drift:.2e} per particle"]
    return Outcome(free_max <= 1e-8 and monotone and order_ok and conserved, summary, lines)


RUNNERS = {
    "gn": run_gn, "stability": run_stability, "nls": run_nls, "hartree": run_hartree,
    "manybody-sweep": run_manybody, "prop1-sweep": run_prop1, "lemmas": run_lemmas,
    "definetti-sweep": run_definetti, "dynamics-sweep": run_dynamics,
}


def run(config_path, output_dir=None) -> tuple[Outcome, Path]:
    cfg = load_config(config_path)
    root = Path(output_dir or cfg.output_dir)
    out = Collector(root, cfg)
    out.write_json("config.json", cfg.record())
    t0 = time.perf_counter()
    outcome = RUNNERS[cfg.scenario](cfg, out)
    out.flush(complete=True)
    log.info("%s finished in %.1f s", cfg.scenario, time.perf_counter() - t0)
    return outcome, root


# ---------------------------------------------------------------------------
# convergence report


class IncompleteSweepError(RuntimeError):
    pass


def convergence_report(root, collector: Collector | None = None) -> tuple[list[dict], dict]:
    """Assemble the (N, d) cells of a many-body sweep into convergence.csv."""
    root = Path(root)
    cfg_rec = json.loads((root / "config.json").read_text())
    if cfg_rec["scenario"] != "manybody-sweep":
        raise ValueError(f"{root} holds a {cfg_rec['scenario']} run, not a manybody-sweep")
    missing, table = [], []
    for N in sorted(cfg_rec["N_list"]):
        for d in sorted(cfg_rec["d_list"]):
            p = root / _cell_name(N, d)
            if not p.is_file():
                missing.append((N, d))
            else:
                table.append(json.loads(p.read_text()))
    if missing:
        raise IncompleteSweepError("missing cells " + ", ".join(f"(N={N}, d={d})" for N, d in missing))
    variational_ok = all(r["e_N"] <= r["e_H"] + 1e-9 for r in table)
    d_max = max(cfg_rec["d_list"])
    rows = [r for r in table if r["d"] == d_max]
    gaps = np.array([abs(r["gap"]) for r in rows])
    Ns = np.array([r["N"] for r in rows], dtype=float)
    gap_monotone = bool(np.all(np.diff(gaps) <= 1e-6))
    slope = float(np.polyfit(np.log(Ns), np.log(gaps), 1)[0]) if len(rows) >= 2 and np.all(gaps > 0) else math.nan
    # stability of the second kind: fit e_N = c0 + c1 / N and bound the data from below
    eN = np.array([r["e_N"] for r in rows])
    if len(rows) >= 2:
        c1, c0 = np.polyfit(1 / Ns, eN, 1)
        resid = float(np.max(np.abs(eN - (c0 + c1 / Ns))))
        C_fit = float(max(-(c0 + c1 / Ns.min()), -c0, 0.0) + resid)
    else:
        c0, C_fit = float(eN[0]), float(max(-eN[0], 0.0))
    summary = {"rows": len(table), "variational_ok": variational_ok, "gap_monotone": gap_monotone,
               "log_gap_slope": slope, "e_limit_fit": float(c0), "C_fit": C_fit,
               "min_e_N": float(eN.min()), "stability_ok": bool(eN.min() >= -C_fit and math.isfinite(C_fit))}
    header = ["N", "d", "e_N", "e_H", "e_H_modified", "e_nls", "gap", "condensate_fraction"]
    csv_rows = [[r[k] for k in header] for r in table]
    out = collector or Collector.attach(root)
    out.write_csv("convergence.csv", header, csv_rows)
    out.write_json("convergence_summary.json", summary)
    return table, summary


def report(root) -> tuple[list[dict], dict]:
    return convergence_report(root)
