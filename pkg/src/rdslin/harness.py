"""Scenario-driven verification harness.

A scenario is a TOML file naming one built-in system, numeric configuration
and the artifacts to produce.  Running a scenario executes the requested
stages in dependency order and emits a report whose records each carry a
stable ``anchor`` string (dotted identifiers documented in the README) so
every number in the output is traceable to the property it certifies.
Reports are deterministic for a fixed ``(scenario, seed)`` up to the runtime
field.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .conjugacy import ConjugacyField, ProbeSpec, certify
from .errors import ConfigurationError
from .flow import evolution_operator, solve_ivp
from .randomize import (cocycle_from_rde, first_exit_time,
                        local_linearize, random_conjugacy, smooth_cutoff)
from .sde import PipelineConfig, linearize_sde, pipeline_path_grid
from .spectrum import build_adapted_norms, certify_dichotomy, lyapunov_qr
from .systems import ts1, ts2, ts3, ts3_local, ts4, ts5
from .timebase import TimeGrid, generate_wiener

ARTIFACTS = ("spectrum", "certificate", "trajectories", "local", "pipeline")

DEFAULT_TOLERANCES = {
    "tol_flow": 1e-6,
    "tol_cocycle": 1e-6,
    "tol_conj": 1e-4,
    "tol_bound": 1e-2,
    "tol_fd": 1e-4,
    "tol_inv": 1e-8,
    "cluster_tol": 0.05,
    "picard_tol": 1e-8,
}

_SCHEMA = {
    "name": None,
    "seed": None,
    "system": {"kind", "epsilon", "amp", "eps", "lam", "b", "t_hist"},
    "grid": {"t0", "t_end", "dt"},
    "probes": {"count", "pairs", "radius", "times"},
    "tolerances": set(DEFAULT_TOLERANCES),
    "spectrum": {"T", "dt", "seeds", "expected", "tolerance"},
    "local": {"c", "L0", "check_times"},
    "pipeline": {"seeds", "deep", "check_times", "t_hist", "dt_cohom",
                 "spectrum_T", "conj_horizon"},
    "outputs": {"artifacts"},
}

_KINDS = ("ts1", "ts2", "ts3", "ts3_local", "ts4", "ts5")


@dataclass
class Scenario:
    """Validated scenario configuration (unknown keys are rejected)."""

    name: str
    seed: int
    system: dict
    grid: dict
    probes: dict
    tolerances: dict
    spectrum: dict
    local: dict
    pipeline: dict
    artifacts: list

    @staticmethod
    def load(path, seed_override=None) -> "Scenario":
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"scenario file not found: {path}")
        with open(p, "rb") as fh:
            try:
                raw = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigurationError(f"invalid scenario file: {exc}")
        return Scenario.from_dict(raw, seed_override)

    @staticmethod
    def from_dict(raw: dict, seed_override=None) -> "Scenario":
        for key, sub in raw.items():
            if key not in _SCHEMA:
                raise ConfigurationError(f"unknown scenario key: {key}")
            allowed = _SCHEMA[key]
            if allowed is not None:
                if not isinstance(sub, dict):
                    raise ConfigurationError(f"section {key} must be a table")
                for k in sub:
                    if k not in allowed:
                        raise ConfigurationError(
                            f"unknown key {key}.{k} in scenario")
        system = dict(raw.get("system", {}))
        kind = system.get("kind")
        if kind not in _KINDS:
            raise ConfigurationError(
                f"system.kind must be one of {_KINDS}, got {kind!r}")
        tolerances = dict(DEFAULT_TOLERANCES)
        tolerances.update(raw.get("tolerances", {}))
        for k, v in tolerances.items():
            if not (v > 0):
                raise ConfigurationError(f"tolerance {k} must be positive")
        artifacts = list(raw.get("outputs", {}).get("artifacts", []))
        if not artifacts:
            raise ConfigurationError("outputs.artifacts must be nonempty")
        for a in artifacts:
            if a not in ARTIFACTS:
                raise ConfigurationError(f"unknown artifact {a!r}")
        seed = int(raw.get("seed", 0))
        if seed_override is not None:
            seed = int(seed_override)
        return Scenario(
            name=str(raw.get("name", "unnamed")),
            seed=seed,
            system=system,
            grid=dict(raw.get("grid", {})),
            probes=dict(raw.get("probes", {})),
            tolerances=tolerances,
            spectrum=dict(raw.get("spectrum", {})),
            local=dict(raw.get("local", {})),
            pipeline=dict(raw.get("pipeline", {})),
            artifacts=artifacts,
        )

    def echo(self) -> dict:
        return {
            "name": self.name, "seed": self.seed, "system": self.system,
            "grid": self.grid, "probes": self.probes,
            "tolerances": self.tolerances, "spectrum": self.spectrum,
            "local": self.local, "pipeline": self.pipeline,
            "artifacts": self.artifacts,
        }


@dataclass
class Report:
    """Per-check records plus configuration echo; passes iff every record
    passes.  ``data`` carries raw artifact payloads (spectra, certificates,
    pipeline stage details) keyed by artifact name."""

    scenario: dict
    records: list = dc_field(default_factory=list)
    data: dict = dc_field(default_factory=dict)
    runtime_seconds: float = 0.0
    version: str = __version__
    seed: int = 0

    def add(self, name: str, anchor: str, value: float, bound: float,
            passed=None) -> None:
        if passed is None:
            passed = bool(value <= bound)
        self.records.append({
            "name": name, "anchor": anchor, "value": float(value),
            "bound": float(bound), "pass": bool(passed),
        })

    @property
    def passed(self) -> bool:
        return all(r["pass"] for r in self.records)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "records": self.records,
            "data": self.data,
            "passed": self.passed,
            "runtime_seconds": self.runtime_seconds,
            "version": self.version,
            "seed": self.seed,
        }

    def save(self, out_dir, fmt: str = "json") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = self.scenario.get("name", "report").replace(" ", "-")
        if fmt == "json":
            target = out / f"{stem}.json"
            with open(target, "w") as fh:
                json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        elif fmt == "csv":
            target = out / f"{stem}.csv"
            with open(target, "w") as fh:
                fh.write("name,anchor,value,bound,pass\n")
                for r in self.records:
                    fh.write(f"{r['name']},{r['anchor']},{r['value']!r},"
                             f"{r['bound']!r},{int(r['pass'])}\n")
        else:
            raise ConfigurationError(f"unknown report format {fmt!r}")
        return target


# -- system assembly -----------------------------------------------------


def _driving_path(scn: Scenario, horizon: float, seed=None):
    t_hist = float(scn.system.get("t_hist", 20.0))
    grid = TimeGrid(-(t_hist + 2.0), horizon + 2.0, 1e-2)
    return generate_wiener(scn.seed if seed is None else seed, 1, grid)


def _build_random_system(scn: Scenario, horizon: float, seed=None):
    kind = scn.system["kind"]
    path = _driving_path(scn, horizon, seed)
    if kind == "ts3":
        sys = ts3(path, amp=scn.system.get("amp", 0.3),
                  eps=scn.system.get("eps", 0.0),
                  t_hist=scn.system.get("t_hist", 20.0))
    elif kind == "ts3_local":
        sys = ts3_local(path, amp=scn.system.get("amp", 0.3),
                        eps=scn.system.get("eps", 0.1),
                        t_hist=scn.system.get("t_hist", 20.0))
    else:
        raise ConfigurationError(f"artifact needs a random system, got {kind}")
    return sys, path


# -- artifact runners ----------------------------------------------------


def _run_spectrum(scn: Scenario, report: Report) -> None:
    kind = scn.system["kind"]
    T = float(scn.spectrum.get("T", 100.0))
    dt = float(scn.spectrum.get("dt", 1e-2))
    cluster_tol = scn.tolerances["cluster_tol"]
    if kind == "ts2":
        spec = lyapunov_qr(ts2(), None, T=T, dt=dt, cluster_tol=cluster_tol)
        expected = scn.spectrum.get("expected", [-1.0, -2.0])
        tol = float(scn.spectrum.get("tolerance", 1e-2))
        for lam_hat, lam in zip(spec.exponents, expected):
            report.add(f"spectrum.exponent[{lam}]",
                       "spectrum.qr-exponents", abs(lam_hat - lam), tol)
        ev = evolution_operator(ts2(), None, 0.0, TimeGrid(0.0, 3.0, 1e-3))
        norms = build_adapted_norms(ts2(), None, spec,
                                    [0.0, 0.5, 1.0, 2.0, 3.0])
        consts = certify_dichotomy(ev, norms,
                                   sample_times=[0.0, 0.5, 1.0, 2.0, 3.0],
                                   tol_bound=scn.tolerances["tol_bound"])
        report.add("spectrum.dichotomy-K", "spectrum.adapted-constants",
                   abs(consts.K - 1.0), 1e-12)
        report.add("spectrum.dichotomy-alpha", "spectrum.adapted-constants",
                   abs(consts.alpha - (-(spec.top + spec.gap))), 1e-12)
        sample_ts = [0.0, 0.5, 1.0, 2.0, 3.0]
        slack = max(
            norms.operator_norm(ev.pair(t, s), s, t)
            / np.exp(-consts.alpha * (t - s))
            for s in sample_ts for t in sample_ts if s < t)
        report.add("spectrum.decay-worst-slack", "spectrum.adapted-constants",
                   slack, 1.0 + scn.tolerances["tol_bound"])
        report.data["spectrum"] = {**spec.to_dict(), "K": consts.K,
                                   "alpha": consts.alpha,
                                   "worst_slack": float(slack)}
    elif kind in ("ts3", "ts3_local"):
        n_seeds = int(scn.spectrum.get("seeds", 10))
        expected = float(scn.spectrum.get("expected", [-1.0])[0]) \
            if isinstance(scn.spectrum.get("expected"), list) \
            else float(scn.spectrum.get("expected", -1.0))
        tol = float(scn.spectrum.get("tolerance", 3e-2))
        tops = []
        for k in range(n_seeds):
            sys, path = _build_random_system(scn, T, seed=scn.seed + k)
            spec = lyapunov_qr(sys, path.as_shift(), T=T, dt=dt,
                               cluster_tol=cluster_tol)
            tops.append(spec.top)
        report.add("spectrum.ensemble-exponent", "spectrum.qr-exponents",
                   abs(float(np.mean(tops)) - expected), tol)
        report.data["spectrum"] = {"ensemble_tops": [float(v) for v in tops],
                                   "seeds": n_seeds}
    else:
        raise ConfigurationError(
            f"spectrum artifact not available for system {kind}")


def _run_trajectories(scn: Scenario, report: Report, out_dir=None) -> None:
    kind = scn.system["kind"]
    if kind not in ("ts1", "ts2"):
        raise ConfigurationError(
            f"trajectory artifact expects a deterministic system, got {kind}")
    sys = ts1(scn.system.get("epsilon", 0.2)) if kind == "ts1" else ts2()
    grid = TimeGrid(float(scn.grid.get("t0", 0.0)),
                    float(scn.grid.get("t_end", 5.0)),
                    float(scn.grid.get("dt", 1e-3)))
    tol_flow = scn.tolerances["tol_flow"]
    tol_coc = scn.tolerances["tol_cocycle"]
    ev = evolution_operator(sys, None, grid.t0, grid)
    mid = 0.5 * (grid.t0 + grid.t_end)
    report.add("flow.identity-at-anchor", "evolution.identity",
               float(np.linalg.norm(ev.at(grid.t0) - np.eye(sys.dim))),
               1e-10)
    report.add("flow.cocycle-residual", "evolution.cocycle",
               ev.cocycle_residual(grid.t_end, mid, grid.t0), tol_coc)
    inv = float(np.linalg.norm(
        ev.at(mid) @ ev.inverse_at(mid) - np.eye(sys.dim), ord=2))
    report.add("flow.inverse-residual", "evolution.inverse", inv, tol_coc)
    xi = np.full(sys.dim, 0.5)
    a = solve_ivp(sys, None, grid.t0, xi, grid)
    b = solve_ivp(sys, None, mid, a.at(mid), grid)
    report.add("flow.restart-residual", "flow.two-parameter-group",
               float(np.abs(a.states - b.states).max()), tol_flow)
    if out_dir is not None:
        a.save_csv(Path(out_dir) / f"{scn.name}-trajectory.csv")
        ev.save_csv(Path(out_dir) / f"{scn.name}-evolution.csv")


def _run_certificate(scn: Scenario, report: Report) -> None:
    kind = scn.system["kind"]
    tol = scn.tolerances
    times = tuple(scn.probes.get("times", (0.0, 1.0, 2.0)))
    probes = ProbeSpec(
        count=int(scn.probes.get("count", 40)),
        pairs=int(scn.probes.get("pairs", 60)),
        radius=float(scn.probes.get("radius", 5.0)),
        times=times, seed=scn.seed)

    if kind in ("ts1", "ts2"):
        sys = ts1(scn.system.get("epsilon", 0.2)) if kind == "ts1" else ts2()
        grid = TimeGrid(float(scn.grid.get("t0", 0.0)),
                        float(scn.grid.get("t_end", 12.0)),
                        float(scn.grid.get("dt", 1e-3)))
        field = ConjugacyField(sys, None, grid,
                               picard_tol=tol["picard_tol"])
        cert = certify(field, probes, tol_bound=tol["tol_bound"],
                       tol_conj=tol["tol_conj"])
        report.add("conjugacy.residual", "conjugacy.orbit-intertwining",
                   cert.conjugation_residual, tol["tol_conj"])
        report.add("conjugacy.inverse-residual", "conjugacy.inverse-pair",
                   cert.inverse_residual, tol["tol_conj"])
        report.add("conjugacy.near-identity", "conjugacy.near-identity",
                   cert.near_identity_empirical,
                   cert.near_identity_bound * (1 + tol["tol_bound"]))
        report.add("conjugacy.lipschitz-g", "conjugacy.lipschitz-constants",
                   cert.L_G_empirical,
                   cert.L_G_theory * (1 + tol["tol_bound"]))
        report.add("conjugacy.lipschitz-h", "conjugacy.lipschitz-constants",
                   cert.L_H_empirical,
                   cert.L_H_theory * (1 + tol["tol_bound"]))
        report.add("conjugacy.contraction", "contraction.factor",
                   cert.contraction_empirical,
                   cert.contraction_bound * (1 + tol["tol_bound"]))
        report.data["certificate"] = cert.to_dict()
    elif kind == "ts3":
        horizon = float(scn.grid.get("t_end", 3.5))
        T_spec = float(scn.spectrum.get("T", 60.0))
        sys, path = _build_random_system(scn, max(horizon, T_spec))
        spec = lyapunov_qr(sys, path.as_shift(), T=T_spec, dt=1e-2,
                           cluster_tol=tol["cluster_tol"])
        fiber_times = np.round(np.arange(0.0, horizon + 1e-9, 0.1), 10)
        norms = build_adapted_norms(sys, path.as_shift(), spec, fiber_times)
        coc = cocycle_from_rde(sys, path,
                               dt=float(scn.grid.get("dt", 1e-3)),
                               tol_cocycle=tol["tol_cocycle"])
        rc = random_conjugacy(coc, norms, t_rep=0.5, horizon=horizon,
                              picard_tol=tol["picard_tol"])
        rng = np.random.default_rng(scn.seed)
        xs = rng.uniform(-3, 3, size=(int(scn.probes.get("count", 20)), 1))
        for t in (0.5, 1.0, 2.0):
            report.add(f"conjugacy.orbit-residual[t={t}]",
                       "random-conjugacy.orbit-mapping",
                       rc.orbit_residual(t, xs), 1e-3)
        sup = rc.near_identity_sup(xs, times=(0.5, 1.0, 2.0))
        report.add("conjugacy.near-identity",
                   "random-conjugacy.near-identity", sup,
                   rc.near_identity_bound * (1 + tol["tol_bound"]))
        report.data["certificate"] = {
            "alpha": rc.constants.alpha, "L": rc.constants.L,
            "M": rc.constants.M,
            "norm_equivalence": norms.equivalence,
            "near_identity_bound": rc.near_identity_bound,
        }
    else:
        raise ConfigurationError(
            f"certificate artifact not available for system {kind}")


def _run_local(scn: Scenario, report: Report) -> None:
    if scn.system["kind"] != "ts3_local":
        raise ConfigurationError(
            "local artifact requires the ts3_local system")
    tol = scn.tolerances
    horizon = float(scn.grid.get("t_end", 3.0))
    T_spec = float(scn.spectrum.get("T", 60.0))
    sys, path = _build_random_system(scn, max(horizon, T_spec))
    check_times = tuple(scn.local.get("check_times", (0.5, 1.0, 2.0)))
    cut_pair = smooth_cutoff(sys, path, c=float(scn.local.get("c", 1.0)),
                             L0=float(scn.local.get("L0", 0.3)),
                             windows=tuple(range(int(horizon) + 1)),
                             seed=scn.seed)
    spec = lyapunov_qr(sys, path.as_shift(), T=T_spec, dt=1e-2,
                       cluster_tol=tol["cluster_tol"])
    fiber_times = np.round(np.arange(0.0, horizon + 1e-9, 0.1), 10)
    norms = build_adapted_norms(sys, path.as_shift(), spec, fiber_times)
    coc = cocycle_from_rde(sys, path, dt=float(scn.grid.get("dt", 1e-3)),
                           tol_cocycle=tol["tol_cocycle"])
    sigma0 = cut_pair[0].sigma(0.0)
    probes = sigma0 * np.array([[0.9], [0.45], [0.225]])
    rep = local_linearize(coc, cut_pair, norms, probes,
                          check_times=check_times,
                          tol_conj=1e-3, tol_cocycle=tol["tol_cocycle"])
    report.add("local.orbit-residual", "local.windowed-conjugacy",
               rep.worst_residual, 1e-3)
    report.add("local.field-agreement", "local.truncation-window",
               rep.worst_agreement, tol["tol_cocycle"])
    exit_times = [first_exit_time(coc, cut_pair[0], x, horizon=horizon)
                  for x in probes]
    monotone = all(b >= a for a, b in zip(exit_times, exit_times[1:]))
    report.add("local.exit-time-monotone", "local.exit-times",
               0.0 if monotone else 1.0, 0.5)
    rng = np.random.default_rng(scn.seed + 1)
    inside = rng.uniform(-sigma0, sigma0, size=(50, 1)) * 0.999
    omega = path.as_shift()
    exact = all(
        np.array_equal(cut_pair[1].F(0.5, x, omega), sys.F(0.5, x, omega))
        for x in inside)
    report.add("local.inside-identity-exact", "cutoff.inside-identity",
               0.0 if exact else 1.0, 0.5)
    report.data["local"] = rep.to_dict()


def _run_pipeline(scn: Scenario, report: Report) -> None:
    kind = scn.system["kind"]
    if kind == "ts4":
        sys = ts4(lam=scn.system.get("lam", -1.0),
                  b=scn.system.get("b", 0.3))
    elif kind == "ts5":
        sys = ts5(eps=scn.system.get("eps", 0.1),
                  b=scn.system.get("b", 0.3))
    else:
        raise ConfigurationError(
            f"pipeline artifact needs an sde system, got {kind}")
    cfg = PipelineConfig()
    if not scn.pipeline.get("deep", True):
        cfg.stages = ("spectrum-gate", "cohomology", "induced-rde")
        cfg.spectrum_preservation = False
    if "check_times" in scn.pipeline:
        cfg.check_times = tuple(scn.pipeline["check_times"])
    for k in ("t_hist", "dt_cohom", "spectrum_T", "conj_horizon"):
        if k in scn.pipeline:
            setattr(cfg, k, float(scn.pipeline[k]))
    n_seeds = int(scn.pipeline.get("seeds", 1))
    paths = [generate_wiener(scn.seed + k, 1, pipeline_path_grid(cfg))
             for k in range(n_seeds)]
    rep = linearize_sde(sys, paths, cfg)
    for c in rep.checks:
        report.add(f"pipeline.{c['stage']}.{c['name']}", c["anchor"],
                   c["value"], c["bound"], c["passed"])
    report.data["pipeline"] = {"truncation_bias": rep.truncation_bias,
                               "config": rep.config, "seeds": rep.seeds}


def run(scenario_path, out_dir=None, fmt: str = "json",
        seed_override=None) -> Report:
    """Execute one scenario file and (optionally) write its report."""
    scn = Scenario.load(scenario_path, seed_override)
    return run_scenario(scn, out_dir=out_dir, fmt=fmt)


def run_scenario(scn: Scenario, out_dir=None, fmt: str = "json") -> Report:
    report = Report(scenario=scn.echo(), seed=scn.seed)
    started = time.perf_counter()
    for artifact in scn.artifacts:
        if artifact == "spectrum":
            _run_spectrum(scn, report)
        elif artifact == "trajectories":
            _run_trajectories(scn, report, out_dir)
        elif artifact == "certificate":
            _run_certificate(scn, report)
        elif artifact == "local":
            _run_local(scn, report)
        elif artifact == "pipeline":
            _run_pipeline(scn, report)
    report.runtime_seconds = time.perf_counter() - started
    if out_dir is not None:
        report.save(out_dir, fmt=fmt)
    return report


def bundled_suite_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def verify_all(suite_dir=None, out_dir=None, fmt: str = "json",
               seed_override=None) -> Report:
    """Run every scenario in the suite directory and aggregate the records."""
    suite = Path(suite_dir) if suite_dir is not None else bundled_suite_dir()
    files = sorted(suite.glob("*.toml"))
    if not files:
        raise ConfigurationError(f"no scenario files under {suite}")
    aggregate = Report(scenario={"name": "suite", "suite": str(suite)})
    started = time.perf_counter()
    for f in files:
        rep = run(f, out_dir=out_dir, fmt=fmt, seed_override=seed_override)
        for r in rep.records:
            aggregate.records.append({
                **r, "name": f"{rep.scenario['name']}.{r['name']}",
            })
    aggregate.runtime_seconds = time.perf_counter() - started
    if out_dir is not None:
        aggregate.save(out_dir, fmt=fmt)
    return aggregate
