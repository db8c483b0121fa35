"""Scenario runner and command-line entry points.

Every run takes a JSON config (nested key/value), executes one named
scenario, writes its outputs into a fresh run directory, and finishes by
atomically writing manifest.json with the config hash, per-stage timings,
the produced files, and one pass/fail record per assertion.  Exit code 0
means every assertion passed.  Numeric CSV output is formatted with repr
precision, so identical configs reproduce byte-identical files.

Scenarios: gen-drift, solve-pde, build-zvonkin, simulate-flow,
stability-sweep, run-transport, run-continuity, verify-duality,
verify-gronwall, full-pipeline.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gfd
from .brownian import BrownianDriver
from .grids import GridField, TimeGrid, TimeIndexedField, Torus, max_gradient_entry
from .drift import (
    DriftSpec,
    RoughDriftEvaluator,
    certificate,
    generate_drift,
    mollify_drift,
)


class ConfigInvalid(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"config field '{path}': {message}")
        self.path = path


_DEFAULTS = {
    "scenario": "full-pipeline",
    "seed": 2024,
    "output_dir": "runs/out",
    "grid": {"dimension": 1, "length": 2 * math.pi, "points": 256},
    "time": {"horizon": 1.0, "steps": 128},
    "drift": {
        "kind": "weierstrass",  # zero | constant | sine | weierstrass | file
        "alpha": 0.5,
        "q": 2.0,
        "levels": 5,
        "theta": 0.45,
        "amplitude": 1.0,
        "seed": 3,
        "value": [1.0],
        "path": "",
    },
    "pde": {
        "lam": 4.0,
        "kappa": 1.0,
        "tol": 1e-10,
        "max_iter": 200,
        "tune_eta": None,
        "source": "sine",  # sine | constant | drift
    },
    "zvonkin": {"eta": None, "direction": "forward"},
    "flow": {"paths": 64, "points": 8, "t_index": None, "refinements": 3},
    "stability": {
        "eps_levels": 4,
        "reference_level": 8,
        "p": 2.0,
        "paths": 400,
        "lattice": 16,
    },
    "transport": {"eval_points": 16, "particles": 64, "time_nodes": 4},
    "gronwall": {"steps": 1000, "horizon": 5.0, "counterexample": True},
}

_FIELD_DOC = {
    "scenario": "which scenario to run",
    "seed": "master seed for Brownian drivers",
    "output_dir": "run directory (created; holds manifest.json and outputs)",
    "grid.dimension": "spatial dimension, 1 or 2",
    "grid.length": "torus side length L",
    "grid.points": "grid points per axis (power of two)",
    "time.horizon": "final time T",
    "time.steps": "time steps M (nodes are k T / M)",
    "drift.kind": "zero | constant | sine | weierstrass | file",
    "drift.alpha": "spatial Hölder exponent of the rough drift",
    "drift.q": "time integrability exponent (>= 2)",
    "drift.levels": "octaves J in the cosine series (2^J <= N/4)",
    "drift.theta": "time-singularity exponent in [0, 1/q)",
    "drift.amplitude": "overall drift amplitude",
    "drift.seed": "seed for phases and directions",
    "drift.value": "constant drift vector (kind = constant)",
    "drift.path": "npz produced by gen-drift (kind = file)",
    "pde.lam": "damping (used when tune_eta is null)",
    "pde.kappa": "Laplacian coefficient, 1 or 0.5",
    "pde.tol": "Picard fixed-point tolerance",
    "pde.max_iter": "Picard iteration cap",
    "pde.tune_eta": "when set, double lam until ||v||_{Linf C1} <= eta",
    "pde.source": "sine | constant | drift",
    "zvonkin.eta": "invertibility margin target (default 1/(2d))",
    "zvonkin.direction": "forward | backward",
    "flow.paths": "Monte Carlo sample paths",
    "flow.points": "initial points on a uniform lattice",
    "flow.t_index": "final node (default M)",
    "flow.refinements": "dyadic refinement levels in residual studies",
    "stability.eps_levels": "mollification levels eps_n = 2^-n, n = 0..levels",
    "stability.reference_level": "reference flow uses eps = 2^-this",
    "stability.p": "moment exponent",
    "stability.paths": "sample paths per level",
    "stability.lattice": "initial-point lattice size",
    "transport.eval_points": "evaluation points for the advected scalar",
    "transport.particles": "particles representing the measure",
    "transport.time_nodes": "number of observation times",
    "gronwall.steps": "grid nodes for the inequality checks",
    "gronwall.horizon": "time horizon for the counterexample grid",
    "gronwall.counterexample": "also check the refuted bound",
}


def merge_config(user: dict) -> dict:
    def merge(base, over, path=""):
        out = dict(base)
        for key, val in over.items():
            here = f"{path}.{key}" if path else key
            if key not in base:
                raise ConfigInvalid(here, "unknown field")
            if isinstance(base[key], dict):
                if not isinstance(val, dict):
                    raise ConfigInvalid(here, "expected a table")
                out[key] = merge(base[key], val, here)
            else:
                out[key] = val
        return out

    return merge(_DEFAULTS, user)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(x) -> str:
    return repr(float(x))


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


@dataclass
class RunManifest:
    config_hash: str
    scenario: str
    stages: list = field(default_factory=list)
    files: list = field(default_factory=list)
    assertions: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)

    def write(self, out_dir: Path) -> None:
        payload = {
            "config_hash": self.config_hash,
            "scenario": self.scenario,
            "passed": self.passed,
            "stages": self.stages,
            "files": self.files,
            "assertions": self.assertions,
            "summary": self.summary,
        }
        tmp = out_dir / "manifest.json.tmp"
        tmp.write_text(json.dumps(payload, indent=2, default=float))
        tmp.replace(out_dir / "manifest.json")


class Runner:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.out = Path(cfg["output_dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(config_hash(cfg), cfg["scenario"])
        self._stage_start = None
        self._stage_name = None

    def stage(self, name: str):
        self._flush_stage()
        self._stage_name, self._stage_start = name, time.perf_counter()

    def _flush_stage(self):
        if self._stage_name is not None:
            self.manifest.stages.append(
                {
                    "name": self._stage_name,
                    "seconds": time.perf_counter() - self._stage_start,
                }
            )
            self._stage_name = None

    def check(self, name: str, passed: bool, detail: str = ""):
        self.manifest.assertions.append(
            {"name": name, "passed": bool(passed), "detail": detail}
        )

    def emit(self, relpath: str) -> Path:
        self.manifest.files.append(relpath)
        return self.out / relpath

    def finish(self) -> RunManifest:
        self._flush_stage()
        self.manifest.write(self.out)
        return self.manifest


def _torus(cfg) -> Torus:
    g = cfg["grid"]
    try:
        return Torus(g["dimension"], g["length"], g["points"])
    except ValueError as exc:
        raise ConfigInvalid("grid", str(exc)) from exc


def _timegrid(cfg) -> TimeGrid:
    t = cfg["time"]
    try:
        return TimeGrid(t["horizon"], t["steps"])
    except ValueError as exc:
        raise ConfigInvalid("time", str(exc)) from exc


def _drift_spec(cfg) -> DriftSpec:
    d = cfg["drift"]
    try:
        return DriftSpec(
            d["alpha"], d["q"], d["levels"], d["theta"], d["amplitude"], d["seed"]
        )
    except ValueError as exc:
        raise ConfigInvalid("drift", str(exc)) from exc


def _drift_field(cfg, torus, timegrid) -> TimeIndexedField | None:
    kind = cfg["drift"]["kind"]
    n_nodes = timegrid.steps + 1
    d = torus.dimension
    if kind == "zero":
        return None
    if kind == "constant":
        vec = np.asarray(cfg["drift"]["value"], dtype=float)
        if vec.shape != (d,):
            raise ConfigInvalid("drift.value", f"need {d} components")
        vals = np.broadcast_to(vec, (n_nodes,) + torus.shape + (d,)).copy()
        return TimeIndexedField(torus, timegrid, vals)
    if kind == "sine":
        amp = cfg["drift"]["amplitude"]
        x1 = torus.coords()[..., 0]
        prof = np.stack([amp * np.sin(x1)] * d, axis=-1)
        vals = np.broadcast_to(prof, (n_nodes,) + prof.shape).copy()
        return TimeIndexedField(torus, timegrid, vals)
    if kind == "weierstrass":
        return generate_drift(_drift_spec(cfg), torus, timegrid)
    if kind == "file":
        return load_drift(cfg["drift"]["path"])
    raise ConfigInvalid("drift.kind", f"unknown kind {kind!r}")


def save_drift(path, fld: TimeIndexedField) -> None:
    np.savez(
        path,
        values=fld.values,
        dimension=fld.torus.dimension,
        length=fld.torus.length,
        points=fld.torus.points,
        horizon=fld.timegrid.horizon,
        steps=fld.timegrid.steps,
        q=fld.q,
        alpha=fld.alpha,
    )


def load_drift(path) -> TimeIndexedField:
    z = np.load(path)
    torus = Torus(int(z["dimension"]), float(z["length"]), int(z["points"]))
    tg = TimeGrid(float(z["horizon"]), int(z["steps"]))
    return TimeIndexedField(torus, tg, z["values"], float(z["q"]), float(z["alpha"]))


def _lattice(torus: Torus, n: int) -> np.ndarray:
    d = torus.dimension
    pts1 = (np.arange(n) + 0.5) * torus.length / n
    if d == 1:
        return pts1[:, None]
    xx, yy = np.meshgrid(pts1, pts1, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=-1)


# ---------------------------------------------------------------------------
# scenarios


def _run_gen_drift(run: Runner) -> None:
    cfg = run.cfg
    run.stage("generate")
    torus, tg = _torus(cfg), _timegrid(cfg)
    fld = generate_drift(_drift_spec(cfg), torus, tg)
    save_drift(run.emit("drift.npz"), fld)
    run.stage("certify")
    cert = certificate(fld)
    (run.emit("drift.cert.json")).write_text(json.dumps(cert, indent=2))
    run.check("drift-norm-finite", math.isfinite(cert["lq_c0a_norm"]))
    run.manifest.summary["certificate"] = cert


def _run_solve_pde(run: Runner) -> None:
    from .pde import PdeProblem, solve_mild, tune_lambda

    cfg = run.cfg
    torus, tg = _torus(cfg), _timegrid(cfg)
    run.stage("assemble")
    drift = _drift_field(cfg, torus, tg)
    source_kind = cfg["pde"]["source"]
    n_nodes = tg.steps + 1
    if source_kind == "sine":
        x1 = torus.coords()[..., 0]
        vals = np.broadcast_to(np.sin(x1)[None, ..., None], (n_nodes,) + torus.shape + (1,)).copy()
        source = TimeIndexedField(torus, tg, vals)
    elif source_kind == "constant":
        source = TimeIndexedField(torus, tg, np.ones((n_nodes,) + torus.shape + (1,)))
    elif source_kind == "drift":
        if drift is None:
            raise ConfigInvalid("pde.source", "source 'drift' needs a drift")
        source = drift
    else:
        raise ConfigInvalid("pde.source", f"unknown source {source_kind!r}")
    run.stage("solve")
    eta = cfg["pde"]["tune_eta"]
    if eta is None:
        sol = solve_mild(
            PdeProblem(drift, source, cfg["pde"]["lam"], cfg["pde"]["kappa"]),
            cfg["pde"]["tol"],
            cfg["pde"]["max_iter"],
        )
        lam = cfg["pde"]["lam"]
        curve = []
    else:
        lam, sol, curve = tune_lambda(
            drift, source, eta, cfg["pde"]["kappa"], cfg["pde"]["tol"],
            cfg["pde"]["max_iter"],
        )
    run.stage("report")
    report = sol.norm_report()
    run.check("fixed-point-residual", sol.residual < cfg["pde"]["tol"])
    run.check("zero-initial-slice", float(np.abs(sol.v.values[0]).max()) == 0.0)
    for k in sorted({0, tg.steps // 2, tg.steps}):
        gfd.write_gfd(run.emit(f"v_{k:05d}.gfd"), sol.v.slice(k), k)
    (run.emit("norm_report.json")).write_text(
        json.dumps({"lam": lam, "iterations": sol.iterations, **report}, indent=2)
    )
    sup_curve = [
        (k * tg.dt, float(np.abs(sol.v.values[k]).max())) for k in range(n_nodes)
    ]
    write_csv(run.emit("sup_v.csv"), ["t", "sup_v"], sup_curve)
    if curve:
        write_csv(run.emit("lambda_curve.csv"), ["lam", "linf_c1_norm"], curve)
    run.manifest.summary.update({"lam": lam, "iterations": sol.iterations, **report})


def _run_build_zvonkin(run: Runner) -> None:
    from .zvonkin import build_map, dominance_margin, transform_coefficients

    cfg = run.cfg
    torus, tg = _torus(cfg), _timegrid(cfg)
    run.stage("drift")
    drift = _drift_field(cfg, torus, tg)
    if drift is None:
        raise ConfigInvalid("drift.kind", "map construction needs a drift")
    run.stage("tune")
    zmap = build_map(drift, cfg["zvonkin"]["direction"], cfg["zvonkin"]["eta"])
    run.stage("coefficients")
    dom = dominance_margin(zmap)
    run.check("margin-certified", zmap.certified, f"margin={zmap.margin:.4g}")
    run.check("diagonal-dominance", dom > 0, f"dominance={dom:.4g}")
    write_csv(
        run.emit("lambda_curve.csv"),
        ["lam", "linf_c1_norm"],
        [(l, n if math.isfinite(n) else -1.0) for l, n in zmap.tuning_curve],
    )
    diag = {
        "direction": zmap.direction,
        "lam": zmap.lam,
        "margin": zmap.margin,
        "eta": zmap.eta,
        "dominance": dom,
        "sup_v": zmap.sup_v,
    }
    (run.emit("map_diagnostics.json")).write_text(json.dumps(diag, indent=2))
    run.manifest.summary.update(diag)


def _smooth_sine_evaluators(amplitude: float):
    from .flows import CallableDrift

    def fn(t, x):
        return amplitude * np.sin(x)

    def grad(t, x):
        d = x.shape[-1]
        out = np.zeros(x.shape + (d,))
        for i in range(d):
            out[..., i, i] = amplitude * np.cos(x[..., i])
        return out

    return CallableDrift(fn, grad)


def _flow_factory(cfg, torus, tg):
    """Forward/backward flow runners for the configured drift kind."""
    from . import flows as fl

    kind = cfg["drift"]["kind"]
    if kind == "zero":
        fwd_drift = None
        bwd_drift = None
    elif kind == "constant":
        vec = np.asarray(cfg["drift"]["value"], dtype=float)
        fwd_drift = fl.ConstantDrift(vec)
        bwd_drift = fl.ConstantDrift(vec)
    elif kind == "sine":
        fwd_drift = _smooth_sine_evaluators(cfg["drift"]["amplitude"])
        bwd_drift = fwd_drift
    elif kind == "weierstrass":
        spec = _drift_spec(cfg)
        ev = RoughDriftEvaluator(spec, torus, tg)
        fwd_drift = ev
        bwd_drift = ev
    else:
        raise ConfigInvalid("drift.kind", f"no flow evaluator for {kind!r}")

    def make_forward(driver, s_idx, t_idx, pts):
        return fl.integrate_forward(
            fwd_drift, None, driver, s_idx, t_idx, pts, jacobian=True
        )

    def make_backward(driver, s_idx, t_idx, pts):
        return fl.integrate_backward(bwd_drift, driver, s_idx, t_idx, pts)

    return make_forward, make_backward


def _run_simulate_flow(run: Runner) -> None:
    from . import flows as fl

    cfg = run.cfg
    torus, tg = _torus(cfg), _timegrid(cfg)
    make_forward, make_backward = _flow_factory(cfg, torus, tg)
    t_idx = cfg["flow"]["t_index"] or tg.steps
    pts = _lattice(torus, cfg["flow"]["points"])
    driver = BrownianDriver(cfg["seed"], tg, torus.dimension, cfg["flow"]["paths"])
    run.stage("integrate")
    ens = make_forward(driver, 0, t_idx, pts)
    trivial = make_forward(driver, 0, 0, pts)
    run.check(
        "identity-at-equal-times",
        float(np.abs(trivial.positions - pts[:, None, :]).max()) == 0.0,
    )
    run.stage("flow-property")
    stats, aligned = fl.verify_flow_property(
        make_forward,
        driver,
        0,
        t_idx // 2,
        t_idx,
        pts,
        n_levels=cfg["flow"]["refinements"],
    )
    run.check("aligned-composition", aligned < 1e-9, f"residual={aligned:.3g}")
    run.check(
        "composition-residual-decays",
        stats.max_residuals[-1] <= stats.max_residuals[0] + 1e-14,
        f"residuals={stats.max_residuals}",
    )
    write_csv(
        run.emit("flow_property.csv"),
        ["dt", "max_residual", "mean_residual"],
        zip(stats.levels, stats.max_residuals, stats.mean_residuals),
    )
    run.stage("inverse-flow")
    inv = fl.verify_inverse_flow(
        make_forward, make_backward, driver, 0, t_idx, pts,
        n_levels=cfg["flow"]["refinements"],
    )
    run.check(
        "inverse-residual-decays",
        inv.max_residuals[-1] <= inv.max_residuals[0] + 1e-14,
        f"residuals={inv.max_residuals}",
    )
    write_csv(
        run.emit("inverse_flow.csv"),
        ["dt", "max_residual", "mean_residual"],
        zip(inv.levels, inv.max_residuals, inv.mean_residuals),
    )
    np.savez(
        run.emit("ensemble.npz"),
        positions=ens.positions,
        jacobians=ens.jacobians,
        initial_points=ens.initial_points,
    )
    run.manifest.summary["final_max_residual"] = float(inv.max_residuals[-1])


def _run_stability_sweep(run: Runner) -> None:
    from . import flows as fl
    from .flows import FieldDrift, stability_sweep

    cfg = run.cfg
    torus, tg = _torus(cfg), _timegrid(cfg)
    if cfg["drift"]["kind"] != "weierstrass":
        raise ConfigInvalid("drift.kind", "stability sweep expects a rough drift")
    run.stage("mollify")
    rough = generate_drift(_drift_spec(cfg), torus, tg)
    levels = cfg["stability"]["eps_levels"]
    eps_list = [2.0**-n for n in range(levels + 1)]
    drifts = [FieldDrift(mollify_drift(rough, eps)) for eps in eps_list]
    ref = FieldDrift(mollify_drift(rough, 2.0 ** -cfg["stability"]["reference_level"]))
    run.stage("sweep")
    driver = BrownianDriver(
        cfg["seed"], tg, torus.dimension, cfg["stability"]["paths"]
    )
    lat = _lattice(torus, cfg["stability"]["lattice"])
    curve = stability_sweep(drifts, ref, driver, lat, cfg["stability"]["p"])
    run.check("curve-positive", bool(np.all(curve.values > 0)))
    run.check("curve-weakly-decreasing", curve.weakly_decreasing())
    run.check("gradient-curve-weakly-decreasing", curve.gradient_weakly_decreasing())
    run.check(
        "stderr-within-bound",
        bool(
            curve.stderrs[int(np.argmin(curve.values))]
            <= 0.25 * max(curve.values.min(), 1e-300)
        ),
    )
    write_csv(
        run.emit("stability_curve.csv"),
        ["n", "eps", "e_sup_p", "stderr", "grad_e_sup_p", "grad_stderr"],
        [
            (n, eps_list[n], curve.values[n], curve.stderrs[n],
             curve.gradient_values[n], curve.gradient_stderrs[n])
            for n in range(len(eps_list))
        ],
    )
    run.manifest.summary["curve"] = curve.values.tolist()


def _transport_data(cfg, torus):
    from .transport import box_indicator, smooth_data

    d = torus.dimension
    if d == 1:
        u_smooth = smooth_data(
            torus,
            lambda x: np.sin(x[..., 0]),
            lambda x: np.stack([np.cos(x[..., 0])], axis=-1),
            bounds=(-1.0, 1.0),
        )
        box = box_indicator(torus, [torus.length / 4], [torus.length / 2])
    else:
        u_smooth = smooth_data(
            torus,
            lambda x: np.sin(x[..., 0]) * np.cos(x[..., 1]),
            lambda x: np.stack(
                [np.cos(x[..., 0]) * np.cos(x[..., 1]),
                 -np.sin(x[..., 0]) * np.sin(x[..., 1])],
                axis=-1,
            ),
            bounds=(-1.0, 1.0),
        )
        box = box_indicator(
            torus, [torus.length / 4] * 2, [torus.length / 2] * 2, 64
        )
    return u_smooth, box


def _run_transport(run: Runner) -> None:
    from .transport import solve_transport

    cfg = run.cfg
    torus, tg = _torus(cfg), _timegrid(cfg)
    make_forward, make_backward = _flow_factory(cfg, torus, tg)
    driver = BrownianDriver(cfg["seed"], tg, torus.dimension, cfg["flow"]["paths"])
    u_smooth, box = _transport_data(cfg, torus)
    pts = _lattice(torus, cfg["transport"]["eval_points"])
    t_nodes = np.linspace(0, tg.steps, cfg["transport"]["time_nodes"] + 1).astype(int)[1:]
    run.stage("solve")
    rows = []
    max_ok, box_ok = True, True
    for t_idx in t_nodes:
        vals = solve_transport(u_smooth, make_backward, driver, pts, int(t_idx))
        vals_box = solve_transport(box, make_backward, driver, pts, int(t_idx))
        max_ok &= bool(
            (vals.min() >= u_smooth.bounds[0] - 1e-12)
            and (vals.max() <= u_smooth.bounds[1] + 1e-12)
        )
        box_ok &= bool(np.isin(vals_box, (0.0, 1.0)).all())
        rows.append(
            (t_idx * tg.dt, float(vals.mean()), float(vals_box.mean()))
        )
    run.check("pathwise-maximum-principle", max_ok)
    run.check("indicator-stays-indicator", box_ok)
    write_csv(
        run.emit("transport.csv"), ["t", "mean_u_smooth", "mean_u_box"], rows
    )


def _run_continuity(run: Runner) -> None:
    from .transport import ParticleMeasure, solve_continuity

    cfg = run.cfg
    torus, tg = _torus(cfg), _timegrid(cfg)
    make_forward, _ = _flow_factory(cfg, torus, tg)
    driver = BrownianDriver(cfg["seed"], tg, torus.dimension, cfg["flow"]["paths"])
    rng = np.random.default_rng(cfg["seed"])
    n = cfg["transport"]["particles"]
    mu = ParticleMeasure(
        rng.uniform(0, torus.length, (n, torus.dimension)),
        rng.uniform(-1, 1, n),
    )
    run.stage("push")
    t_nodes = np.linspace(0, tg.steps, cfg["transport"]["time_nodes"] + 1).astype(int)[1:]
    rows = []
    mass_ok = True
    for t_idx in t_nodes:
        pushed = solve_continuity(mu, make_forward, driver, int(t_idx))
        mass_ok &= pushed.weights.sum() == mu.weights.sum()
        rows.append((t_idx * tg.dt, pushed.weights.sum(), pushed.total_variation
                     if hasattr(pushed, "total_variation") else np.abs(pushed.weights).sum()))
    run.check("mass-conserved-exactly", mass_ok)
    write_csv(run.emit("continuity.csv"), ["t", "total_mass", "total_variation"], rows)


def _run_verify_duality(run: Runner) -> None:
    from .transport import ParticleMeasure, verify_duality

    cfg = run.cfg
    torus, tg = _torus(cfg), _timegrid(cfg)
    make_forward, make_backward = _flow_factory(cfg, torus, tg)
    driver = BrownianDriver(cfg["seed"], tg, torus.dimension, cfg["flow"]["paths"])
    u_smooth, _ = _transport_data(cfg, torus)
    rng = np.random.default_rng(cfg["seed"] + 1)
    n = cfg["transport"]["particles"]
    mu = ParticleMeasure(
        rng.uniform(0, torus.length, (n, torus.dimension)),
        rng.uniform(-1, 1, n),
    )
    t_nodes = np.linspace(0, tg.steps, cfg["transport"]["time_nodes"] + 1).astype(int)[1:]
    run.stage("pair")
    drifts = verify_duality(
        u_smooth, mu, make_forward, make_backward, driver, [int(k) for k in t_nodes]
    )
    scale = max(abs(float(np.sum(mu.weights * u_smooth.evaluate(mu.positions)))), 1e-12)
    rel = drifts / scale
    tol = 1e-10 if cfg["drift"]["kind"] in ("zero", "constant") else 0.5
    run.check(
        "duality-drift-bounded", bool(rel.max() <= tol), f"max rel drift {rel.max():.3g}"
    )
    write_csv(
        run.emit("duality.csv"),
        ["t", "mean_abs_drift", "max_abs_drift"],
        [(int(t_nodes[j]) * tg.dt, drifts[j].mean(), drifts[j].max())
         for j in range(len(t_nodes))],
    )
    run.manifest.summary["max_rel_drift"] = float(rel.max())


def _run_verify_gronwall(run: Runner) -> None:
    from .gronwall import (
        VolterraProblem,
        refute_flawed_inequality,
        solve_volterra_equality,
        verify_gronwall_bound,
    )

    cfg = run.cfg
    steps = cfg["gronwall"]["steps"]
    run.stage("bounds")
    ones = lambda t: np.ones_like(np.asarray(t, dtype=float))  # noqa: E731
    kernels = {
        "constant": VolterraProblem(ones, lambda t, s: ones(s), ones, 1.0, steps),
        "exponential": VolterraProblem(
            ones, lambda t, s: np.exp(-(t - s)), ones, 1.0, steps
        ),
        "singular": VolterraProblem(
            ones, lambda t, s: ones(s), ones, 1.0, steps, beta=0.25
        ),
    }
    margins = {}
    for name, prob in kernels.items():
        rep = verify_gronwall_bound(prob)
        run.check(f"bound-holds-{name}", rep.passed)
        margins[name] = float(rep.margins.min())
        write_csv(
            run.emit(f"gronwall_{name}.csv"),
            ["t", "u", "bound", "margin"],
            zip(rep.nodes, rep.u, rep.bound, rep.margins),
        )
    run.stage("oracles")
    u_exp = solve_volterra_equality(kernels["constant"])
    err_exp = float(np.abs(u_exp - np.exp(kernels["constant"].nodes())).max())
    u_lin = solve_volterra_equality(kernels["exponential"])
    err_lin = float(np.abs(u_lin - (1 + kernels["exponential"].nodes())).max())
    run.check("resolvent-exp", err_exp < 1e-5, f"err={err_exp:.3g}")
    run.check("resolvent-linear", err_lin < 1e-5, f"err={err_lin:.3g}")
    if cfg["gronwall"]["counterexample"]:
        run.stage("counterexample")
        rep = refute_flawed_inequality(cfg["gronwall"]["horizon"], steps)
        run.check(
            "flawed-bound-refuted",
            rep.passed and rep.min_gap_after > 0,
            f"min gap (t>=0.1) = {rep.min_gap_after:.3g}",
        )
        write_csv(
            run.emit("counterexample.csv"),
            ["t", "true_solution", "claimed_bound"],
            zip(rep.nodes, rep.lhs, rep.rhs),
        )
        run.manifest.summary["counterexample_min_gap"] = rep.min_gap_after
    run.manifest.summary["margins"] = margins


def _run_full_pipeline(run: Runner) -> None:
    from . import flows as fl
    from .transport import ParticleMeasure, verify_duality
    from .zvonkin import build_map, dominance_margin

    cfg = run.cfg
    torus, tg = _torus(cfg), _timegrid(cfg)
    run.stage("drift")
    drift = _drift_field(cfg, torus, tg)
    if drift is not None:
        cert = certificate(drift)
        run.check("drift-certified", math.isfinite(cert["lq_c0a_norm"]))
        run.manifest.summary["certificate"] = cert

    if drift is None:
        make_forward, make_backward = _flow_factory(cfg, torus, tg)
        run.manifest.summary["lam"] = None
    else:
        run.stage("maps")
        # the refinement studies subdivide the driver; the maps must be
        # built on the finest grid those studies will touch
        fine_steps = tg.steps * (1 << cfg["flow"]["refinements"])
        drift_fine = _drift_field(cfg, torus, TimeGrid(tg.horizon, fine_steps))
        fwd_map = build_map(drift_fine, "forward")
        bwd_map = build_map(drift_fine, "backward")
        run.check("forward-map-certified", fwd_map.certified,
                  f"lam={fwd_map.lam} margin={fwd_map.margin:.4g}")
        run.check("backward-map-certified", bwd_map.certified,
                  f"lam={bwd_map.lam} margin={bwd_map.margin:.4g}")
        run.check("forward-dominance", dominance_margin(fwd_map) > 0)
        run.manifest.summary.update(
            {
                "lam_forward": fwd_map.lam,
                "lam_backward": bwd_map.lam,
                "margin_forward": fwd_map.margin,
                "margin_backward": bwd_map.margin,
            }
        )

        def make_forward(driver, s_idx, t_idx, pts):
            return fl.flow_via_zvonkin(fwd_map, driver, s_idx, t_idx, pts)

        def make_backward(driver, s_idx, t_idx, pts):
            return fl.flow_via_zvonkin(
                bwd_map, driver, s_idx, t_idx, pts, backward=True
            )

    run.stage("flow-residuals")
    pts = _lattice(torus, cfg["flow"]["points"])
    driver = BrownianDriver(cfg["seed"], tg, torus.dimension, cfg["flow"]["paths"])
    stats, aligned = fl.verify_flow_property(
        make_forward, driver, 0, tg.steps // 2, tg.steps, pts,
        n_levels=cfg["flow"]["refinements"], ref_extra=1,
    )
    run.check("composition-residual-decays",
              bool(stats.max_residuals[-1] <= stats.max_residuals[0] + 1e-14),
              f"curve={stats.max_residuals}")
    write_csv(run.emit("flow_property.csv"),
              ["dt", "max_residual", "mean_residual"],
              zip(stats.levels, stats.max_residuals, stats.mean_residuals))
    inv = fl.verify_inverse_flow(
        make_forward, make_backward, driver, 0, tg.steps, pts,
        n_levels=cfg["flow"]["refinements"],
    )
    run.check("inverse-residual-decays",
              bool(inv.max_residuals[-1] <= inv.max_residuals[0] + 1e-14),
              f"curve={inv.max_residuals}")
    write_csv(run.emit("inverse_flow.csv"),
              ["dt", "max_residual", "mean_residual"],
              zip(inv.levels, inv.max_residuals, inv.mean_residuals))

    run.stage("duality")
    u_smooth, _ = _transport_data(cfg, torus)
    rng = np.random.default_rng(cfg["seed"] + 1)
    n = cfg["transport"]["particles"]
    mu = ParticleMeasure(
        rng.uniform(0, torus.length, (n, torus.dimension)), rng.uniform(-1, 1, n)
    )
    small_driver = BrownianDriver(cfg["seed"], tg, torus.dimension,
                                  min(cfg["flow"]["paths"], 16))
    levels = []
    for drv in (small_driver, small_driver.refine(2)):
        drift_vals = verify_duality(
            u_smooth, mu, make_forward, make_backward, drv, [drv.steps]
        )
        levels.append(float(drift_vals.mean()))
    write_csv(run.emit("duality.csv"), ["dt", "mean_abs_drift"],
              [(tg.dt, levels[0]), (tg.dt / 4, levels[1])])
    run.check("duality-drift-decays", levels[1] < levels[0] + 1e-14,
              f"coarse={levels[0]:.4g} fine={levels[1]:.4g}")
    run.manifest.summary["duality_drift"] = levels

    run.stage("gronwall")
    from .gronwall import refute_flawed_inequality

    rep = refute_flawed_inequality()
    run.check("flawed-bound-refuted", rep.passed and rep.min_gap_after > 0)


_SCENARIOS = {
    "gen-drift": _run_gen_drift,
    "solve-pde": _run_solve_pde,
    "build-zvonkin": _run_build_zvonkin,
    "simulate-flow": _run_simulate_flow,
    "stability-sweep": _run_stability_sweep,
    "run-transport": _run_transport,
    "run-continuity": _run_continuity,
    "verify-duality": _run_verify_duality,
    "verify-gronwall": _run_verify_gronwall,
    "full-pipeline": _run_full_pipeline,
}


def run_scenario(cfg: dict) -> RunManifest:
    cfg = merge_config(cfg)
    name = cfg["scenario"]
    if name not in _SCENARIOS:
        raise ConfigInvalid("scenario", f"unknown scenario {name!r}")
    _apply_thread_override()
    run = Runner(cfg)
    (run.out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    try:
        _SCENARIOS[name](run)
    except ConfigInvalid:
        raise
    except Exception as exc:  # stage failures become failed assertions
        run.check("scenario-completed", False, f"{type(exc).__name__}: {exc}")
    else:
        run.check("scenario-completed", True)
    return run.finish()


def _apply_thread_override() -> None:
    n = os.environ.get("ROUGHFLOW_THREADS")
    if not n:
        return
    try:
        from threadpoolctl import threadpool_limits  # type: ignore

        threadpool_limits(int(n))
    except Exception:
        pass  # advisory only; numpy's pool stays at its default


def config_reference() -> str:
    lines = ["Run configuration (JSON). Defaults and meanings:", ""]

    def walk(table, path=""):
        for key, val in table.items():
            here = f"{path}.{key}" if path else key
            if isinstance(val, dict):
                lines.append(f"[{here}]")
                walk(val, here)
            else:
                doc = _FIELD_DOC.get(here, "")
                lines.append(f"  {here} = {json.dumps(val)}    # {doc}")

    walk(_DEFAULTS)
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="roughflow",
        description="Flow simulation and verification scenarios on the torus",
    )
    parser.add_argument("--json", action="store_true", help="print a JSON summary")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in _SCENARIOS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None)
        p.add_argument("--out", type=Path, default=None)
        p.add_argument("--seed", type=int, default=None)
        if name == "gen-drift":
            p.add_argument("--alpha", type=float, default=None)
            p.add_argument("--q", type=float, default=None)
            p.add_argument("--theta", type=float, default=None)
            p.add_argument("--J", type=int, default=None)
            p.add_argument("--drift-seed", type=int, default=None)
        if name == "build-zvonkin":
            p.add_argument("--drift", type=Path, default=None)
            p.add_argument("--direction", choices=["fwd", "bwd"], default=None)
            p.add_argument("--eta", type=float, default=None)
        if name == "verify-gronwall":
            p.add_argument("--counterexample", action="store_true")

    ref = sub.add_parser("config-reference")

    args = parser.parse_args(argv)
    if args.command == "config-reference":
        print(config_reference())
        return 0

    cfg = {}
    if args.config is not None:
        cfg = json.loads(Path(args.config).read_text())
    cfg["scenario"] = args.command
    if args.out is not None:
        cfg["output_dir"] = str(args.out)
    if args.seed is not None:
        cfg["seed"] = args.seed
    drift_over = dict(cfg.get("drift", {}))
    if args.command == "gen-drift":
        for src, dst in [
            ("alpha", "alpha"), ("q", "q"), ("theta", "theta"),
            ("J", "levels"), ("drift_seed", "seed"),
        ]:
            val = getattr(args, src)
            if val is not None:
                drift_over[dst] = val
        drift_over.setdefault("kind", "weierstrass")
    if args.command == "build-zvonkin":
        if args.drift is not None:
            drift_over.update({"kind": "file", "path": str(args.drift)})
        if args.direction is not None:
            cfg.setdefault("zvonkin", {})["direction"] = (
                "forward" if args.direction == "fwd" else "backward"
            )
        if args.eta is not None:
            cfg.setdefault("zvonkin", {})["eta"] = args.eta
    if args.command == "verify-gronwall" and args.counterexample:
        cfg.setdefault("gronwall", {})["counterexample"] = True
    if drift_over:
        cfg["drift"] = drift_over

    try:
        manifest = run_scenario(cfg)
    except ConfigInvalid as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.json:
        print(json.dumps({
            "passed": manifest.passed,
            "config_hash": manifest.config_hash,
            "assertions": manifest.assertions,
            "summary": manifest.summary,
        }, indent=2, default=float))
    else:
        for a in manifest.assertions:
            mark = "PASS" if a["passed"] else "FAIL"
            detail = f"  ({a['detail']})" if a["detail"] else ""
            print(f"[{mark}] {a['name']}{detail}")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
