"""Pipeline orchestration: mesh -> forward -> sensitivities -> FIM ->
optimize -> eigen-analysis, with a content-addressed tensor cache and
deterministic CSV/JSON outputs.

Stage timings are printed to stderr and kept on the in-memory report only;
serialized outputs carry no volatile data, so two runs of the same
configuration produce byte-identical files.
"""

from __future__ import annotations

import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem, fim, mesh_io, oed, shape
from .config import Config, config_hash, tensor_hash
from .errors import CacheMismatch
from .mesh import build_mesh


def _fmt(x):
    return repr(float(x))


@dataclass
class RunReport:
    case: str
    config_hash: str
    fim_cache: str                      # "hit", "miss", or "off"
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    oed_summary: dict = field(default_factory=dict)


class Pipeline:
    """Lazy stage evaluator for one configuration."""

    def __init__(self, config: Config, out_dir, cache_dir=None, log=True):
        self.config = config
        self.out_dir = Path(out_dir)
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.report = RunReport(case=config.case, config_hash=config_hash(config),
                                fim_cache="off" if cache_dir is None else "miss")
        self._log = log
        self._stages = {}

    def _info(self, message):
        if self._log:
            print(message, file=sys.stderr)

    def _stage(self, name, builder):
        if name not in self._stages:
            start = time.perf_counter()
            self._stages[name] = builder()
            elapsed = time.perf_counter() - start
            self.report.timings[name] = elapsed
            self._info(f"[{self.config.case}] {name}: {elapsed:.2f}s")
        return self._stages[name]

    # -- stages ----------------------------------------------------------

    def mesh(self):
        return self._stage("mesh", lambda: build_mesh(self.config.geometry))

    def heat_operators(self):
        phys = self.config.physics
        return self._stage("assemble", lambda: fem.assemble_heat(
            self.mesh(), kappa_bulk=phys.kappa_bulk, kappa_inc=phys.kappa_inc,
            u_d=phys.u_dirichlet))

    def forward(self):
        phys = self.config.physics
        return self._stage("forward", lambda: fem.solve_forward(
            self.heat_operators(), horizon=phys.horizon, n_steps=phys.n_steps))

    def curve(self):
        return self._stage("interface", lambda: shape.interface_from_mesh(self.mesh()))

    def basis_fields(self):
        def build():
            cfg = self.config.basis
            curve = self.curve()
            centers = None
            if cfg.center_mode == "farthest-point" and cfg.n_basis > 1:
                dist = shape.graph_geodesics(curve)
                picks = shape.farthest_point_centers(dist, cfg.n_basis - 1, seed=0)
                centers = sorted(float(curve.arc[i]) for i in picks)
            bumps = shape.gaussian_bump_basis(curve, cfg.n_basis,
                                              slope=cfg.slope, centers=centers)
            return [shape.extend_velocity(self.mesh(), b, lam=cfg.lame_lambda,
                                          mu=cfg.lame_mu) for b in bumps]
        return self._stage("extend", build)

    def gramian(self):
        return self._stage("gramian", lambda: shape.gramian(self.basis_fields()))

    def sensitivities(self):
        return self._stage("sensitivities", lambda: [
            fem.solve_sensitivity(self.heat_operators(), self.forward(), f)
            for f in self.basis_fields()])

    def tensor(self):
        def build():
            key = tensor_hash(self.config)
            cache_path = None
            if self.cache_dir is not None:
                self.cache_dir.mkdir(parents=True, exist_ok=True)
                cache_path = self.cache_dir / f"fim-{key}.tensor"
                if cache_path.exists():
                    try:
                        tensor = fim.load_tensor(cache_path, expect_hash=key)
                        self.report.fim_cache = "hit"
                        self._info(f"[{self.config.case}] fim: cache hit ({cache_path.name})")
                        return tensor
                    except CacheMismatch:
                        pass
            sensors = fim.build_sensor_models(self.mesh(),
                                              alpha0=self.config.noise.alpha0,
                                              alpha1=self.config.noise.alpha1)
            tensor = fim.elementary_fims(self.sensitivities(), sensors,
                                         self.config.instants(), self.gramian())
            if cache_path is not None:
                fim.save_tensor(tensor, cache_path, config_hash=key)
            return tensor
        return self._stage("fim", build)

    def result(self):
        def build():
            cfg = self.config.design
            tensor = self.tensor()
            if cfg.mode == "spatial":
                if cfg.optimize:
                    return oed.solve_spatial(
                        tensor, cfg.budget, tol_outer=cfg.tol_outer,
                        max_outer=cfg.max_outer, master_tol=cfg.master_tol,
                        master_max_iter=cfg.master_max_iter)
                spatial = fim.spatial_tensor(tensor)
                return oed.evaluate_design(oed.uniform_design(spatial, cfg.budget),
                                           spatial)
            if cfg.optimize:
                return oed.simplicial_decomposition(
                    tensor, cfg.budget, tol_outer=cfg.tol_outer,
                    max_outer=cfg.max_outer, master_tol=cfg.master_tol,
                    master_max_iter=cfg.master_max_iter)
            return oed.evaluate_design(oed.uniform_design(tensor, cfg.budget), tensor)
        return self._stage("optimize", build)

    # -- outputs ----------------------------------------------------------

    def _write(self, rel_path, writer):
        path = self.out_dir / rel_path
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(path)
        self.report.outputs.append(str(rel_path))
        return path

    def write_outputs(self):
        m = self.mesh()
        result = self.result()
        self._write("mesh.vtk", lambda p: mesh_io.write_vtk(m, {}, p))
        self._write("mesh.msh", lambda p: mesh_io.write_msh(m, p))
        self._write("weights.csv", lambda p: _write_weights_csv(p, result))
        self._write("eigenvalues.csv", lambda p: _write_eigenvalues_csv(p, result))
        self._write("history.csv", lambda p: _write_history_csv(p, result))
        self._write("oed_result.json", lambda p: _write_result_json(p, result))
        self._write("report.json", lambda p: _write_report_json(
            p, self.config, self.report, result))
        if self.config.write_fields:
            forward = self.forward()
            for step, t in enumerate(forward.times):
                self._write(f"fields/forward_{step:04d}.vtk",
                            lambda p, s=step: mesh_io.write_vtk(
                                m, {"u": forward.values[s]}, p,
                                title=f"t={_fmt(forward.times[s])}"))
            fields = self.basis_fields()
            for i, f in enumerate(fields):
                self._write(f"fields/basis_{i:02d}.vtk",
                            lambda p, v=f: mesh_io.write_vtk(
                                m, {"velocity": v.values}, p))
            # eigen-fields: basis combinations by descending eigenvalue
            order = np.argsort(result.eigenvalues)[::-1]
            stack = np.stack([f.values for f in fields])
            for rank, idx in enumerate(order):
                coeff = result.eigenvectors[:, idx]
                values = np.tensordot(coeff, stack, axes=1)
                self._write(f"fields/eigenfield_{rank:02d}.vtk",
                            lambda p, v=values: mesh_io.write_vtk(
                                m, {"velocity": v}, p))

    def run(self) -> RunReport:
        self.result()
        self.write_outputs()
        summary = result_summary(self.result())
        self.report.oed_summary = summary
        return self.report


def result_summary(result: oed.OEDResult):
    recip = np.sort(1.0 / result.eigenvalues)
    return {
        "phi": result.phi,
        "xi": result.xi,
        "max_violation": float(result.violations.max()),
        "converged": result.converged,
        "n_outer": result.n_outer,
        "n_vertices": result.n_vertices,
        "counts": result.counts,
        "budget": result.design.budget,
        "weight_sum": float(result.design.weights.sum()),
        "reciprocal_eigenvalues": [float(x) for x in recip],
        "provenance": result.design.provenance,
    }


def _write_weights_csv(path, result):
    design = result.design
    w = design.weights.reshape(design.n_obs, design.n_time)
    lines = ["sensor,instant,weight"]
    for k in range(design.n_obs):
        for li in range(design.n_time):
            lines.append(f"{k},{li},{_fmt(w[k, li])}")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _write_eigenvalues_csv(path, result):
    order = np.argsort(result.eigenvalues)[::-1]    # ascending 1/Lambda
    lines = ["rank,lambda,lambda_inv"]
    for rank, idx in enumerate(order, start=1):
        lam = result.eigenvalues[idx]
        lines.append(f"{rank},{_fmt(lam)},{_fmt(1.0 / lam)}")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _write_history_csv(path, result):
    lines = ["iteration,phi,weight_change_l1"]
    for i, phi in enumerate(result.phi_history):
        dw = result.dw_history[i - 1] if 0 < i <= len(result.dw_history) else math.nan
        dw_text = "" if math.isnan(dw) else _fmt(dw)
        lines.append(f"{i},{_fmt(phi)},{dw_text}")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _write_result_json(path, result):
    payload = result_summary(result)
    payload["weights"] = [float(x) for x in result.design.weights]
    payload["violations"] = [float(x) for x in result.violations]
    payload["eigenvalues"] = [float(x) for x in result.eigenvalues]
    payload["eigenvectors"] = [[float(x) for x in row] for row in result.eigenvectors]
    payload["phi_history"] = [float(x) for x in result.phi_history]
    payload["dw_history"] = [float(x) for x in result.dw_history]
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="ascii")


def _write_report_json(path, config, report, result):
    # cache status and stage timings stay off the serialized report so two
    # runs of one config produce byte-identical files
    from .config import canonical_dict
    payload = {
        "case": report.case,
        "config_hash": report.config_hash,
        "config": canonical_dict(config),
        "oed": result_summary(result),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="ascii")


def run_pipeline(config: Config, out_dir, cache_dir=None, log=True) -> RunReport:
    """Execute every stage and write all outputs under `out_dir`."""
    return Pipeline(config, out_dir, cache_dir=cache_dir, log=log).run()


def compare_cases(configs, out_dir, cache_dir=None, log=True):
    """Run several cases and tabulate criterion values and spectra.

    Cases must share the basis dimension; uniform-weight cases evaluate the
    criterion at equal weights of total budget mass without optimizing.
    Returns the table rows and writes compare.csv.
    """
    dims = {cfg.basis.n_basis for cfg in configs}
    if len(dims) > 1:
        raise ValueError(f"cases disagree on the basis dimension: {sorted(dims)}")
    out_dir = Path(out_dir)
    rows = []
    for cfg in configs:
        pipe = Pipeline(cfg, out_dir / cfg.case, cache_dir=cache_dir, log=log)
        pipe.run()
        result = pipe.result()
        recip = np.sort(1.0 / result.eigenvalues)
        rows.append((cfg.case, result.phi, recip))

    n_basis = configs[0].basis.n_basis
    header = "case,phi" + "".join(f",lambda_inv_{i + 1}" for i in range(n_basis))
    lines = [header]
    for case, phi, recip in rows:
        lines.append(case + "," + _fmt(phi) + ""
                     + "".join("," + _fmt(x) for x in recip))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "compare.csv").write_text("\n".join(lines) + "\n", encoding="ascii")
    return rows
