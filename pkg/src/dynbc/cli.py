"""Batch experiment driver.

``dynbc <subcommand> --config <path> [--out <dir>] [--seed <n>]``

Subcommands build one experiment pipeline each and write CSV/JSON reports
(plus SVG line plots where a curve is meaningful) into the output
directory.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure; on error a machine-readable JSON object is printed to stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import carleman as carl
from . import control as ctl
from . import dynamics as dyn
from . import eta as etamod
from . import geometry as geom
from . import operators as ops
from .config import RunConfig, parse_config
from .errors import ConfigError, DynbcError, GeometryError, NormDivergenceError, SolverError
from .reports import write_csv, write_json, write_svg_lines
from .rng import SplitMix64

SUBCOMMANDS = ("mesh-info", "verify-eta", "simulate", "hum", "observability",
               "carleman-sweep", "regularity", "cost-study")


def _meta(cfg: RunConfig) -> dict:
    meta = {"config_hash": cfg.config_hash()}
    for line in cfg.echo_lines():
        key, val = line.split(" = ", 1)
        meta[key] = val
    return meta


class _Pipeline:
    """Mesh, operator and seeded stream shared by the subcommands."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.spec = cfg.domain_spec()
        self.mesh = geom.build_mesh(self.spec)
        self.op = ops.assemble_operator(self.mesh, d=cfg["physics.d"],
                                        delta=cfg["physics.delta"])
        self.rng = SplitMix64(cfg["seed"])
        self.outdir = Path(cfg["output.dir"])
        self.formats = {f.strip() for f in cfg["output.formats"].split(",") if f.strip()}

    def want(self, fmt: str) -> bool:
        return fmt in self.formats

    @property
    def svg_desc(self) -> str:
        return f"config_hash={self.cfg.config_hash()}"

    def random_field(self) -> ops.CoupledField:
        return ops.CoupledField(bulk=self.rng.normals(self.mesh.n_nodes),
                                boundary=self.rng.normals(self.mesh.n_bdry))


def cmd_mesh_info(pl: _Pipeline, meta: dict) -> None:
    mesh, op = pl.mesh, pl.op
    header, rows = geom.export_mesh_csv(mesh)
    if pl.want("csv"):
        write_csv(pl.outdir / "mesh.csv", header, rows, meta)
        for name, block in (("generator_weighted", op.MA), ("lap_bulk", op.lap_bulk),
                            ("lap_surf", op.lap_surf), ("dnu", op.dnu)):
            cols, coo = ops.export_sparse_coo(block)
            write_csv(pl.outdir / f"block_{name}.csv", cols, coo, meta)
    if pl.want("json"):
        write_json(pl.outdir / "mesh_info.json", {
            "n_nodes": mesh.n_nodes,
            "n_boundary": mesh.n_bdry,
            "n_gamma": int(mesh.gamma_mask.sum()),
            "n_gamma0": int(mesh.gamma0_mask.sum()),
            "bulk_weight_sum": float(mesh.w_bulk.sum()),
            "surf_weight_sum": float(mesh.w_surf.sum()),
            "symmetry_defect": op.sym_defect,
        }, meta)


def cmd_verify_eta(pl: _Pipeline, meta: dict) -> None:
    eta = etamod.build_eta(pl.mesh, power=pl.cfg["eta.bump_power"])
    rep = etamod.verify_eta(eta, pl.mesh, tol=pl.cfg.eta_tol(pl.mesh))
    if pl.want("csv"):
        header, rows = geom.export_mesh_csv(pl.mesh, eta=eta.values)
        write_csv(pl.outdir / "eta.csv", header, rows, meta)
    if pl.want("json"):
        write_json(pl.outdir / "eta_report.json", {
            "passed": rep.passed, "c0": rep.c0,
            "min_interior": rep.min_interior, "min_grad": rep.min_grad,
            "max_normal_off_arc": rep.max_normal_off_arc,
            "max_value_off_arc": rep.max_value_off_arc,
            "max_tangential_off_arc": rep.max_tangential_off_arc,
            "tolerance": pl.cfg.eta_tol(pl.mesh),
            "failures": list(rep.failures),
        }, meta)
    if not rep.passed:
        raise SolverError("weight profile failed certification: "
                          + "; ".join(rep.failures))


def cmd_simulate(pl: _Pipeline, meta: dict) -> None:
    grid = pl.cfg.time_grid()
    if pl.cfg["simulate.y0"] == "zero":
        Y0 = ops.CoupledField.zero(pl.mesh)
    else:
        Y0 = pl.random_field()
    traj = dyn.solve_forward(pl.op, grid, Y0)
    cols, rows = dyn.export_trajectory_rows(pl.op, traj)
    norms = dyn.trajectory_norms(pl.op, traj)
    masses = dyn.trajectory_mass(pl.op, traj)
    if pl.want("csv"):
        write_csv(pl.outdir / "trajectory.csv", cols, rows, meta)
        if pl.cfg["output.dump_fields"] == "true":
            dump = [(k, int(node), traj.snapshots[k, node])
                    for k in range(grid.n_t + 1)
                    for node in range(pl.mesh.n_nodes)]
            write_csv(pl.outdir / "trajectory_fields.csv",
                      ["k", "node", "value"], dump, meta)
    if pl.want("json"):
        write_json(pl.outdir / "simulate.json", {
            "initial_norm": float(norms[0]),
            "final_norm": float(norms[-1]),
            "mass_drift": float(np.max(np.abs(masses - masses[0]))),
            "monotone_decay": bool(np.all(np.diff(norms) <= 1e-12 * max(norms[0], 1.0))),
        }, meta)
    if pl.want("svg"):
        write_svg_lines(pl.outdir / "decay.svg", traj.grid.times.tolist(),
                        [("state norm", norms.tolist())],
                        "Free decay", "t", "norm", description=pl.svg_desc)


def cmd_hum(pl: _Pipeline, meta: dict) -> None:
    grid = pl.cfg.time_grid()
    Y0 = pl.random_field()
    prob = ctl.HUMProblem(op=pl.op, grid=grid, Y0=Y0,
                          epsilon=pl.cfg["hum.epsilon"],
                          cg_tol=pl.cfg["hum.cg_tol"],
                          cg_max_iter=pl.cfg["hum.cg_max_iter"])
    res = ctl.solve_hum(prob)
    if not res.converged:
        raise SolverError(f"control CG did not converge: residual {res.cg_residual:.3e}")
    mesh = pl.mesh
    if pl.want("csv"):
        rows = []
        for k, t in enumerate(res.v_times):
            for j, node in enumerate(mesh.boundary_idx):
                if mesh.gamma0_mask[j]:
                    rows.append((t, int(node), res.v[k, j]))
        write_csv(pl.outdir / "control.csv", ["t", "node", "v"], rows, meta)
    if pl.want("json"):
        write_json(pl.outdir / "hum.json", {
            "final_norm": res.final_norm,
            "control_norm": res.control_norm,
            "uncontrolled_final_norm": res.uncontrolled_final_norm,
            "penalized_bound": res.penalized_bound,
            "dual_value": res.dual_value,
            "iterations": res.iterations,
            "cg_residual": res.cg_residual,
            "epsilon": res.epsilon,
            "T": grid.T,
            "mesh": {"kind": pl.spec.kind, "n_nodes": mesh.n_nodes},
        }, meta)
    if pl.want("svg"):
        norms = dyn.trajectory_norms(pl.op, res.trajectory)
        free = dyn.solve_forward(pl.op, grid, Y0)
        free_norms = dyn.trajectory_norms(pl.op, free)
        write_svg_lines(pl.outdir / "decay.svg", grid.times.tolist(),
                        [("controlled", norms.tolist()), ("free", free_norms.tolist())],
                        "Controlled vs free decay", "t", "norm", logy=True,
                        description=pl.svg_desc)
        arc = [j for j in range(mesh.n_bdry) if mesh.gamma0_mask[j]]
        picks = arc[:: max(1, len(arc) // 4)][:4]
        write_svg_lines(pl.outdir / "control.svg", res.v_times.tolist(),
                        [(f"node {int(mesh.boundary_idx[j])}", res.v[:, j].tolist())
                         for j in picks],
                        "Boundary control", "t", "v", description=pl.svg_desc)


def cmd_observability(pl: _Pipeline, meta: dict) -> None:
    results = []
    for T in pl.cfg.observability_T_values():
        grid = pl.cfg.time_grid(T=T)
        rep = ctl.observability_constant(
            pl.op, grid,
            power_tol=pl.cfg["observability.power_tol"],
            power_max_iter=pl.cfg["observability.power_max_iter"],
            cg_tol=pl.cfg["observability.cg_tol"],
            cg_max_iter=pl.cfg["observability.cg_max_iter"],
            rng=SplitMix64(pl.cfg["seed"]))
        results.append({"T": T, "K_est": rep.K_est, "iterations": rep.iterations,
                        "converged": rep.converged, "flag": rep.flag})
    if pl.want("json"):
        write_json(pl.outdir / "observability.json", {"sweep": results}, meta)
    if pl.want("csv"):
        write_csv(pl.outdir / "observability.csv",
                  ["T", "K_est", "iterations", "converged", "flag"],
                  [(r["T"], r["K_est"], r["iterations"], r["converged"], r["flag"])
                   for r in results], meta)
    if pl.want("svg") and len(results) > 1:
        write_svg_lines(pl.outdir / "k_vs_T.svg",
                        [r["T"] for r in results],
                        [("K_est", [r["K_est"] for r in results])],
                        "Observability constant vs horizon", "T", "K_est",
                        logy=True, description=pl.svg_desc)


def cmd_carleman_sweep(pl: _Pipeline, meta: dict) -> None:
    cfg = pl.cfg
    grid = cfg.time_grid()
    eta = etamod.build_eta(pl.mesh, power=cfg["eta.bump_power"])
    rep = etamod.verify_eta(eta, pl.mesh, tol=cfg.eta_tol(pl.mesh))
    if not rep.passed:
        raise SolverError("weight profile failed certification: " + "; ".join(rep.failures))
    s1 = carl.s_min(grid.T, cfg["carleman.C_for_s1"])
    s_values = [m * s1 for m in cfg["carleman.s_multipliers"]]
    reports, summaries = carl.carleman_sweep(
        pl.op, grid, eta, cfg["carleman.samples"], s_values,
        [cfg["carleman.lambda"]], pl.rng, s_floor=s1)
    if pl.want("csv"):
        cols, rows = carl.sweep_rows(reports)
        write_csv(pl.outdir / "carleman_sweep.csv", cols, rows, meta)
    if pl.want("json"):
        write_json(pl.outdir / "carleman_summary.json", {
            "s_floor": s1,
            "summaries": [{"s": sm.s, "lambda": sm.lam, "max_ratio": sm.max_ratio,
                           "max_log_ratio": sm.max_log_ratio,
                           "n_samples": sm.n_samples, "n_skipped": sm.n_skipped}
                          for sm in summaries],
        }, meta)
    if pl.want("svg") and len(summaries) > 1:
        write_svg_lines(pl.outdir / "ratio_vs_s.svg",
                        [sm.s for sm in summaries],
                        [("max log ratio", [sm.max_log_ratio for sm in summaries])],
                        "Fitted inequality constant vs s", "s", "log(lhs/rhs)",
                        description=pl.svg_desc)


def cmd_regularity(pl: _Pipeline, meta: dict) -> None:
    grid = pl.cfg.time_grid()
    mesh = pl.mesh
    n_t = grid.n_t
    rows = []
    for i in range(pl.cfg["regularity.samples"]):
        f = pl.rng.normals((n_t + 1) * mesh.n_nodes).reshape(n_t + 1, mesh.n_nodes)
        g = pl.rng.normals((n_t + 1) * mesh.n_bdry).reshape(n_t + 1, mesh.n_bdry)
        f[-1] = 0.0
        g[-1] = 0.0
        rep = dyn.regularity_ratios(pl.op, grid, f, g, with_r3=True)
        rows.append((i, rep.r1, rep.r2, rep.r3, rep.source_norm))
    if pl.want("csv"):
        write_csv(pl.outdir / "regularity.csv",
                  ["sample", "r1", "r2", "r3", "source_norm"], rows, meta)
    if pl.want("json"):
        write_json(pl.outdir / "regularity.json", {
            "max_r1": max(r[1] for r in rows) if rows else None,
            "max_r2": max(r[2] for r in rows) if rows else None,
            "max_r3": max(r[3] for r in rows) if rows else None,
            "samples": len(rows),
            "T": grid.T,
        }, meta)


def cmd_cost_study(pl: _Pipeline, meta: dict) -> None:
    cfg = pl.cfg
    grid = cfg.time_grid()
    s1 = carl.s_min(grid.T, cfg["carleman.C_for_s1"])
    rep = ctl.cost_ratio_study(pl.op, grid, cfg["hum.epsilon"], cfg["cost.samples"],
                               s1, pl.rng, cg_tol=cfg["hum.cg_tol"],
                               cg_max_iter=cfg["hum.cg_max_iter"])
    if pl.want("csv"):
        write_csv(pl.outdir / "cost_study.csv",
                  ["sample", "ratio", "output_norm", "data_norm", "final_norm",
                   "skipped", "note"],
                  [(s.index, s.ratio, s.output_norm, s.data_norm, s.final_norm,
                    s.skipped, s.note) for s in rep.samples], meta)
    if pl.want("json"):
        write_json(pl.outdir / "cost_study.json", {
            "max_ratio": rep.max_ratio,
            "n_skipped": rep.n_skipped,
            "n_samples": len(rep.samples),
            "s": s1,
        }, meta)


_DISPATCH = {
    "mesh-info": cmd_mesh_info,
    "verify-eta": cmd_verify_eta,
    "simulate": cmd_simulate,
    "hum": cmd_hum,
    "observability": cmd_observability,
    "carleman-sweep": cmd_carleman_sweep,
    "regularity": cmd_regularity,
    "cost-study": cmd_cost_study,
}


def run_subcommand(cmd: str, cfg: RunConfig) -> int:
    """Run one subcommand; returns the process exit code."""
    try:
        pl = _Pipeline(cfg)
        _DISPATCH[cmd](pl, _meta(cfg))
    except (ConfigError, GeometryError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return 2
    except (SolverError, NormDivergenceError, DynbcError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return 3
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dynbc",
        description="experiment driver for boundary control of bulk-surface heat systems")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="path to the key-value config file")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--seed", type=int, help="seed override")
    args = parser.parse_args(argv)

    overrides: dict[str, str] = {}
    if args.out is not None:
        overrides["output.dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(json.dumps({"error": "ConfigError", "message": str(exc)}))
        return 2
    return run_subcommand(args.subcommand, cfg)


if __name__ == "__main__":
    sys.exit(main())
