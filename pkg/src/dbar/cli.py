"""Batch front end: scenario configs, subcommands, artifact emission.

Usage:

    dbar <subcommand> [--config file.json] [--scenario name]
         [--out dir] [--seed u64] [--pgm] [key=value overrides]

Subcommands wrap the library modules one-to-one: `transform`, `factor`,
`zeros`, `removability`, `verify`, `counterexample`.  Each ships builtin
scenarios (listed with `--list`) so the canonical experiments run
without hand-written configs.  Artifacts are deterministic: report JSON
with sorted keys, DBF1 fields, CSV heatmaps (cell coordinates with
real/imag/abs columns), and optional 8-bit PGM previews.  Exit status is
0 for pass verdicts, 2 for fail verdicts, 1 for errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import factor as factor_mod
from . import removability as rem_mod
from . import transforms as tr_mod
from . import zeroset as zs_mod
from .errors import DbarError, SchemaError
from .field_io import field_roundtrip, read_field, write_field
from .grid import Field, OneForm, build_grid, holder_norm, lp_norm, mollify, \
    MollifierSpec, slice_field
from .removability import AlmostComplexStructure, PolarSetSpec

_CONFIG_SCHEMA = {
    "type": "object",
    "required": ["scenario"],
    "properties": {
        "scenario": {"type": "string", "minLength": 1},
        "module_op": {"type": "string"},
        "grid": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["disc", "rect", "polydisc"]},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "radii": {"type": "array", "items": {"type": "number"}},
                "center": {"type": "array"},
                "centers": {"type": "array"},
                "corners": {"type": "array"},
            },
        },
        "resolution": {"type": ["integer", "array"], "minimum": 8},
        "parameters": {"type": "object"},
        "inputs": {"type": "object"},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
    },
    "additionalProperties": False,
}


@dataclass
class ScenarioConfig:
    scenario: str
    grid: dict = None
    resolution: object = 128
    parameters: dict = dc_field(default_factory=dict)
    inputs: dict = dc_field(default_factory=dict)
    seed: int = 0
    out: str = "dbar-out"
    module_op: str = ""

    @classmethod
    def from_json(cls, payload: dict) -> "ScenarioConfig":
        import jsonschema

        try:
            jsonschema.validate(payload, _CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise SchemaError(f"config field '{loc}': {exc.message}")
        return cls(**payload)


# ---------------------------------------------------------------------------
# artifact writers


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1,
                               default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


def _write_heatmap_csv(path: Path, f: Field) -> None:
    """Cell table: coordinates, real, imag, abs; masked cells only."""
    g = f.grid
    zs = g.coords()
    cols = [zs[v][f.mask] for v in range(g.nvars)]
    vals = f.values[f.mask]
    with path.open("w") as fh:
        heads = []
        for v in range(g.nvars):
            heads += [f"re_z{v + 1}", f"im_z{v + 1}"]
        fh.write(",".join(heads + ["re_f", "im_f", "abs_f"]) + "\n")
        for idx in range(vals.size):
            row = []
            for v in range(g.nvars):
                row += [f"{cols[v][idx].real:.17g}", f"{cols[v][idx].imag:.17g}"]
            w = vals.flat[idx] if vals.ndim > 1 else vals[idx]
            row += [f"{w.real:.17g}", f"{w.imag:.17g}", f"{abs(w):.17g}"]
            fh.write(",".join(row) + "\n")


def _write_pgm(path: Path, f: Field) -> None:
    mag = np.abs(f.values)
    if mag.ndim != 2:
        return
    top = mag.max() or 1.0
    img = np.clip(mag / top * 255.0, 0, 255).astype(np.uint8)
    with path.open("wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.T.tobytes())


# ---------------------------------------------------------------------------
# builtin scenarios


def _bump(z, center, rho):
    s = np.abs(z - center) ** 2 / rho**2
    out = np.zeros_like(s)
    inside = s < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside]))
    return out


def _seeded_smooth(grid, seed, rho=0.7):
    rng = np.random.default_rng(seed)
    z = grid.coords()[0]
    c = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    return Field(grid, _bump(z, 0, rho) * (c[0] + c[1] * z + c[2] * np.conj(z)
                                           + c[3] * z * np.conj(z)))


def _scn_disc_potential(cfg, outdir):
    """Transform of the unit-disc indicator against its closed form."""
    res = int(cfg.parameters.get("resolution", cfg.resolution or 256))
    g = build_grid(cfg.grid or {"kind": "disc", "center": [0, 0], "radius": 1.0}, res)
    f = Field.from_function(g, lambda z: np.ones_like(z))
    tf = tr_mod.cauchy_transform(f, expand=2)
    zt = tf.grid.coords()[0]
    truth = np.where(np.abs(zt) < 1, np.conj(zt),
                     1.0 / np.where(zt == 0, 1, zt))
    ring = np.abs(np.abs(zt) - 1.0) < 4 * g.spacing[0]
    err = np.abs(tf.values - truth)
    err[ring] = 0.0
    max_err = float(err.max())
    write_field(outdir / "transform.dbf1", tf)
    _write_heatmap_csv(outdir / "transform.csv", tf)
    passed = max_err <= 0.01
    return {"scenario": "disc-potential", "max_error_off_ring": max_err,
            "tolerance": 0.01, "passed": passed}, passed


def _scn_estimates(cfg, outdir):
    p = cfg.parameters.get("p", 4)
    p = np.inf if p in ("inf", "Infinity") else float(p)
    res = int(cfg.parameters.get("resolution", 192))
    g = build_grid(cfg.grid or {"kind": "disc", "center": [0, 0], "radius": 0.5}, res)
    f = Field.from_function(g, lambda z: np.ones_like(z))
    deltas = cfg.parameters.get("deltas")
    rep = tr_mod.verify_cauchy_estimates(f, p, deltas=deltas)
    payload = {
        "scenario": "estimates", "p": "inf" if p == np.inf else p,
        "deltas": rep.deltas, "measured_sup": rep.measured_sup,
        "fitted_exponent": rep.fitted_exponent,
        "fitted_constant": rep.fitted_constant,
        "holder_exponent_check": rep.holder_exponent_check,
        "profile_rel_error": rep.profile_rel_error,
        "degenerate": rep.degenerate,
    }
    if p == np.inf:
        passed = rep.profile_rel_error <= 0.10
    else:
        passed = abs(rep.fitted_exponent - (1 - 2 / p)) <= 0.1
    payload["passed"] = passed
    return payload, passed


def _scn_beltrami(cfg, outdir):
    res = int(cfg.parameters.get("resolution", 192))
    c0 = float(cfg.parameters.get("c0", 0.3))
    g = build_grid(cfg.grid or {"kind": "disc", "center": [0, 0], "radius": 1.0}, res)
    z = g.coords()[0]
    gg = _seeded_smooth(g, cfg.seed + 11, rho=0.5)
    alpha = Field(g, c0 * np.ones_like(z))
    sol = tr_mod.beltrami_solve(tr_mod.BeltramiProblem(alpha=alpha, g=gg))
    write_field(outdir / "u_zbar.dbf1", sol.u_zbar)
    passed = sol.ratio <= c0 * 1.05
    return {"scenario": "beltrami", "c0": c0, "iterations": sol.iterations,
            "contraction_ratio": sol.ratio, "passed": passed}, passed


def _scn_grid_norms(cfg, outdir):
    res = int(cfg.parameters.get("resolution", 129))
    g = build_grid(cfg.grid or {"kind": "disc", "center": [0, 0], "radius": 1.0}, res)
    f = _seeded_smooth(g, cfg.seed + 3)
    report = {
        "scenario": "grid-norms",
        "l2": lp_norm(f, 2),
        "l4": lp_norm(f, 4),
        "sup": lp_norm(f, np.inf),
        "holder_half": holder_norm(f, 0.5),
    }
    mf = mollify(f, MollifierSpec(delta=6 * max(g.spacing)))
    report["mollified_l2"] = lp_norm(Field(g, mf.values, mask=mf.mask), 2)
    write_field(outdir / "field.dbf1", f)
    _write_heatmap_csv(outdir / "field.csv", f)
    report["roundtrip"] = field_roundtrip(outdir / "field.dbf1")
    passed = bool(report["roundtrip"]) and report["mollified_l2"] <= report["l2"] + 1e-12
    report["passed"] = passed
    return report, passed


def _scn_scalar_factor(cfg, outdir):
    res = int(cfg.parameters.get("resolution", 192))
    g = build_grid(cfg.grid or {"kind": "disc", "center": [0, 0], "radius": 1.0}, res)
    z = g.coords()[0]
    f = Field(g, np.exp(np.conj(z)) * (z - 0.2))
    A = OneForm((Field(g, np.ones_like(z)),))
    params = factor_mod.ContractionParams.calibrated(g, 4.0, M=lp_norm(A.components[0], 4))
    u, F = factor_mod.integrating_factor_scalar(f, A, params)
    form = tr_mod.dbar(F)
    from scipy import ndimage

    dist = ndimage.distance_transform_edt(F.mask, sampling=g.spacing)
    core = dist > 3 * max(g.spacing)
    resid = float(np.abs(form.components[0].values)[core].max())
    scale = float(np.abs(F.values).max())
    write_field(outdir / "factored.dbf1", F)
    zr = factor_mod.check_isolated_zeros(f, F)
    passed = resid <= 0.02 * scale and len(zr.zero_locations) == 1
    return {"scenario": "scalar-factor", "dbar_residual": resid,
            "scale": scale, "zeros": zr.zero_locations,
            "isolated": zr.isolated, "passed": passed}, passed


def _scn_matrix_contraction(cfg, outdir):
    res = int(cfg.parameters.get("resolution", 160))
    g = build_grid(cfg.grid or {"kind": "disc", "center": [0, 0], "radius": 0.5}, res)
    z = g.coords()[0]
    A = Field(g, 0.1 * np.ones_like(z))
    params = factor_mod.ContractionParams.calibrated(g, 4.0, M=lp_norm(A, 4))
    f = Field(g, np.exp(0.1 * np.conj(z)) * (z - 0.1))
    out = factor_mod.integrating_factor_matrix(f, A, params)
    passed = (out.fixed_point_residual <= 1e-8
              and float(np.abs(out.g.values).max()) <= out.sup_bound)
    return {"scenario": "matrix-contraction",
            "iterations": out.iterations,
            "fixed_point_residual": out.fixed_point_residual,
            "ratio": out.ratio, "sup_g": float(np.abs(out.g.values).max()),
            "sup_bound": out.sup_bound, "passed": passed}, passed


def _scn_counterexample(cfg, outdir):
    K = int(cfg.parameters.get("K", 50))
    p_flag = cfg.parameters.get("p")
    res = int(cfg.parameters.get("resolution", 2049))
    g = build_grid(cfg.grid or {"kind": "disc", "center": [0, 0], "radius": 0.5}, res)
    f, a, table = factor_mod.counterexample_field(K, g)
    with (outdir / "norm_table.csv").open("w") as fh:
        fh.write("p," + ",".join(f"rho_2^{int(np.log2(r))}" for r in table.rhos) + "\n")
        for i, p in enumerate(table.ps):
            fh.write(f"{p}," + ",".join(f"{x:.17g}" for x in table.norms[i]) + "\n")
    report = {
        "scenario": "counterexample", "K": K,
        "rhos": table.rhos,
        "norms": {str(p): list(table.norms[i]) for i, p in enumerate(table.ps)},
        "p2_cauchy": table.cauchy_in_rho(2),
        "p3_monotone_growth": table.monotone_growth(3),
    }
    passed = report["p2_cauchy"] and report["p3_monotone_growth"]
    if p_flag is not None:
        passed = table.monotone_growth(float(p_flag)) if float(p_flag) > 2 \
            else table.cauchy_in_rho(float(p_flag))
    zr = factor_mod.check_isolated_zeros(f, f)
    report["accumulation_flag"] = zr.accumulation_flag
    passed = passed and zr.accumulation_flag
    report["passed"] = passed
    return report, passed


def _scn_zeros_track(cfg, outdir):
    res = cfg.parameters.get("resolution", [20, 160])
    if np.isscalar(res):
        res = [int(res)] * 2
    g = build_grid(cfg.grid or {"kind": "polydisc", "centers": [[0, 0], [0, 0]],
                                "radii": [0.28, 1.25]}, res)
    f = Field.from_function(g, lambda z1, z2: np.exp(np.conj(z2)) * (z2**2 - z1))
    chart = zs_mod.track_zero_graphs(
        f, eps0=float(cfg.parameters.get("eps0", 0.8)),
        param_radius=float(cfg.parameters.get("param_radius", 0.25)))
    (outdir / "chart.json").write_text(chart.to_json() + "\n")
    h = zs_mod.discriminant_h(chart)
    wres = zs_mod.weierstrass_reconstruct(chart)
    _write_heatmap_csv(outdir / "discriminant.csv", h)
    zc = chart.param_centers
    h_err = float(np.abs(h.values - (-4 * zc))[chart.param_mask].max())
    e2_err = float(np.abs(wres.coefficients[1].values - (-zc))[wres.valid_mask].max())
    passed = chart.n_roots == 2 and h_err <= 1e-6 and e2_err <= 1e-6
    return {"scenario": "zeros-track", "n_roots": chart.n_roots,
            "slices": int(chart.param_mask.sum()),
            "discriminant_error": h_err, "e2_error": e2_err,
            "dbar_residuals": wres.dbar_residuals, "passed": passed}, passed


def _scn_vanishing_order(cfg, outdir):
    # odd resolutions so the probed point is a lattice center
    res = cfg.parameters.get("resolution", [17, 97])
    if np.isscalar(res):
        res = [int(res)] * 2
    g = build_grid(cfg.grid or {"kind": "polydisc", "centers": [[0, 0], [0, 0]],
                                "radii": [1.0, 1.0]}, res)
    f = Field.from_function(g, lambda z1, z2: z2**2 - z1)
    vo = zs_mod.vanishing_order(f, (0, 0))
    passed = vo.n_p == 1.0
    return {"scenario": "vanishing-order",
            "per_axis": [o if np.isfinite(o) else "inf" for o in vo.per_axis_order],
            "n_p": vo.n_p if np.isfinite(vo.n_p) else "inf",
            "passed": passed}, passed


def _scn_removability(cfg, outdir):
    res = int(cfg.parameters.get("resolution", 128))
    g = build_grid(cfg.grid or {"kind": "disc", "center": [0, 0], "radius": 1.0}, res)
    z = g.coords()[0]
    witness = cfg.parameters.get("witness", "manufactured")
    if witness == "zbar":
        u = Field(g, np.conj(z))
        J = AlmostComplexStructure(
            Q=lambda w: np.zeros(w.shape[:-1] + (1, 1), complex), n=1)
        expected = "not-removable"
    else:
        c = 0.7
        F = z + 0.2 * z**2
        u = Field(g, np.stack([F + 0.1 * c * np.conj(F), np.full_like(z, c)], axis=-1))

        def Q2(w):
            q = np.zeros(w.shape[:-1] + (2, 2), complex)
            q[..., 0, 0] = 0.1 * w[..., 1]
            q[..., 1, 1] = 0.1 * w[..., 1]
            return q

        J = AlmostComplexStructure(Q=Q2, n=2, lipschitz=0.1)
        expected = "removable"
    pts = cfg.parameters.get("polar_points", [[0.0, 0.0], [0.3, 0.0]])
    E = PolarSetSpec.from_points(g, [complex(x, y) for x, y in pts])
    rep = rem_mod.removability_pipeline(u, E, J)
    passed = rep.verdict == expected
    return {"scenario": "removability", "witness": witness,
            "verdict": rep.verdict, "expected": expected,
            "final_residual": rep.final_residual,
            "stencil_tol": rep.stencil_tol,
            "violations": rep.laplacian_positivity_violations,
            "gradient_l2": rep.gradient_l2,
            "contraction_ratio": rep.contraction_ratio,
            "passed": passed}, passed


def _scn_field_roundtrip(cfg, outdir):
    path = cfg.inputs.get("field")
    if path is None:
        g = build_grid({"kind": "disc", "center": [0, 0], "radius": 1.0}, 64)
        f = _seeded_smooth(g, cfg.seed + 1)
        path = outdir / "roundtrip.dbf1"
        write_field(path, f)
    ok = field_roundtrip(path)
    return {"scenario": "field-roundtrip", "path": str(path), "passed": ok}, ok


_SCENARIOS = {
    "transform": {"disc-potential": _scn_disc_potential,
                  "estimates": _scn_estimates,
                  "beltrami": _scn_beltrami},
    "factor": {"scalar-factor": _scn_scalar_factor,
               "matrix-contraction": _scn_matrix_contraction},
    "zeros": {"zeros-track": _scn_zeros_track,
              "vanishing-order": _scn_vanishing_order},
    "removability": {"removability": _scn_removability},
    "verify": {"grid-norms": _scn_grid_norms,
               "estimates": _scn_estimates,
               "field-roundtrip": _scn_field_roundtrip},
    "counterexample": {"counterexample": _scn_counterexample},
}

_DEFAULTS = {
    "transform": "disc-potential",
    "factor": "scalar-factor",
    "zeros": "zeros-track",
    "removability": "removability",
    "verify": "grid-norms",
    "counterexample": "counterexample",
}


def run_scenario(subcommand: str, cfg: ScenarioConfig, outdir: Path) -> int:
    group = _SCENARIOS[subcommand]
    if cfg.scenario not in group:
        raise SchemaError(
            f"unknown scenario {cfg.scenario!r} for {subcommand}; "
            f"choices: {sorted(group)}"
        )
    outdir.mkdir(parents=True, exist_ok=True)
    report, passed = group[cfg.scenario](cfg, outdir)
    report["seed"] = cfg.seed
    _write_json(outdir / "report.json", report)
    return 0 if passed else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dbar",
        description="d-bar calculus scenarios: transforms, factors, zero sets, "
                    "removability checks",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _SCENARIOS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, default=None)
        sp.add_argument("--scenario", default=None)
        sp.add_argument("--out", type=Path, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--pgm", action="store_true")
        sp.add_argument("--list", action="store_true", help="list scenarios")
        sp.add_argument("overrides", nargs="*",
                        help="parameter overrides as key=value")
    args = parser.parse_args(argv)
    if args.list:
        for s in sorted(_SCENARIOS[args.subcommand]):
            print(s)
        return 0
    try:
        if args.config is not None:
            try:
                payload = json.loads(args.config.read_text())
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{args.config}:{exc.lineno}:{exc.colno}: {exc.msg}")
            cfg = ScenarioConfig.from_json(payload)
        else:
            cfg = ScenarioConfig(scenario=_DEFAULTS[args.subcommand])
        if args.scenario:
            cfg.scenario = args.scenario
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = str(args.out)
        for ov in args.overrides:
            if "=" not in ov:
                raise SchemaError(f"override {ov!r} is not key=value")
            k, v = ov.split("=", 1)
            try:
                cfg.parameters[k] = json.loads(v)
            except json.JSONDecodeError:
                cfg.parameters[k] = v
        outdir = Path(cfg.out)
        code = run_scenario(args.subcommand, cfg, outdir)
        if args.pgm:
            for p in sorted(outdir.glob("*.dbf1")):
                f = read_field(p)
                if len(f.grid.shape) == 2 and f.is_scalar:
                    _write_pgm(p.with_suffix(".pgm"), f)
        return code
    except SchemaError as exc:
        print(f"dbar: config error: {exc}", file=sys.stderr)
        return 1
    except DbarError as exc:
        print(f"dbar: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
