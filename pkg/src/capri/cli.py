"""Command-line front door: ``capri <command> ...``.

Every command is first turned into a JobConfig document and validated
against the shipped schema, so ``capri run job.json`` and the flag form
behave identically.  Outputs are assembled in memory and written only after
the job finishes; a rejected config or scenario leaves no files behind.

Exit codes: 0 success, 1 a check failed, 2 invalid config or scenario,
3 a computation did not converge (diagnostics are written next to the output).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import jsonschema
from referencing import Registry, Resource

from . import inradius as ir
from . import solver
from . import verify as vf
from .analytic import AnalyticError, ConstantsContext, constants_table
from .shapes import (ShapeError, SvgOverlay, UnderResolvedError, rasterize, shape_from_dict,
                     to_pgm, to_svg)

EXIT_OK, EXIT_FAIL, EXIT_SCHEMA, EXIT_CONVERGENCE = 0, 1, 2, 3
SCHEMA_FILES = ("shape_spec.json", "scenario.json", "job_config.json", "verification_record.json")


class ConfigError(ValueError):
    """Schema violation; ``location`` is a JSON path into the offending document."""

    def __init__(self, message: str, location: str = "$", source: str = "config") -> None:
        super().__init__(message)
        self.location = location
        self.source = source


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict[str, Any]) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# Schemas
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict[str, Any]:
    return json.loads(resources.files("capri").joinpath("schemas", name).read_text())


@lru_cache(maxsize=None)
def _registry() -> Registry:
    pairs = []
    for name in SCHEMA_FILES:
        res = Resource.from_contents(load_schema(name))
        pairs += [(name, res), (load_schema(name)["$id"], res)]
    return Registry().with_resources(pairs)


def validate(doc: Any, schema_name: str, source: str) -> None:
    """Raise :class:`ConfigError` at the first schema violation (deepest path first)."""
    validator = jsonschema.Draft202012Validator(load_schema(schema_name), registry=_registry())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (-len(e.absolute_path), e.json_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(err.message, err.json_path, source)


def load_scenario_file(path: str | os.PathLike[str]) -> list[vf.Scenario]:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}", "$", str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (line {exc.lineno})", "$", str(path)) from exc
    validate(doc, "scenario.json", str(path))
    try:
        scenarios = vf.load_scenarios(doc)
        for i, sc in enumerate(scenarios):
            shape_from_dict(sc.shape)
            if sc.sigma is not None:
                shape_from_dict(sc.sigma)
            if len(sc.bbox[0]) != len(sc.bbox[1]):
                raise ConfigError("bbox corners differ in dimension", f"$.scenarios[{i}].bbox", str(path))
    except (ShapeError, vf.VerificationError) as exc:
        raise ConfigError(str(exc), "$.scenarios", str(path)) from exc
    return scenarios


# ---------------------------------------------------------------------------
# Jobs
# ---------------------------------------------------------------------------


def _scenarios(cfg: dict[str, Any]) -> list[vf.Scenario]:
    scs = load_scenario_file(cfg["scenario"])
    if "spacing" in cfg:
        scs = [replace(sc, spacing=cfg["spacing"], coarse_spacing=cfg["spacing"]) for sc in scs]
    if "p" in cfg:
        scs = [replace(sc, p=float(cfg["p"])) for sc in scs]
    return scs


def _omega(sc: vf.Scenario, coarse: bool = False):
    return rasterize(shape_from_dict(sc.shape), sc.coarse_spacing if coarse else sc.spacing, sc.bbox)


def _check(res: solver.CapacityResult, what: str) -> solver.CapacityResult:
    if not res.converged:
        raise ConvergenceError(f"{what} did not converge", _diag(res))
    return res


def _diag(res: solver.CapacityResult | None) -> dict[str, Any]:
    if res is None:
        return {}
    return {"value": res.value, "residual": res.residual, "iterations": res.iterations,
            "converged": res.converged, "method": res.method, "history": list(res.history),
            "notes": list(res.notes)}


def _result_dict(res: solver.CapacityResult) -> dict[str, Any]:
    out = {"value": res.value, "residual": res.residual, "iterations": res.iterations,
           "converged": res.converged, "method": res.method, "p": res.p,
           "bracket": list(res.bracket) if res.bracket else None, "notes": list(res.notes)}
    if res.parts:
        out["parts"] = {k: v for k, v in res.parts}
    return out


def job_constants(cfg: dict[str, Any]) -> dict[str, Any]:
    ctx = ConstantsContext(int(cfg["N"]), float(cfg["p"]), cfg.get("constants", {}).get("sobolev"))
    return constants_table(ctx)


def job_capacity(cfg: dict[str, Any]) -> dict[str, Any]:
    kind = cfg.get("kind", "relative")
    rows = []
    for sc in _scenarios(cfg):
        omega = _omega(sc)
        sigma = rasterize(shape_from_dict(sc.sigma), sc.spacing, sc.bbox) if sc.sigma else omega
        if kind == "relative":
            if sc.sigma is None:
                raise ConfigError("relative capacity needs a 'sigma' shape", "$.scenarios", cfg["scenario"])
            res = solver.relative_capacity(sigma, omega, sc.p)
        elif kind == "absolute":
            c = ConstantsContext(sc.dim, sc.p, cfg.get("constants", {}).get("sobolev"))
            res = solver.absolute_capacity(sigma, sc.p, ctx=c)
        elif kind == "inhomogeneous":
            res = solver.inhomogeneous_capacity(sigma, sc.p)
        else:
            raise ConfigError(f"capacity kind must be relative, absolute or inhomogeneous, not {kind!r}",
                              "$.kind")
        rows.append({"scenario": sc.name, "kind": kind, "spacing": sc.spacing,
                     **_result_dict(_check(res, f"{kind} capacity on {sc.name}"))})
    return {"results": rows}


def job_poincare(cfg: dict[str, Any]) -> dict[str, Any]:
    rows = []
    for sc in _scenarios(cfg):
        q = float(cfg.get("q", sc.q if sc.q is not None else sc.p))
        res = solver.poincare_constant(_omega(sc), sc.p, q)
        rows.append({"scenario": sc.name, "q": q, "spacing": sc.spacing,
                     **_result_dict(_check(res, f"Poincare constant on {sc.name}"))})
    return {"results": rows}


def _search(sc: vf.Scenario, cfg: dict[str, Any]) -> list[ir.InradiusEstimate]:
    omega = _omega(sc, coarse=True)
    kind = cfg.get("kind", "relative")
    if kind == "gallagher":
        return [ir.gallagher_inradius(omega, sc.p)]
    gammas = cfg.get("gamma") or [sc.gamma if sc.gamma is not None else 0.5]
    search_kind = {"relative": "relative", "absolute": "absolute", "body": "body"}.get(kind)
    if search_kind is None:
        raise ConfigError(f"inradius kind must be relative, absolute, body or gallagher, not {kind!r}",
                          "$.kind")
    res = ir.InradiusSearch(omega, sc.p, gammas, kind=search_kind).run()
    return [res[g] for g in sorted(res, reverse=True)]


def job_inradius(cfg: dict[str, Any]) -> dict[str, Any]:
    rows = []
    for sc in _scenarios(cfg):
        for est in _search(sc, cfg):
            rows.append({"scenario": sc.name, **est.to_dict(with_trace=cfg.get("format") != "csv")})
    return {"results": rows}


def job_indices(cfg: dict[str, Any]) -> dict[str, Any]:
    rows = []
    for sc in _scenarios(cfg):
        omega = _omega(sc)
        r0 = sc.r0 if sc.r0 is not None else vf._Context(sc).r_omega()
        rep = ir.density_indices(omega, r0, sc.t)
        rows.append({"scenario": sc.name, "spacing": sc.spacing, **rep.to_dict()})
    return {"results": rows}


def render_svg(sc: vf.Scenario, est: ir.InradiusEstimate) -> str:
    """Omega, the arg-max ball and the centers tested at the accepted radius.

    Centers whose ratio stayed within gamma are green, the others red.
    """
    omega = _omega(sc, coarse=True)
    overlay = SvgOverlay()
    gamma = est.gamma if est.gamma is not None else 0.0
    for t in est.trace:
        if abs(t.radius - est.value) < 1e-12 and len(t.center) == 2:
            ok = t.ratio <= gamma
            overlay.points.append((tuple(t.center), "#2ca02c" if ok else "#d62728"))
    if est.center is not None:
        overlay.circles.append((tuple(est.center), est.value, "#1f77b4"))
    return to_svg(omega, overlay)


def job_render(cfg: dict[str, Any]) -> dict[str, bytes]:
    fmt = cfg.get("format", "svg")
    out: dict[str, bytes] = {}
    scs = _scenarios(cfg)
    for sc in scs:
        if fmt == "pgm":
            data = to_pgm(_omega(sc))
        elif fmt == "svg":
            est = _search(sc, {**cfg, "kind": cfg.get("kind", "relative")})[-1]
            data = render_svg(sc, est).encode()
        else:
            raise ConfigError("render format must be svg or pgm", "$.format")
        out[sc.name] = data
    return out


def job_verify(cfg: dict[str, Any]) -> vf.SuiteReport:
    scs = vf.default_scenarios() if cfg.get("suite") == "default" else load_scenario_file(cfg["scenario"])
    if "spacing" in cfg:
        scs = [replace(sc, spacing=cfg["spacing"]) for sc in scs]
    select = cfg.get("select")
    if select:
        unknown = [c for c in select if c not in vf.REGISTRY]
        if unknown:
            raise ConfigError(f"unknown check ids {unknown}", "$.select")
    return vf.run_suite(select or None, scs, float(cfg.get("slack", vf.DEFAULT_SLACK)),
                        cfg.get("constants"), workers=int(cfg.get("parallelism", 1)))


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _json(obj: Any) -> bytes:
    return (json.dumps(vf._clean(obj), indent=2, sort_keys=True) + "\n").encode()


def _csv(rows: Sequence[dict[str, Any]]) -> bytes:
    flat = [{k: v for k, v in r.items() if not isinstance(v, (dict, list))} for r in rows]
    keys = sorted({k for r in flat for k in r})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in flat:
        w.writerow({k: vf._clean(v) for k, v in r.items()})
    return buf.getvalue().encode()


def _write_all(files: dict[Path, bytes]) -> None:
    """Write every output through a temporary file and an atomic rename."""
    for path, data in files.items():
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_suffix(suffix) if path.suffix else path.with_name(path.name + suffix)


def execute(cfg: dict[str, Any], stdout=None) -> int:
    """Run one validated-or-not JobConfig; returns the exit status."""
    stdout = stdout if stdout is not None else sys.stdout
    validate(cfg, "job_config.json", "config")
    cmd = cfg["command"]
    out_path = Path(cfg["output"]) if "output" in cfg else None
    fmt = cfg.get("format", "json")
    files: dict[Path, bytes] = {}
    status = EXIT_OK
    try:
        if cmd == "verify":
            report = job_verify(cfg)
            table = report.to_table()
            stdout.write(table)
            if out_path is not None:
                files[out_path] = report.to_json().encode()
                files[_sibling(out_path, ".csv")] = report.to_csv().encode()
                files[_sibling(out_path, ".txt")] = table.encode()
            if report.any_indeterminate:
                status = EXIT_CONVERGENCE
                diag = [r.to_dict() for r in report.records if r.status == "indeterminate"]
                dpath = Path(cfg.get("diagnostics") or _sibling(out_path or Path("capri"), ".diagnostics.json"))
                files[dpath] = _json({"indeterminate": diag})
                stdout.write(f"indeterminate records; diagnostics: {dpath}\n")
            elif not report.all_passed:
                status = EXIT_FAIL
        elif cmd == "render":
            if out_path is None:
                raise ConfigError("render needs an output path", "$.output")
            images = job_render(cfg)
            if len(images) == 1:
                files[out_path] = next(iter(images.values()))
            else:
                for name, data in images.items():
                    files[out_path.with_name(f"{out_path.stem}_{name}{out_path.suffix}")] = data
        else:
            result = {"constants": job_constants, "capacity": job_capacity, "poincare": job_poincare,
                      "inradius": job_inradius, "indices": job_indices}[cmd](cfg)
            doc = {"schema": 1, "command": cmd, **result}
            if fmt == "csv":
                data = _csv(result.get("results", [result]))
            elif fmt == "json":
                data = _json(doc)
            else:
                raise ConfigError(f"format {fmt!r} is not available for {cmd}", "$.format")
            if out_path is None:
                stdout.write(data.decode())
            else:
                files[out_path] = data
    except ConvergenceError as exc:
        dpath = Path(cfg.get("diagnostics") or _sibling(out_path or Path("capri"), ".diagnostics.json"))
        _write_all({dpath: _json({"error": str(exc), **exc.diagnostics})})
        print(f"capri: {exc}; diagnostics: {dpath}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except solver.SolverError as exc:
        dpath = Path(cfg.get("diagnostics") or _sibling(out_path or Path("capri"), ".diagnostics.json"))
        _write_all({dpath: _json({"error": str(exc), **_diag(exc.result)})})
        print(f"capri: {exc}; diagnostics: {dpath}", file=sys.stderr)
        return EXIT_CONVERGENCE
    _write_all(files)
    return status


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, scenario: bool = True) -> None:
    if scenario:
        p.add_argument("--scenario", help="scenario document (JSON, schema 1)")
        p.add_argument("--spacing", type=float, help="override the grid spacing")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("json", "csv", "svg", "pgm"))
    p.add_argument("--sobolev", type=float, help="Sobolev constant S_{N,p} override")
    p.add_argument("--sigma-Np", type=float, dest="sigma_Np", help="external constant sigma_{N,p}")
    p.add_argument("--sigma-Npq", type=float, dest="sigma_Npq", help="external constant sigma_{N,p,q}")
    p.add_argument("--C-Npg", type=float, dest="C_Npg", help="external constant C_{N,p,gamma}")
    p.add_argument("--diagnostics", help="where to write diagnostics on non-convergence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capri", description="Capacities, Poincare constants and "
                                     "capacitary inradii on grids, with an inequality harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constants", help="closed-form constants for (N, p)")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    _common(p, scenario=False)

    p = sub.add_parser("capacity", help="relative, absolute or inhomogeneous capacity")
    _common(p)
    p.add_argument("--kind", choices=("relative", "absolute", "inhomogeneous"), default="relative")
    p.add_argument("--p", type=float)

    p = sub.add_parser("poincare", help="sharp Poincare-Sobolev constant lambda_{p,q}")
    _common(p)
    p.add_argument("--p", type=float)
    p.add_argument("--q", type=float)

    p = sub.add_parser("inradius", help="capacitary inradius search")
    _common(p)
    p.add_argument("--gamma", type=float, nargs="+")
    p.add_argument("--kind", choices=("relative", "absolute", "body", "gallagher"), default="relative")
    p.add_argument("--p", type=float)

    p = sub.add_parser("indices", help="measure density indices theta* and theta")
    _common(p)

    p = sub.add_parser("verify", help="run the inequality checks")
    _common(p)
    p.add_argument("--suite", choices=("default",))
    p.add_argument("--select", nargs="+", metavar="CHECK", help="check ids to run")
    p.add_argument("--slack", type=float)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("render", help="SVG of the inradius search or PGM of the domain")
    _common(p)
    p.add_argument("--gamma", type=float, nargs="+")
    p.add_argument("--kind", choices=("relative", "absolute", "body"), default="relative")
    p.add_argument("--p", type=float)

    p = sub.add_parser("run", help="execute a JobConfig file")
    p.add_argument("job", help="JobConfig JSON")

    p = sub.add_parser("registry", help="list check ids with their statements")
    return parser


def config_from_args(ns: argparse.Namespace) -> dict[str, Any]:
    """JobConfig document equivalent to parsed flags."""
    cfg: dict[str, Any] = {"schema": 1, "command": ns.command}
    simple = {"scenario": "scenario", "spacing": "spacing", "out": "output", "format": "format",
              "N": "N", "p": "p", "q": "q", "gamma": "gamma", "kind": "kind", "suite": "suite",
              "select": "select", "slack": "slack", "diagnostics": "diagnostics"}
    for attr, key in simple.items():
        val = getattr(ns, attr, None)
        if val is not None:
            cfg[key] = val
    if getattr(ns, "jobs", None) is not None:
        cfg["parallelism"] = ns.jobs
    consts = {k: getattr(ns, k) for k in ("sobolev", "sigma_Np", "sigma_Npq", "C_Npg")
              if getattr(ns, k, None) is not None}
    if consts:
        cfg["constants"] = consts
    if ns.command == "render" and "format" not in cfg:
        cfg["format"] = "svg"
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        if ns.command == "registry":
            for row in vf.registry_table():
                print(f"{row['check_id']:14s} {row['statement']}")
            return EXIT_OK
        if ns.command == "run":
            try:
                cfg = json.loads(Path(ns.job).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read job file: {exc}", "$", ns.job) from exc
        else:
            cfg = config_from_args(ns)
        return execute(cfg)
    except ConfigError as exc:
        print(f"capri: schema error in {exc.source} at {exc.location}: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (AnalyticError, ShapeError, UnderResolvedError, vf.VerificationError) as exc:
        print(f"capri: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ir.InradiusError, ArithmeticError) as exc:
        print(f"capri: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
