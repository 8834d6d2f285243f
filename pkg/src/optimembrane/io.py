"""Run configuration, solution files and figure/data export.

Every file carries a schema tag and readers refuse unknown tags. Writes go
through a temporary file in the target directory followed by a rename.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .geometry import (DirichletSet, DiscreteLoad, Domain, Grid, LoadSpec, PairSet, build_grid)
from .membrane import MembraneSolution, TrussMeasure, energy_J
from .solver import SolveReport

SOLUTION_SCHEMA = "optimembrane.solution/1"
ERROR_SCHEMA = "optimembrane.error/1"
RESULT_SCHEMA = "optimembrane.result/1"


class ConfigError(ValueError):
    pass


class SchemaError(ValueError):
    pass


# ------------------------------------------------------------------ config

@dataclass
class DomainConfig:
    type: str = "square"  # square | rectangle | regular_polygon | polygon
    side: float = 1.0
    width: float = 1.0
    height: float = 1.0
    center: list = field(default_factory=lambda: [0.0, 0.0])
    n: int = 16
    radius: float = 1.0
    phase: float = 0.0
    vertices: list = field(default_factory=list)

    def build(self) -> Domain:
        if self.type == "square":
            return Domain.rectangle(self.side, self.side, tuple(self.center))
        if self.type == "rectangle":
            return Domain.rectangle(self.width, self.height, tuple(self.center))
        if self.type == "regular_polygon":
            return Domain.regular_polygon(self.n, self.radius, self.phase)
        if self.type == "polygon":
            return Domain(np.asarray(self.vertices, float))
        raise ConfigError(f"unknown domain type {self.type!r}")


@dataclass
class Sigma0Config:
    type: str = "boundary"  # boundary | edges | points
    edges: list = field(default_factory=list)
    points: list = field(default_factory=list)

    def build(self, domain: Domain) -> DirichletSet:
        if self.type == "boundary":
            return DirichletSet.whole_boundary(domain)
        if self.type == "edges":
            return DirichletSet.from_edges(domain, [int(k) for k in self.edges])
        if self.type == "points":
            return DirichletSet.from_points([tuple(p) for p in self.points])
        raise ConfigError(f"unknown sigma0 type {self.type!r}")


@dataclass
class LoadConfig:
    points: list = field(default_factory=lambda: [{"at": [0.0, 0.0], "mass": 1.0}])
    uniform: float = 0.0
    lines: list = field(default_factory=list)

    def __post_init__(self):
        for p in self.points:
            _strict_keys(p, {"at", "mass"}, "load.points[]")
        for s in self.lines:
            _strict_keys(s, {"from", "to", "density"}, "load.lines[]")

    def build(self) -> LoadSpec:
        pm = []
        for p in self.points:
            pm.append((tuple(map(float, p["at"])), float(p.get("mass", 1.0))))
        ln = []
        for s in self.lines:
            ln.append((tuple(map(float, s["from"])), tuple(map(float, s["to"])), float(s.get("density", 1.0))))
        dens = (float(self.uniform),) if self.uniform else ()
        return LoadSpec(tuple(pm), dens, tuple(ln))


@dataclass
class SolverConfig:
    gap_tol: float = 1e-6
    feas_tol: float = 1e-7
    max_iter: int = 200_000
    violation_tol: Optional[float] = None
    max_rounds: int = 50
    batch: int = 1000


@dataclass
class MetricConfig:
    source: Optional[list] = None  # point; default: first loaded node
    target: Optional[list] = None  # point for `geodesic`
    edges: Optional[str] = None  # pair strategy; default: active pairs of the solution


@dataclass
class OracleConfig:
    kind: str = "one_force"  # one_force | radial_uniform | radial_dirac
    x0: list = field(default_factory=lambda: [0.0, 0.0])
    R: float = 1.0


@dataclass
class RunConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    h: float = 0.125
    boundary_nodes: str = "lattice"
    sigma0: Sigma0Config = field(default_factory=Sigma0Config)
    load: LoadConfig = field(default_factory=LoadConfig)
    pairs: str = "full"
    column_generation: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)
    metric: MetricConfig = field(default_factory=MetricConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    solution: Optional[str] = None  # input solution file for check / metric / geodesic
    check_tol: float = 1e-6
    out: str = "out"
    trace: bool = False

    def grid(self) -> Grid:
        dom = self.domain.build()
        return build_grid(dom, self.h, self.sigma0.build(dom), self.boundary_nodes)


_NESTED = {"domain": DomainConfig, "sigma0": Sigma0Config, "load": LoadConfig,
           "solver": SolverConfig, "metric": MetricConfig, "oracle": OracleConfig}


def _strict_keys(d: dict, allowed, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def config_from_dict(d: dict | None) -> RunConfig:
    d = dict(d or {})
    _strict_keys(d, {f.name for f in fields(RunConfig)}, "config")
    kw: dict[str, Any] = {}
    for k, v in d.items():
        if k in _NESTED:
            cls = _NESTED[k]
            _strict_keys(v, {f.name for f in fields(cls)}, k)
            kw[k] = cls(**v)
        else:
            kw[k] = v
    return RunConfig(**kw)


def load_config(path: str | os.PathLike | None) -> RunConfig:
    """YAML or JSON config (JSON is a subset of YAML)."""
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return config_from_dict(yaml.safe_load(fh))


def config_to_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)


# ------------------------------------------------------------------ files

def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=1, sort_keys=False, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o)}")


def _finite(x: float):
    return x if math.isfinite(x) else str(x)


def solution_to_dict(sol: MembraneSolution) -> dict:
    g = sol.grid
    sp = sol.string_pairs
    tr = sol.truss
    keep = (tr.Pi != 0) | (tr.pi != 0)
    return {
        "schema": SOLUTION_SCHEMA,
        "domain": g.domain.vertices.tolist(),
        "h": g.h,
        "sigma0": {"segments": [list(map(list, s)) for s in g.sigma0.segments],
                   "points": [list(p) for p in g.sigma0.points]},
        "nodes": g.nodes.tolist(),
        "dirichlet": g.dirichlet_mask.astype(int).tolist(),
        "boundary": g.boundary_mask.astype(int).tolist(),
        "load": sol.load.weights.tolist(),
        "strings": [[int(i), int(j), float(P), float(p)]
                    for i, j, P, p in zip(sp.i[keep], sp.j[keep], tr.Pi[keep], tr.pi[keep])],
        "u": sol.u.tolist(),
        "w": sol.w.tolist(),
        "Z0": _finite(sol.Z0),
        "dual_value": sol.dual_value,
        "gap": _finite(sol.gap),
        "report": {k: _finite(v) if isinstance(v, float) else v for k, v in sol.report.as_dict().items()},
    }


def solution_from_dict(d: dict) -> MembraneSolution:
    if d.get("schema") != SOLUTION_SCHEMA:
        raise SchemaError(f"unsupported solution schema {d.get('schema')!r}")
    dom = Domain(np.asarray(d["domain"], float))
    s0 = DirichletSet(tuple(tuple(map(tuple, s)) for s in d["sigma0"]["segments"]),
                      tuple(tuple(p) for p in d["sigma0"]["points"]))
    nodes = np.asarray(d["nodes"], float)
    grid = Grid(dom, float(d["h"]), nodes, np.asarray(d["boundary"], bool),
                np.asarray(d["dirichlet"], bool), s0)
    load = DiscreteLoad(np.asarray(d["load"], float))
    st = np.asarray(d["strings"], float).reshape(-1, 4)
    i, j = st[:, 0].astype(np.int64), st[:, 1].astype(np.int64)
    if len(st):
        diff = nodes[j] - nodes[i]
        L = np.hypot(diff[:, 0], diff[:, 1])
        pairs = PairSet(i, j, L, diff / L[:, None])
    else:
        pairs = PairSet(i, j, np.zeros(0), np.zeros((0, 2)))
    truss = TrussMeasure.from_values(st[:, 2], st[:, 3])
    u = np.asarray(d["u"], float)
    w = np.asarray(d["w"], float).reshape(-1, 2)
    rep = d.get("report", {})
    report = SolveReport(*(float(rep.get(k, math.nan)) for k in (
        "primal_objective", "dual_objective", "relative_gap", "primal_residual", "dual_residual")),
        iterations=int(rep.get("iterations", 0)), status=rep.get("status", "optimal"))
    Z0 = energy_J(truss, pairs) if len(pairs) else 0.0
    return MembraneSolution(grid, load, pairs, truss, u, w, Z0, float(d["dual_value"]), report)


def save_solution(path, sol: MembraneSolution) -> None:
    write_json(path, solution_to_dict(sol))


def load_solution(path) -> MembraneSolution:
    with open(path) as fh:
        return solution_from_dict(json.load(fh))


def nodal_csv(sol: MembraneSolution) -> str:
    buf = _io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["x", "y", "u", "w1", "w2", "dirichlet", "load"])
    for k in range(sol.grid.n):
        x, y = sol.grid.nodes[k]
        wr.writerow([repr(float(x)), repr(float(y)), repr(float(sol.u[k])), repr(float(sol.w[k, 0])),
                     repr(float(sol.w[k, 1])), int(sol.grid.dirichlet_mask[k]), repr(float(sol.load.weights[k]))])
    return buf.getvalue()


def polyline_csv(points: np.ndarray, cumulative: np.ndarray) -> str:
    buf = _io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["k", "x", "y", "cost"])
    for k, ((x, y), c) in enumerate(zip(points, cumulative)):
        wr.writerow([k, repr(float(x)), repr(float(y)), repr(float(c))])
    return buf.getvalue()


def error_report(command: str, exc: BaseException) -> dict:
    return {"schema": ERROR_SCHEMA, "command": command, "type": type(exc).__name__, "message": str(exc)}


# ------------------------------------------------------------------ svg

def export_svg(sol: MembraneSolution, max_width_px: float = 6.0, size_px: int = 600,
               colormap: str = "gray", prune: float = 1e-6) -> str:
    """Strings as lines (width proportional to Pi, arrow towards the sign of pi) over a u raster."""
    if colormap != "gray":
        raise ValueError("only the gray colormap is available")
    g = sol.grid
    V = g.domain.vertices
    lo, hi = V.min(0), V.max(0)
    pad = 0.05 * float((hi - lo).max())
    scale = size_px / float((hi - lo).max() + 2 * pad)
    W = (hi[0] - lo[0] + 2 * pad) * scale
    H = (hi[1] - lo[1] + 2 * pad) * scale

    def X(p):
        return (p[0] - lo[0] + pad) * scale

    def Y(p):
        return (hi[1] + pad - p[1]) * scale

    f = "{:.3f}".format
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{f(W)}" height="{f(H)}" '
           f'viewBox="0 0 {f(W)} {f(H)}">',
           '<defs><marker id="arrow" viewBox="0 0 10 10" refX="10" refY="5" markerWidth="4" '
           'markerHeight="4" orient="auto-start-reverse"><path d="M0,0 L10,5 L0,10 z" fill="#c00"/>'
           '</marker></defs>']
    umax = float(np.abs(sol.u).max(initial=0.0))
    out.append('<g id="u">')
    if umax > 0:
        cell = g.h * scale
        for k in range(g.n):
            level = int(round(255 * (1 - abs(sol.u[k]) / umax)))
            p = g.nodes[k]
            out.append(f'<rect x="{f(X(p) - cell / 2)}" y="{f(Y(p) - cell / 2)}" width="{f(cell)}" '
                       f'height="{f(cell)}" fill="rgb({level},{level},{level})"/>')
    out.append("</g>")
    pts = " ".join(f"{f(X(p))},{f(Y(p))}" for p in V)
    out.append(f'<polygon id="frame" points="{pts}" fill="none" stroke="black" stroke-width="1"/>')
    tr = sol.truss.pruned(prune)
    out.append('<g id="strings" stroke="#c00" stroke-linecap="round">')
    if len(tr):
        sp = sol.active_pairs.subset(tr.pair_index)
        top = float(tr.Pi.max())
        for e in range(len(tr)):
            a, b = g.nodes[sp.i[e]], g.nodes[sp.j[e]]
            if tr.pi[e] < 0:
                a, b = b, a
            marker = ' marker-end="url(#arrow)"' if tr.pi[e] != 0 else ""
            out.append(f'<line x1="{f(X(a))}" y1="{f(Y(a))}" x2="{f(X(b))}" y2="{f(Y(b))}" '
                       f'stroke-width="{f(max_width_px * tr.Pi[e] / top)}"{marker}/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"

