"""JSON scenario files: schema, loading and serialization."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .design import TerminalSpec
from .dmpc import SolverSettings
from .dynamics import AgentModel
from .engine import CONTROLLERS, ScenarioConfig
from .errors import DmpcLabError, ParseError, SchemaError
from .initialization import INIT_MODES
from .network import DELAY_MODES, DelayProcess
from .topology import build_topology

_NUM = {"type": "number"}
_ROW = {"type": "array", "items": _NUM, "minItems": 1}
_MATRIX = {"type": "array", "items": _ROW, "minItems": 1}
_POS_INT = {"type": "integer", "minimum": 1}


def _block(props: dict, required: list[str]) -> dict:
    return {"type": "object", "properties": props, "required": required, "additionalProperties": False}


SCHEMA: dict[str, Any] = _block(
    {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "model": _block({"A": _MATRIX, "B": _MATRIX, "u_max": {"oneOf": [_NUM, _ROW]}}, ["A", "B", "u_max"]),
        "topology": _block(
            {
                "M": {"type": "integer", "minimum": 2},
                "edges": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}},
                "laplacian": _MATRIX,
            },
            ["M", "edges"],
        ),
        "gain": _block({"K": _MATRIX, "K_bounded": {"oneOf": [_MATRIX, {"type": "null"}]}}, ["K"]),
        "terminal": _block(
            {"S": _MATRIX, "epsilon_sq": {"type": "number", "minimum": 0}, "sigma": {"type": "number", "exclusiveMinimum": 0}},
            ["S", "epsilon_sq"],
        ),
        "tube": _block({"eta": {"type": "number", "exclusiveMinimum": 0}}, ["eta"]),
        "horizon": _block({"N": {"type": "integer", "minimum": 2}}, ["N"]),
        "cost": _block({"P": {"oneOf": [_NUM, _MATRIX, {"type": "array", "items": _MATRIX, "minItems": 1}]}}, ["P"]),
        "delay": _block(
            {
                "mode": {"enum": list(DELAY_MODES)},
                "tau_bar": _POS_INT,
                "seed": {"type": "integer"},
                "sequence": {"type": "array", "items": _POS_INT},
                "value": _POS_INT,
                "per_edge": {"type": "boolean"},
            },
            ["mode", "tau_bar"],
        ),
        "initial_states": _MATRIX,
        "run": _block(
            {
                "T": _POS_INT,
                "seed": {"oneOf": [{"type": "integer"}, {"type": "null"}]},
                "controller": {"enum": list(CONTROLLERS)},
                "init": {"enum": list(INIT_MODES)},
            },
            [],
        ),
        "solver": _block(
            {
                "outer_tol": {"type": "number", "exclusiveMinimum": 0},
                "inner_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_outer": _POS_INT,
                "max_inner": _POS_INT,
                "rho0": {"type": "number", "exclusiveMinimum": 0},
                "feas_tol": {"type": "number", "exclusiveMinimum": 0},
            },
            [],
        ),
    },
    ["model", "topology", "gain", "terminal", "tube", "horizon", "cost", "delay", "initial_states"],
)

_SOLVER_FIELDS = ("outer_tol", "inner_tol", "max_outer", "max_inner", "rho0", "feas_tol")


def validate(doc: Any) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{where}: {exc.message}") from exc


def _parse_P(raw, m: int, M: int) -> list[np.ndarray]:
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 0:
        return [float(arr) * np.eye(m) for _ in range(M)]
    if arr.ndim == 2:
        return [arr.copy() for _ in range(M)]
    if arr.ndim == 3 and arr.shape[0] == M:
        return [a.copy() for a in arr]
    raise SchemaError(f"cost/P: expected scalar, matrix or {M} matrices, got shape {arr.shape}")


def from_dict(doc: dict) -> ScenarioConfig:
    """Validate a scenario document and build its configuration."""
    validate(doc)
    try:
        model = AgentModel(doc["model"]["A"], doc["model"]["B"], doc["model"]["u_max"])
        topo_doc = doc["topology"]
        topo = build_topology(topo_doc["edges"], topo_doc["M"])
        if "laplacian" in topo_doc and not np.allclose(topo_doc["laplacian"], topo.laplacian, atol=1e-12):
            raise SchemaError("topology/laplacian does not match the edge list")
        term = doc["terminal"]
        terminal = TerminalSpec(term["S"], float(term["epsilon_sq"]), topo.M, float(term.get("sigma", 1.0)))
        d = doc["delay"]
        delay = DelayProcess(
            mode=d["mode"],
            tau_bar=int(d["tau_bar"]),
            seed=int(d.get("seed", 0)),
            sequence=tuple(d.get("sequence", ())),
            value=d.get("value"),
            per_edge=bool(d.get("per_edge", False)),
        )
        r = doc.get("run", {})
        kb = doc["gain"].get("K_bounded")
        return ScenarioConfig(
            model=model,
            topology=topo,
            K=np.asarray(doc["gain"]["K"], dtype=float),
            terminal=terminal,
            eta=float(doc["tube"]["eta"]),
            N=int(doc["horizon"]["N"]),
            P=_parse_P(doc["cost"]["P"], model.m, topo.M),
            delay=delay,
            x0=np.asarray(doc["initial_states"], dtype=float),
            T=int(r.get("T", 100)),
            seed=r.get("seed"),
            controller=r.get("controller", "robust_dmpc"),
            init=r.get("init", "open_loop"),
            K_bounded=None if kb is None else np.asarray(kb, dtype=float),
            solver=SolverSettings(**{k: v for k, v in doc.get("solver", {}).items()}),
            name=doc.get("name", ""),
        )
    except SchemaError:
        raise
    except (DmpcLabError, ValueError, TypeError) as exc:
        raise SchemaError(f"{type(exc).__name__}: {exc}") from exc


def _mat(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def to_dict(config: ScenarioConfig) -> dict:
    """Serialize a configuration; :func:`from_dict` inverts it."""
    Ps = config.P
    P = _mat(Ps[0]) if all(np.array_equal(p, Ps[0]) for p in Ps) else [_mat(p) for p in Ps]
    u_max = config.model.u_max
    delay = config.delay
    d: dict[str, Any] = {"mode": delay.mode, "tau_bar": delay.tau_bar, "seed": delay.seed}
    if delay.sequence:
        d["sequence"] = list(delay.sequence)
    if delay.value is not None:
        d["value"] = int(delay.value)
    if delay.per_edge:
        d["per_edge"] = True
    doc = {
        "name": config.name,
        "model": {
            "A": _mat(config.model.A),
            "B": _mat(config.model.B),
            "u_max": float(u_max[0]) if np.all(u_max == u_max[0]) else _mat(u_max),
        },
        "topology": {
            "M": config.topology.M,
            "edges": config.topology.edges_one_based(),
            "laplacian": _mat(config.topology.laplacian),
        },
        "gain": {"K": _mat(config.K), "K_bounded": None if config.K_bounded is None else _mat(config.K_bounded)},
        "terminal": {"S": _mat(config.terminal.S), "epsilon_sq": config.terminal.epsilon_sq, "sigma": config.terminal.sigma},
        "tube": {"eta": config.eta},
        "horizon": {"N": config.N},
        "cost": {"P": P},
        "delay": d,
        "initial_states": _mat(config.x0),
        "run": {"T": config.T, "seed": config.seed, "controller": config.controller, "init": config.init},
        "solver": {k: getattr(config.solver, k) for k in _SOLVER_FIELDS},
    }
    return doc


def loads(text: str) -> ScenarioConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    return from_dict(doc)


def load(path: str | Path) -> ScenarioConfig:
    """Read a scenario file; a bare name like ``ex1.json`` also resolves to a packaged scenario."""
    p = Path(path)
    if not p.exists():
        packaged = resources.files("dmpc_lab") / "scenarios" / p.name
        if p.parent == Path(".") and packaged.is_file():
            return loads(packaged.read_text())
        raise ParseError(f"scenario file not found: {path}")
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return loads(text)


def dumps(config: ScenarioConfig) -> str:
    return json.dumps(to_dict(config), indent=2)


def packaged(name: str) -> ScenarioConfig:
    """Load one of the shipped scenarios (``"ex1"`` or ``"ex2"``)."""
    stem = name[:-5] if name.endswith(".json") else name
    return loads((resources.files("dmpc_lab") / "scenarios" / f"{stem}.json").read_text())
