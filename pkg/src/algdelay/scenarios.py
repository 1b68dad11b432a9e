"""Scenario files and the built-in systems.

A scenario is a JSON object::

    {"name": ..., "h": ..., "n": ..., "k": ...,
     "I": [lo, hi], "J": [lo, hi],                 (optional)
     "g": {"expr": ["-v1"]},                        in variables v1..v_{kn}
     "V": "all" | {"boxes": [[[lo, hi], ...], ...]},
     "Q": {"variant": "coord_select", "nu": [1], "kappa": [1]}
        | {"variant": "constant_l", "functionals": [[{"weight": 1, "component": 1, "t": -0.5}], ...]},
     "delta": {"variant": "offset", "d": ["1 + w1**2/2"], "W": [[-1, 1]]}
            | {"variant": "general", "fn": [...], "W": [...]}}   in r1..rk, w1..

Indices in files are 1-based; ``null`` box bounds mean unbounded. The
built-ins ``echo``, ``lin2`` and ``pair`` (plus the box-restricted
``echo_box``) are stored in this format.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .expr import ExprError, ExprMap, names
from .model import (
    Box,
    ConstantL,
    CoordSelect,
    GeneralDelta,
    GSpec,
    ModelSpec,
    OffsetDelta,
    StatePoint,
    VDomain,
)
from .segments import DEFAULT_N, VectorSegment, make_vector_segment


class ScenarioError(ValueError):
    """Invalid scenario; the message names the offending field."""


BUILTINS: dict[str, dict] = {
    "echo": {
        "name": "echo",
        "h": 2.0,
        "n": 1,
        "k": 1,
        "g": {"expr": ["-v1"]},
        "V": "all",
        "Q": {"variant": "coord_select", "nu": [1], "kappa": [1]},
        "delta": {"variant": "offset", "d": ["1 + w1**2/2"], "W": [[-1.0, 1.0]]},
    },
    "lin2": {
        "name": "lin2",
        "h": 1.0,
        "n": 1,
        "k": 1,
        "g": {"expr": ["-v1"]},
        "V": "all",
        "Q": {"variant": "constant_l", "functionals": [[{"weight": 1.0, "component": 1, "t": -0.5}]]},
        "delta": {"variant": "offset", "d": ["(1 + tanh(w1))/2"], "W": [[None, None]]},
    },
    "pair": {
        "name": "pair",
        "h": 1.0,
        "n": 2,
        "k": 2,
        "g": {"expr": ["-v1 + 0.1*v4", "-v2"]},
        "V": "all",
        "Q": {"variant": "coord_select", "nu": [1, 2], "kappa": [1, 2]},
        "delta": {
            "variant": "offset",
            "d": ["0.6 + 0.1*tanh(w1)", "0.7 + 0.1*tanh(w2)"],
            "W": [[None, None], [None, None]],
        },
    },
    "echo_box": {
        "name": "echo_box",
        "h": 2.0,
        "n": 1,
        "k": 1,
        "g": {"expr": ["-v1"]},
        "V": {"boxes": [[[-1.0, 1.0]]]},
        "Q": {"variant": "coord_select", "nu": [1], "kappa": [1]},
        "delta": {"variant": "offset", "d": ["1 + w1**2/2"], "W": [[-1.0, 1.0]]},
    },
}


def _field(d: dict, key: str, where: str):
    if key not in d:
        raise ScenarioError(f"missing field '{where}{key}'")
    return d[key]


def _box(spec, where: str, dim: int) -> Box:
    if not isinstance(spec, list) or len(spec) != dim or any(not isinstance(b, list) or len(b) != 2 for b in spec):
        raise ScenarioError(f"field '{where}' must be a list of {dim} [lo, hi] pairs")
    try:
        return Box.from_list(spec)
    except ValueError as exc:
        raise ScenarioError(f"field '{where}': {exc}") from None


def _expr(src, variables, where: str, dim_out: int) -> ExprMap:
    if isinstance(src, str):
        src = [src]
    if not isinstance(src, list) or len(src) != dim_out:
        raise ScenarioError(f"field '{where}' must list {dim_out} expression(s)")
    try:
        return ExprMap(src, variables)
    except ExprError as exc:
        raise ScenarioError(f"field '{where}': {exc}") from None


def model_from_dict(d: dict) -> ModelSpec:
    """Build and validate a :class:`ModelSpec` from a scenario dictionary."""
    if not isinstance(d, dict):
        raise ScenarioError("scenario must be a JSON object")
    try:
        h = float(_field(d, "h", ""))
        n = int(_field(d, "n", ""))
        k = int(_field(d, "k", ""))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"fields 'h', 'n', 'k' must be numbers: {exc}") from None
    if n < 1 or k < 1:
        raise ScenarioError("fields 'n' and 'k' must be positive")
    kn = k * n

    gd = _field(d, "g", "")
    if not isinstance(gd, dict) or "expr" not in gd:
        raise ScenarioError("field 'g' must be an object with an 'expr' list")
    gmap = _expr(gd["expr"], names("v", kn), "g.expr", n)

    Vd = d.get("V", "all")
    if Vd == "all":
        V = VDomain()
    elif isinstance(Vd, dict) and isinstance(Vd.get("boxes"), list) and Vd["boxes"]:
        V = VDomain(tuple(_box(b, f"V.boxes[{i}]", kn) for i, b in enumerate(Vd["boxes"])))
    else:
        raise ScenarioError("field 'V' must be \"all\" or {\"boxes\": [...]} with at least one box")
    g = GSpec(k, n, gmap, gmap.jacobian, V)

    Qd = _field(d, "Q", "")
    variant = Qd.get("variant") if isinstance(Qd, dict) else None
    try:
        if variant == "coord_select":
            nu = [int(x) - 1 for x in _field(Qd, "nu", "Q.")]
            kappa = [int(x) - 1 for x in _field(Qd, "kappa", "Q.")]
            q = CoordSelect(nu, kappa, n, k)
        elif variant == "constant_l":
            fl = _field(Qd, "functionals", "Q.")
            q = ConstantL([[(t["weight"], int(t["component"]) - 1, t["t"]) for t in f] for f in fl], n, k)
        else:
            raise ScenarioError(f"field 'Q.variant' must be 'coord_select' or 'constant_l', got {variant!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"field 'Q': {exc}") from None
    if q.dim < 1:
        raise ScenarioError("field 'Q' must define at least one output")

    Dd = _field(d, "delta", "")
    if not isinstance(Dd, dict):
        raise ScenarioError("field 'delta' must be an object")
    W = _box(_field(Dd, "W", "delta."), "delta.W", q.dim)
    dvariant = Dd.get("variant")
    if dvariant == "offset":
        dmap = _expr(_field(Dd, "d", "delta."), names("w", q.dim), "delta.d", k)
        delta = OffsetDelta(k, dmap, dmap.jacobian, W)
    elif dvariant == "general":
        variables = names("r", k) + names("w", q.dim)
        fmap = _expr(_field(Dd, "fn", "delta."), variables, "delta.fn", k)

        def fn(r, w, _f=fmap):
            return _f(np.concatenate([np.atleast_1d(r), np.atleast_1d(w)]))

        def d1(r, w, _f=fmap):
            return _f.jacobian(np.concatenate([np.atleast_1d(r), np.atleast_1d(w)]))[:, :k]

        def d2(r, w, _f=fmap):
            return _f.jacobian(np.concatenate([np.atleast_1d(r), np.atleast_1d(w)]))[:, k:]

        delta = GeneralDelta(k, fn, d1, d2, W)
    else:
        raise ScenarioError(f"field 'delta.variant' must be 'offset' or 'general', got {dvariant!r}")

    try:
        return ModelSpec(
            name=str(d.get("name", "scenario")),
            h=h,
            n=n,
            k=k,
            g=g,
            q=q,
            delta=delta,
            I=tuple(d["I"]) if d.get("I") is not None else None,
            J=tuple(d["J"]) if d.get("J") is not None else None,
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None


def canonical_json(d: dict) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def scenario_hash(d: dict) -> str:
    return hashlib.sha256(canonical_json(d).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    model: ModelSpec
    source: dict

    @property
    def hash(self) -> str:
        return scenario_hash(self.source)


def load_scenario(ref: str) -> Scenario:
    """Resolve a built-in name or a path to a scenario JSON file."""
    if ref in BUILTINS:
        d = copy.deepcopy(BUILTINS[ref])
    else:
        path = Path(ref)
        if not path.is_file():
            raise ScenarioError(f"'{ref}' is neither a built-in ({', '.join(BUILTINS)}) nor a readable file")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return Scenario(str(d.get("name", ref)) if isinstance(d, dict) else ref, model_from_dict(d), d)


def builtin(name: str) -> ModelSpec:
    return model_from_dict(copy.deepcopy(BUILTINS[name]))


# --------------------------------------------------------------------------- points


def echo_compatible_point(w: float = 0.1, N: int = DEFAULT_N) -> StatePoint:
    """A point of the echo manifold with a cubic history.

    ``phi(t) = w(1 + 2 r0/3) - w t + w t^3 / (3 r0^2)`` with ``r0 = -1 - w^2/2``
    has ``phi(r0) = w`` (so the delay equation holds), ``phi'(0) = -w = g``,
    ``phi'(r0) = 0`` (so ``det D1 Delta = 1``) and ``phi''(0) = 0``. The last
    condition makes the solution C^2 at ``t = 0``, so the integrator keeps its
    full order; the cubic is represented exactly by the Hermite mesh.
    """
    h = 2.0
    r0 = -1.0 - 0.5 * w * w
    c0 = w * (1.0 + 2.0 * r0 / 3.0)
    c3 = w / (3.0 * r0 * r0)
    phi = make_vector_segment(h, N, [lambda t: c0 - w * t + c3 * t**3], [lambda t: -w + 3.0 * c3 * t * t])
    return StatePoint(np.array([r0]), phi)


def documented_seed(name: str, N: int = DEFAULT_N) -> StatePoint:
    """Starting guesses for the manifold-point search on the built-ins."""
    if name in ("echo", "echo_box"):
        return StatePoint(np.array([-0.9]), VectorSegment.zeros(2.0, 1, N))
    if name == "lin2":
        return StatePoint(np.array([-0.45]), VectorSegment.zeros(1.0, 1, N))
    if name == "pair":
        return StatePoint(np.array([-0.5, -0.5]), VectorSegment.zeros(1.0, 2, N))
    raise KeyError(name)
