"""Finite CTMDP data model, structural checks and JSON ingestion.

States are ``0..n-1``. Each state ``x`` owns an ordered list of admissible
action names ``A(x)``; per (state, action) pair the model stores a row of
the signed rate kernel ``q(.|x,a)`` (diagonal entry ``-q_x(a)``) and a cost
rate ``c(x,a)``. The weight ``w(x)`` is the uniformization rate and must
dominate every exit rate at ``x``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import jsonschema
import numpy as np

CONSERVATIVE_TOL = 1e-12
POLICY_SUM_TOL = 1e-12


class ModelError(Exception):
    """Base class for every model ingestion/validation failure."""


class StructuralError(ModelError):
    """Array shapes or action lists disagree with each other."""


class ModelParseError(ModelError):
    """The document is not valid JSON."""


class SchemaError(ModelError):
    """The document is JSON but does not follow the model schema."""


class InvariantError(ModelError):
    """The model is well formed but violates a modelling invariant."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        names = sorted({v.name for v in report.violations})
        super().__init__("model violates: " + ", ".join(names))


@dataclass(frozen=True)
class Violation:
    name: str
    state: int | None
    action: str | None
    magnitude: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "state": self.state,
            "action": self.action,
            "magnitude": self.magnitude,
        }


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of a structural or diagnostic check.

    ``ok`` is derived from ``violations``; ``details`` carries per-constraint
    slack arrays and any extra diagnostics the check produces.
    """

    violations: tuple[Violation, ...] = ()
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [v.to_dict() for v in self.violations],
            "details": _jsonable(self.details),
        }


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CtmdpModel:
    """Immutable finite CTMDP.

    ``rates[x]`` has shape ``(len(actions[x]), num_states)`` and ``cost[x]``
    shape ``(len(actions[x]),)``. Use :meth:`from_dicts` to build from
    ``{(x, action_name): row}`` mappings.
    """

    num_states: int
    actions: tuple[tuple[str, ...], ...]
    rates: tuple[np.ndarray, ...]
    cost: tuple[np.ndarray, ...]
    weight: np.ndarray
    labels: dict | None = None

    def __post_init__(self):
        n = self.num_states
        if not isinstance(n, (int, np.integer)) or n < 1:
            raise StructuralError(f"num_states must be a positive integer, got {n!r}")
        actions = tuple(tuple(str(a) for a in acts) for acts in self.actions)
        if len(actions) != n:
            raise StructuralError(f"expected {n} action lists, got {len(actions)}")
        for x, acts in enumerate(actions):
            if len(set(acts)) != len(acts):
                raise StructuralError(f"duplicate action names at state {x}")
        if len(self.rates) != n or len(self.cost) != n:
            raise StructuralError("rates/cost must have one entry per state")
        rates, cost = [], []
        for x in range(n):
            r = np.asarray(self.rates[x], dtype=float)
            if r.ndim == 1 and len(actions[x]) == 1:
                r = r[None, :]
            c = np.asarray(self.cost[x], dtype=float).reshape(-1)
            if r.size == 0 and not actions[x]:
                r = np.zeros((0, n))
            if r.shape != (len(actions[x]), n):
                raise StructuralError(
                    f"rates at state {x} have shape {r.shape}, expected {(len(actions[x]), n)}"
                )
            if c.shape != (len(actions[x]),):
                raise StructuralError(f"cost at state {x} has {c.size} entries, expected {len(actions[x])}")
            rates.append(_frozen(r))
            cost.append(_frozen(c))
        w = np.asarray(self.weight, dtype=float)
        if w.shape != (n,):
            raise StructuralError(f"weight has shape {w.shape}, expected ({n},)")
        object.__setattr__(self, "num_states", int(n))
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "rates", tuple(rates))
        object.__setattr__(self, "cost", tuple(cost))
        object.__setattr__(self, "weight", _frozen(w))

    @classmethod
    def from_dicts(
        cls,
        actions: Sequence[Sequence[str]],
        rates: dict,
        cost: dict,
        weight: Sequence[float],
        labels: dict | None = None,
    ) -> "CtmdpModel":
        """Build from ``{(state, action): row}`` and ``{(state, action): c}`` maps.

        Missing rate rows default to zero; missing costs raise.
        """
        n = len(actions)
        rate_arrays, cost_arrays = [], []
        for x, acts in enumerate(actions):
            rows = []
            for a in acts:
                row = np.zeros(n)
                if (x, a) in rates:
                    row = np.asarray(rates[(x, a)], dtype=float)
                rows.append(row)
            rate_arrays.append(np.array(rows).reshape(len(acts), n))
            try:
                cost_arrays.append(np.array([cost[(x, a)] for a in acts], dtype=float))
            except KeyError as exc:
                raise StructuralError(f"missing cost for {exc.args[0]}") from None
        return cls(n, tuple(tuple(a) for a in actions), tuple(rate_arrays), tuple(cost_arrays), weight, labels)

    # -- derived quantities -------------------------------------------------

    @property
    def max_actions(self) -> int:
        return max((len(a) for a in self.actions), default=0)

    def exit_rates(self, x: int) -> np.ndarray:
        """q_x(a) for every a in A(x)."""
        return -self.rates[x][:, x]

    @cached_property
    def qbar(self) -> np.ndarray:
        """Largest exit rate per state."""
        return _frozen([self.exit_rates(x).max(initial=0.0) for x in range(self.num_states)])

    @cached_property
    def action_mask(self) -> np.ndarray:
        mask = np.zeros((self.num_states, self.max_actions), dtype=bool)
        for x, acts in enumerate(self.actions):
            mask[x, : len(acts)] = True
        mask.setflags(write=False)
        return mask

    @cached_property
    def rate_tensor(self) -> np.ndarray:
        """Zero-padded ``(n, max_actions, n)`` array of rate rows."""
        n = self.num_states
        out = np.zeros((n, self.max_actions, n))
        for x in range(n):
            out[x, : len(self.actions[x])] = self.rates[x]
        out.setflags(write=False)
        return out

    @cached_property
    def cost_matrix(self) -> np.ndarray:
        """``(n, max_actions)`` cost rates, ``+inf`` at inadmissible slots."""
        out = np.full((self.num_states, self.max_actions), np.inf)
        for x in range(self.num_states):
            out[x, : len(self.actions[x])] = self.cost[x]
        out.setflags(write=False)
        return out

    def action_index(self, x: int, name: str) -> int:
        try:
            return self.actions[x].index(name)
        except ValueError:
            raise KeyError(f"action {name!r} not admissible at state {x}") from None

    def with_cost(self, cost: Sequence[np.ndarray]) -> "CtmdpModel":
        return CtmdpModel(self.num_states, self.actions, self.rates, tuple(cost), self.weight, self.labels)

    def scaled_cost(self, factor: float) -> "CtmdpModel":
        return self.with_cost([factor * c for c in self.cost])


# -- policies ----------------------------------------------------------------


@dataclass(frozen=True)
class PolicyDeterministic:
    """State -> index into ``A(x)``."""

    choice: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "choice", tuple(int(a) for a in self.choice))

    @classmethod
    def from_names(cls, model: CtmdpModel, names: Sequence[str]) -> "PolicyDeterministic":
        if len(names) != model.num_states:
            raise StructuralError("policy length differs from num_states")
        return cls(tuple(model.action_index(x, a) for x, a in enumerate(names)))

    def names(self, model: CtmdpModel) -> list[str]:
        return [model.actions[x][a] for x, a in enumerate(self.choice)]

    def check(self, model: CtmdpModel) -> None:
        if len(self.choice) != model.num_states:
            raise StructuralError("policy length differs from num_states")
        for x, a in enumerate(self.choice):
            if not 0 <= a < len(model.actions[x]):
                raise StructuralError(f"action index {a} not admissible at state {x}")

    def distribution(self, model: CtmdpModel) -> list[np.ndarray]:
        out = []
        for x, a in enumerate(self.choice):
            d = np.zeros(len(model.actions[x]))
            d[a] = 1.0
            out.append(d)
        return out


@dataclass(frozen=True, eq=False)
class PolicyRandomized:
    """State -> probability vector over ``A(x)``."""

    dist: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "dist", tuple(_frozen(np.ravel(d)) for d in self.dist))

    def check(self, model: CtmdpModel) -> None:
        if len(self.dist) != model.num_states:
            raise StructuralError("policy length differs from num_states")
        for x, d in enumerate(self.dist):
            if d.shape != (len(model.actions[x]),):
                raise StructuralError(f"distribution at state {x} does not match A({x})")
            if np.any(d < 0) or abs(d.sum() - 1.0) > POLICY_SUM_TOL:
                raise StructuralError(f"distribution at state {x} is not a probability vector")

    def distribution(self, model: CtmdpModel) -> list[np.ndarray]:
        return list(self.dist)


Policy = PolicyDeterministic | PolicyRandomized


def policy_generator(model: CtmdpModel, policy: Policy) -> tuple[np.ndarray, np.ndarray]:
    """Policy-averaged generator ``Q_pi`` (n x n) and cost rate ``c_pi``."""
    policy.check(model)
    n = model.num_states
    if isinstance(policy, PolicyDeterministic):
        Q = np.array([model.rates[x][a] for x, a in enumerate(policy.choice)]).reshape(n, n)
        c = np.array([model.cost[x][a] for x, a in enumerate(policy.choice)])
        return Q, c
    Q = np.empty((n, n))
    c = np.empty(n)
    for x, d in enumerate(policy.dist):
        Q[x] = d @ model.rates[x]
        c[x] = d @ model.cost[x]
    return Q, c


# -- validation ---------------------------------------------------------------


def validate_model(model: CtmdpModel) -> ValidationReport:
    """Check every modelling invariant and report each violation."""
    out: list[Violation] = []
    n = model.num_states
    for x in range(n):
        w = model.weight[x]
        if not np.isfinite(w) or w <= 0:
            out.append(Violation("weight positivity", x, None, float(-w if np.isfinite(w) else np.inf)))
        if not model.actions[x]:
            out.append(Violation("nonempty actions", x, None, 0.0))
            continue
        for i, a in enumerate(model.actions[x]):
            row = model.rates[x][i]
            off = np.delete(row, x)
            if not np.all(np.isfinite(row)):
                out.append(Violation("finite rates", x, a, float("inf")))
                continue
            if off.min(initial=0.0) < 0:
                out.append(Violation("off-diagonal nonnegativity", x, a, float(-off.min())))
            s = row.sum()
            if abs(s) > CONSERVATIVE_TOL:
                out.append(Violation("conservative", x, a, float(abs(s))))
            exit_rate = -row[x]
            if exit_rate > w:
                out.append(Violation("stable/dominated", x, a, float(exit_rate - w)))
            c = model.cost[x][i]
            if not np.isfinite(c) or c < 0:
                out.append(Violation("cost nonnegativity", x, a, float(-c if np.isfinite(c) else np.inf)))
    return ValidationReport(tuple(out))


def check_lyapunov(model: CtmdpModel, c0: float, b0: float, M0: float) -> ValidationReport:
    """Drift condition sum_y w(y) q(y|x,a) <= c0 w(x) + b0 and qbar_x <= M0 w(x).

    ``details["drift_slack"][x]`` holds the per-action slack of the drift
    inequality at ``x``; ``details["rate_slack"]`` the slack of the rate bound.
    """
    if b0 < 0 or M0 <= 0:
        raise ValueError("need b0 >= 0 and M0 > 0")
    w = model.weight
    out = []
    drift_slack = []
    for x in range(model.num_states):
        drift = model.rates[x] @ w
        slack = c0 * w[x] + b0 - drift
        drift_slack.append(slack)
        for i, s in enumerate(slack):
            if s < 0:
                out.append(Violation("lyapunov drift", x, model.actions[x][i], float(-s)))
    rate_slack = M0 * w - model.qbar
    for x, s in enumerate(rate_slack):
        if s < 0:
            out.append(Violation("rate bound", x, None, float(-s)))
    return ValidationReport(tuple(out), {"drift_slack": drift_slack, "rate_slack": rate_slack})


def check_condition2_sufficient(model: CtmdpModel, z: int, v: Sequence[float]) -> ValidationReport:
    """Primitive-level test for bounded relative values around state ``z``.

    Requires ``0 >= c(x,a) + sum_{y != z} q(y|x,a) v(y)`` for every ``x != z``.
    ``details["positive_exit_rates"]`` says whether every exit rate away
    from ``z`` is strictly positive, which the test also presupposes.
    """
    n = model.num_states
    if not 0 <= z < n:
        raise ValueError(f"reference state {z} out of range")
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError("v must have one entry per state")
    vz = v.copy()
    vz[z] = 0.0
    out = []
    slack = {}
    min_exit = np.inf
    for x in range(n):
        if x == z:
            continue
        s = -(model.cost[x] + model.rates[x] @ vz)
        slack[x] = s
        min_exit = min(min_exit, model.exit_rates(x).min())
        for i, si in enumerate(s):
            if si < 0:
                out.append(Violation("condition2 sufficient", x, model.actions[x][i], float(-si)))
    return ValidationReport(
        tuple(out),
        {"slack": slack, "positive_exit_rates": bool(min_exit > 0), "min_exit_rate": float(min_exit)},
    )


# -- JSON ----------------------------------------------------------------------

MODEL_SCHEMA = {
    "type": "object",
    "required": ["num_states", "actions", "rates", "cost", "weight"],
    "properties": {
        "num_states": {"type": "integer", "minimum": 1},
        "actions": {"type": "array", "items": {"type": "array", "items": {"type": "string"}}},
        "rates": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": {"type": "number"}},
        },
        "cost": {"type": "object", "additionalProperties": {"type": "number"}},
        "weight": {"type": "array", "items": {"type": "number"}},
        "labels": {},
    },
}


def _pair_key(x: int, a: str) -> str:
    return f"{x}:{a}"


def model_to_dict(model: CtmdpModel) -> dict:
    doc = {
        "num_states": model.num_states,
        "actions": [list(a) for a in model.actions],
        "rates": {
            _pair_key(x, a): model.rates[x][i].tolist()
            for x in range(model.num_states)
            for i, a in enumerate(model.actions[x])
        },
        "cost": {
            _pair_key(x, a): float(model.cost[x][i])
            for x in range(model.num_states)
            for i, a in enumerate(model.actions[x])
        },
        "weight": model.weight.tolist(),
    }
    if model.labels is not None:
        doc["labels"] = model.labels
    return doc


def save_model(model: CtmdpModel) -> str:
    """Serialize to JSON text; floats use the shortest exact round-trip form."""
    return json.dumps(model_to_dict(model), indent=2)


def model_from_dict(doc: dict, validate: bool = True) -> CtmdpModel:
    try:
        jsonschema.validate(doc, MODEL_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{where}: {exc.message}") from None
    n = doc["num_states"]
    actions = doc["actions"]
    if len(actions) != n:
        raise SchemaError(f"actions: expected {n} lists, got {len(actions)}")
    if len(doc["weight"]) != n:
        raise SchemaError(f"weight: expected {n} entries, got {len(doc['weight'])}")
    known = {_pair_key(x, a) for x, acts in enumerate(actions) for a in acts}
    for key_name in ("rates", "cost"):
        extra = set(doc[key_name]) - known
        if extra:
            raise SchemaError(f"{key_name}: unknown state:action keys {sorted(extra)}")
        missing = known - set(doc[key_name])
        if missing:
            raise SchemaError(f"{key_name}: missing entries {sorted(missing)}")
    for key, row in doc["rates"].items():
        if len(row) != n:
            raise SchemaError(f"rates/{key}: expected {n} entries, got {len(row)}")
    rates = {}
    cost = {}
    for x, acts in enumerate(actions):
        for a in acts:
            rates[(x, a)] = doc["rates"][_pair_key(x, a)]
            cost[(x, a)] = doc["cost"][_pair_key(x, a)]
    model = CtmdpModel.from_dicts(actions, rates, cost, doc["weight"], doc.get("labels"))
    if validate:
        report = validate_model(model)
        if not report.ok:
            raise InvariantError(report)
    return model


def load_model(text: str, validate: bool = True) -> CtmdpModel:
    """Parse a JSON model document; raises a distinct :class:`ModelError` per failure kind."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelParseError(str(exc)) from None
    return model_from_dict(doc, validate=validate)
