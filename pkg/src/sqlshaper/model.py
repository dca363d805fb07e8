"""Domain types shared across the package: value domains, templates, queries, specs."""

from __future__ import annotations

import datetime as _dt
import math
import re
from dataclasses import dataclass, field
from typing import Any, Mapping

PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

# Per-column cap on categorical values kept in a domain.
CATEGORICAL_CAP = 1000

COST_METRICS = ("plan_cost", "cardinality")


class ModelError(ValueError):
    pass


class MissingBinding(ModelError):
    def __init__(self, name: str):
        super().__init__(f"no binding for placeholder {name!r}")
        self.name = name


class OutOfDomain(ModelError):
    def __init__(self, name: str, value: Any):
        super().__init__(f"value {value!r} is outside the domain of placeholder {name!r}")
        self.name = name
        self.value = value


@dataclass(frozen=True)
class ValueDomain:
    """Values a placeholder may take.

    ``kind`` is ``"numeric"`` (closed range ``[low, high]``) or ``"categorical"``
    (an ordered tuple of values). ``integral`` restricts a numeric range to
    integers; ``temporal`` marks a numeric range of ordinal days that renders as
    an ISO date.
    """

    kind: str
    low: float = 0.0
    high: float = 0.0
    values: tuple = ()
    distinct_count: int = 0
    integral: bool = False
    temporal: bool = False

    def __post_init__(self):
        if self.kind == "numeric":
            if not (math.isfinite(self.low) and math.isfinite(self.high)):
                raise ModelError("numeric domain bounds must be finite")
            if self.low > self.high:
                raise ModelError(f"numeric domain has min {self.low} > max {self.high}")
        elif self.kind == "categorical":
            if not self.values:
                raise ModelError("categorical domain needs at least one value")
            if len(set(self.values)) != len(self.values):
                raise ModelError("categorical domain values must be distinct")
        else:
            raise ModelError(f"unknown domain kind {self.kind!r}")
        if self.distinct_count < 0:
            raise ModelError("distinct_count must be non-negative")

    @classmethod
    def numeric(cls, low, high, distinct_count: int = 0, integral: bool = False,
                temporal: bool = False) -> "ValueDomain":
        return cls("numeric", low=float(low), high=float(high), distinct_count=int(distinct_count),
                   integral=integral or temporal, temporal=temporal)

    @classmethod
    def categorical(cls, values, distinct_count: int | None = None) -> "ValueDomain":
        seen = dict.fromkeys(values)
        vals = tuple(list(seen)[:CATEGORICAL_CAP])
        # distinct_count keeps the true count when the value list is capped
        dc = len(seen) if distinct_count is None else max(int(distinct_count), len(vals))
        return cls("categorical", values=vals, distinct_count=dc)

    @property
    def is_numeric(self) -> bool:
        return self.kind == "numeric"

    def contains(self, value) -> bool:
        if self.kind == "categorical":
            return value in self.values
        if self.temporal and isinstance(value, _dt.date):
            value = value.toordinal()
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        if self.integral and float(value) != math.floor(float(value)):
            return False
        return self.low <= value <= self.high

    def cardinality(self) -> int:
        """Number of distinct bindings the domain admits."""
        if self.kind == "categorical":
            return len(self.values)
        if self.integral:
            return int(self.high) - int(self.low) + 1
        return max(self.distinct_count, 1)

    def midpoint(self):
        if self.kind == "categorical":
            return self.values[0]
        mid = (self.low + self.high) / 2
        if self.integral:
            mid = int(math.floor(mid))
        if self.temporal:
            return _dt.date.fromordinal(int(mid))
        return mid

    def from_unit(self, u: float):
        """Map ``u`` in [0, 1) onto the domain (floor-stratified for discrete kinds)."""
        u = min(max(float(u), 0.0), math.nextafter(1.0, 0.0))
        if self.kind == "categorical":
            return self.values[int(u * len(self.values))]
        if self.integral:
            span = int(self.high) - int(self.low) + 1
            v = int(self.low) + int(u * span)
            return _dt.date.fromordinal(v) if self.temporal else v
        return self.low + u * (self.high - self.low)

    def to_unit(self, value) -> float:
        """Position of ``value`` in [0, 1]; inverse of :meth:`from_unit` up to strata."""
        if self.kind == "categorical":
            return (self.values.index(value) + 0.5) / len(self.values)
        if isinstance(value, _dt.date):
            value = value.toordinal()
        if self.integral:
            span = int(self.high) - int(self.low) + 1
            return (float(value) - self.low + 0.5) / span
        if self.high == self.low:
            return 0.5
        return (float(value) - self.low) / (self.high - self.low)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "distinct_count": self.distinct_count}
        if self.kind == "numeric":
            d.update(low=self.low, high=self.high, integral=self.integral, temporal=self.temporal)
        else:
            d["values"] = list(self.values)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ValueDomain":
        if d["kind"] == "numeric":
            return cls.numeric(d["low"], d["high"], d.get("distinct_count", 0),
                               d.get("integral", False), d.get("temporal", False))
        return cls.categorical(d["values"], d.get("distinct_count"))


@dataclass(frozen=True)
class Placeholder:
    name: str
    column_ref: tuple[str, str]
    domain: ValueDomain

    def __post_init__(self):
        if not NAME_RE.match(self.name):
            raise ModelError(f"bad placeholder name {self.name!r}")


@dataclass(frozen=True)
class SqlTemplate:
    id: str
    sql_text: str
    placeholders: tuple[Placeholder, ...] = ()
    spec_id: str | None = None
    lineage: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "placeholders", tuple(self.placeholders))
        names = [p.name for p in self.placeholders]
        if len(set(names)) != len(names):
            raise ModelError(f"template {self.id}: duplicate placeholder names")
        markers = set(PLACEHOLDER_RE.findall(self.sql_text))
        if markers != set(names):
            raise ModelError(
                f"template {self.id}: markers {sorted(markers)} do not match placeholders {sorted(names)}")

    @property
    def domains(self) -> list[ValueDomain]:
        return [p.domain for p in self.placeholders]

    def placeholder(self, name: str) -> Placeholder:
        for p in self.placeholders:
            if p.name == name:
                return p
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "sql_text": self.sql_text,
            "spec_id": self.spec_id,
            "lineage": self.lineage,
            "placeholders": [
                {"name": p.name, "column_ref": list(p.column_ref), "domain": p.domain.to_dict()}
                for p in self.placeholders
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SqlTemplate":
        phs = [Placeholder(p["name"], tuple(p["column_ref"]), ValueDomain.from_dict(p["domain"]))
               for p in d.get("placeholders", [])]
        return cls(d["id"], d["sql_text"], tuple(phs), d.get("spec_id"), d.get("lineage"))


@dataclass(frozen=True)
class CostValue:
    metric: str
    value: float

    def __post_init__(self):
        if self.metric not in COST_METRICS:
            raise ModelError(f"unknown cost metric {self.metric!r}")
        if not (self.value >= 0) or math.isinf(self.value):
            raise ModelError(f"cost must be a finite non-negative number, got {self.value}")


@dataclass(frozen=True)
class SqlQuery:
    template_id: str
    bindings: Mapping[str, Any]
    sql_text: str
    cost: CostValue | None = None


@dataclass(frozen=True)
class TemplateSpec:
    id: str
    numeric_constraints: Mapping[str, int] = field(default_factory=dict)
    nl_instructions: tuple[str, ...] = ()

    KEYS = ("num_tables_accessed", "num_joins", "num_aggregations")

    def __post_init__(self):
        object.__setattr__(self, "nl_instructions", tuple(self.nl_instructions))
        for k, v in self.numeric_constraints.items():
            if k not in self.KEYS:
                raise ModelError(f"spec {self.id}: unknown numeric constraint {k!r}")
            if not isinstance(v, int) or v < 0:
                raise ModelError(f"spec {self.id}: {k} must be a non-negative integer")
        if not self.numeric_constraints and not self.nl_instructions:
            raise ModelError(f"spec {self.id}: at least one constraint is required")

    @property
    def num_joins(self) -> int | None:
        return self.numeric_constraints.get("num_joins")

    def to_dict(self) -> dict:
        return {"id": self.id, **dict(self.numeric_constraints),
                "nl_instructions": list(self.nl_instructions)}

    @classmethod
    def from_dict(cls, d: Mapping, default_id: str | None = None) -> "TemplateSpec":
        nums = {k: int(d[k]) for k in cls.KEYS if d.get(k) is not None}
        nl = d.get("nl_instructions") or d.get("instructions") or ()
        if isinstance(nl, str):
            nl = (nl,)
        return cls(str(d.get("id", default_id)), nums, tuple(nl))


def render_literal(value) -> str:
    """SQL literal for a binding value."""
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ModelError(f"cannot render non-finite value {value}")
        if value == math.floor(value) and abs(value) < 1e15:
            return str(int(value))
        return repr(value)
    if isinstance(value, (_dt.date, _dt.datetime)):
        return "'" + value.isoformat() + "'"
    if hasattr(value, "item"):  # numpy scalar
        return render_literal(value.item())
    return "'" + str(value).replace("'", "''") + "'"


def instantiate(template: SqlTemplate, bindings: Mapping[str, Any]) -> SqlQuery:
    values = {}
    for p in template.placeholders:
        if p.name not in bindings:
            raise MissingBinding(p.name)
        v = bindings[p.name]
        if hasattr(v, "item") and not isinstance(v, (str, bytes)):
            v = v.item()
        if not p.domain.contains(v):
            raise OutOfDomain(p.name, v)
        values[p.name] = v
    sql = PLACEHOLDER_RE.sub(lambda m: render_literal(values[m.group(1)]), template.sql_text)
    return SqlQuery(template.id, values, sql)
