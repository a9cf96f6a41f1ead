"""Search-space definition, validation, scaling, sampling, and conditional
activation, plus the combinatorial decoding helpers used to flatten
permutation/subset spaces into integer lattices.

A search space is a list of root :class:`ParameterSpec` trees. Child
parameters are active only when their parent is active and the parent's
assigned value is one of the child edge's ``parent_values``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import CodeOutOfRange, InfeasibleValue, InvalidSpec, UnknownParameter

ParamValue = float | int | str


class ParameterKind(str, Enum):
    DOUBLE = "DOUBLE"
    INTEGER = "INTEGER"
    DISCRETE = "DISCRETE"
    CATEGORICAL = "CATEGORICAL"


class ScaleKind(str, Enum):
    LINEAR = "LINEAR"
    LOG = "LOG"


NUMERIC_KINDS = (ParameterKind.DOUBLE, ParameterKind.INTEGER, ParameterKind.DISCRETE)


@dataclass
class ChildSpec:
    """One conditional edge: ``spec`` is active when the parent's assigned
    value is in ``parent_values``."""

    parent_values: list[ParamValue]
    spec: "ParameterSpec"

    def to_json(self) -> dict:
        return {"parent_values": list(self.parent_values), "spec": self.spec.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "ChildSpec":
        return cls(
            parent_values=list(obj["parent_values"]),
            spec=ParameterSpec.from_json(obj["spec"]),
        )


@dataclass
class ParameterSpec:
    name: str
    kind: ParameterKind
    bounds: tuple[float, float] | None = None
    feasible_values: list[ParamValue] | None = None
    scale: ScaleKind | None = None
    children: list[ChildSpec] = field(default_factory=list)

    def __post_init__(self):
        self.kind = ParameterKind(self.kind)
        if self.scale is not None:
            self.scale = ScaleKind(self.scale)
        self.validate_spec()

    # -- constructors ------------------------------------------------------

    @classmethod
    def double(cls, name, low, high, scale=ScaleKind.LINEAR, children=()):
        return cls(name, ParameterKind.DOUBLE, bounds=(float(low), float(high)),
                   scale=ScaleKind(scale), children=list(children))

    @classmethod
    def integer(cls, name, low, high, scale=ScaleKind.LINEAR, children=()):
        return cls(name, ParameterKind.INTEGER, bounds=(int(low), int(high)),
                   scale=ScaleKind(scale), children=list(children))

    @classmethod
    def discrete(cls, name, values, scale=ScaleKind.LINEAR, children=()):
        return cls(name, ParameterKind.DISCRETE, feasible_values=[float(v) for v in values],
                   scale=ScaleKind(scale), children=list(children))

    @classmethod
    def categorical(cls, name, values, children=()):
        return cls(name, ParameterKind.CATEGORICAL, feasible_values=list(values),
                   children=list(children))

    # -- structural invariants --------------------------------------------

    def validate_spec(self) -> None:
        k = self.kind
        if k in (ParameterKind.DOUBLE, ParameterKind.INTEGER):
            if self.bounds is None:
                raise InvalidSpec(f"{self.name}: {k.value} requires bounds")
            # canonical numeric types, whatever the wire delivered
            if k is ParameterKind.DOUBLE:
                self.bounds = (float(self.bounds[0]), float(self.bounds[1]))
            else:
                self.bounds = (int(self.bounds[0]), int(self.bounds[1]))
            low, high = self.bounds
            if low > high:
                raise InvalidSpec(f"{self.name}: low {low} > high {high}")
            if self.scale is None:
                self.scale = ScaleKind.LINEAR
            if self.scale is ScaleKind.LOG and low <= 0:
                raise InvalidSpec(f"{self.name}: LOG scale requires low > 0")
        elif k is ParameterKind.DISCRETE:
            vals = self.feasible_values
            if not vals:
                raise InvalidSpec(f"{self.name}: DISCRETE requires >=1 feasible value")
            self.feasible_values = vals = [float(v) for v in vals]
            if any(vals[i] >= vals[i + 1] for i in range(len(vals) - 1)):
                raise InvalidSpec(f"{self.name}: DISCRETE values must strictly increase")
            if self.scale is None:
                self.scale = ScaleKind.LINEAR
        elif k is ParameterKind.CATEGORICAL:
            vals = self.feasible_values
            if not vals:
                raise InvalidSpec(f"{self.name}: CATEGORICAL requires >=1 value")
            if len(set(vals)) != len(vals):
                raise InvalidSpec(f"{self.name}: CATEGORICAL values must be unique")
            if self.scale is not None:
                raise InvalidSpec(f"{self.name}: CATEGORICAL takes no scale")
        for child in self.children:
            for pv in child.parent_values:
                if not self.is_feasible(pv):
                    raise InvalidSpec(
                        f"{self.name}: child {child.spec.name} keyed on infeasible "
                        f"parent value {pv!r}")
        names = [c.spec.name for c in self.children]
        if len(set(names)) != len(names):
            raise InvalidSpec(f"{self.name}: duplicate child parameter names")

    def is_feasible(self, value) -> bool:
        k = self.kind
        if isinstance(value, bool):
            return False
        if k is ParameterKind.DOUBLE:
            return isinstance(value, (int, float)) and self.bounds[0] <= value <= self.bounds[1]
        if k is ParameterKind.INTEGER:
            return (isinstance(value, (int, float)) and float(value).is_integer()
                    and self.bounds[0] <= value <= self.bounds[1])
        if k is ParameterKind.DISCRETE:
            return isinstance(value, (int, float)) and any(value == v for v in self.feasible_values)
        return isinstance(value, str) and value in self.feasible_values

    def children_for(self, value) -> list["ParameterSpec"]:
        """Child specs activated by this assigned parent value."""
        return [c.spec for c in self.children
                if any(value == pv for pv in c.parent_values)]

    # -- JSON --------------------------------------------------------------

    def to_json(self) -> dict:
        obj: dict = {"name": self.name, "kind": self.kind.value}
        if self.bounds is not None:
            obj["bounds"] = list(self.bounds)
        if self.feasible_values is not None:
            obj["feasible_values"] = list(self.feasible_values)
        if self.scale is not None:
            obj["scale"] = self.scale.value
        if self.children:
            obj["children"] = [c.to_json() for c in self.children]
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ParameterSpec":
        kind = ParameterKind(obj["kind"])
        bounds = tuple(obj["bounds"]) if "bounds" in obj else None
        if bounds is not None and kind is ParameterKind.INTEGER:
            bounds = (int(bounds[0]), int(bounds[1]))
        return cls(
            name=obj["name"],
            kind=kind,
            bounds=bounds,
            feasible_values=list(obj["feasible_values"]) if "feasible_values" in obj else None,
            scale=ScaleKind(obj["scale"]) if "scale" in obj else None,
            children=[ChildSpec.from_json(c) for c in obj.get("children", [])],
        )


@dataclass
class ParameterAssignment:
    """One point of the search space: parameter name -> value."""

    values: dict[str, ParamValue] = field(default_factory=dict)

    def to_json(self) -> dict:
        return dict(self.values)

    @classmethod
    def from_json(cls, obj: dict) -> "ParameterAssignment":
        return cls(dict(obj))

    def __eq__(self, other):
        if isinstance(other, ParameterAssignment):
            return self.values == other.values
        return NotImplemented


@dataclass
class Violation:
    kind: str  # OutOfBounds | MissingActive | PresentButInactive | TypeMismatch
    parameter: str
    message: str


def validate_space(space: Sequence[ParameterSpec]) -> None:
    """Checks sibling-name uniqueness at every nesting level."""
    names = [p.name for p in space]
    if len(set(names)) != len(names):
        raise InvalidSpec("duplicate parameter names among siblings")
    for p in space:
        for child in p.children:
            child.spec.validate_spec()
        validate_space([c.spec for c in p.children])


def _declared_names(space: Sequence[ParameterSpec]) -> set[str]:
    out = set()
    stack = list(space)
    while stack:
        p = stack.pop()
        out.add(p.name)
        stack.extend(c.spec for c in p.children)
    return out


def active_specs(space: Sequence[ParameterSpec],
                 assignment: ParameterAssignment) -> dict[str, ParameterSpec]:
    """Name -> spec for every parameter active under ``assignment``.

    Roots are always active; a child is active when its parent is active,
    assigned, and the assigned value matches the child edge.
    """
    out: dict[str, ParameterSpec] = {}

    def walk(spec: ParameterSpec):
        out[spec.name] = spec
        if spec.name in assignment.values:
            for child in spec.children_for(assignment.values[spec.name]):
                walk(child)

    for root in space:
        walk(root)
    return out


def active_parameters(space: Sequence[ParameterSpec],
                      assignment: ParameterAssignment) -> set[str]:
    """Set of active parameter names; raises UnknownParameter for assignment
    keys that are not declared anywhere in the space."""
    declared = _declared_names(space)
    for name in assignment.values:
        if name not in declared:
            raise UnknownParameter(f"parameter {name!r} not in the search space")
    return set(active_specs(space, assignment))


def validate_assignment(space: Sequence[ParameterSpec],
                        assignment: ParameterAssignment) -> list[Violation]:
    """Empty list iff the assignment is exactly the active parameters, all
    in-bounds and well-typed. Never raises; reports violations instead."""
    violations: list[Violation] = []
    active = active_specs(space, assignment)

    for name in assignment.values:
        if name not in active:
            violations.append(Violation(
                "PresentButInactive", name,
                f"{name!r} is assigned but not active under this assignment"))

    for name, spec in active.items():
        if name not in assignment.values:
            violations.append(Violation(
                "MissingActive", name, f"active parameter {name!r} is unassigned"))
            continue
        value = assignment.values[name]
        k = spec.kind
        if k in (ParameterKind.DOUBLE, ParameterKind.INTEGER, ParameterKind.DISCRETE):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                violations.append(Violation(
                    "TypeMismatch", name, f"{name!r} expects a number, got {value!r}"))
                continue
            if k is ParameterKind.INTEGER and not float(value).is_integer():
                violations.append(Violation(
                    "TypeMismatch", name, f"{name!r} expects an integer, got {value!r}"))
                continue
        else:
            if not isinstance(value, str):
                violations.append(Violation(
                    "TypeMismatch", name, f"{name!r} expects a string, got {value!r}"))
                continue
        if not spec.is_feasible(value):
            violations.append(Violation(
                "OutOfBounds", name, f"{value!r} is not feasible for {name!r}"))
    return violations


# -- scaling ----------------------------------------------------------------


def scale_to_unit(spec: ParameterSpec, value) -> float:
    """Maps a feasible value into [0,1] under the spec's scale.

    LINEAR: (v-low)/(high-low); LOG: same in log space; DISCRETE/CATEGORICAL:
    index/(count-1), 0.5 for a single-element set.
    """
    if not spec.is_feasible(value):
        raise InfeasibleValue(f"{value!r} infeasible for {spec.name}")
    if spec.kind in (ParameterKind.DOUBLE, ParameterKind.INTEGER):
        low, high = spec.bounds
        if low == high:
            return 0.5
        if spec.scale is ScaleKind.LOG:
            return (math.log(value) - math.log(low)) / (math.log(high) - math.log(low))
        return (value - low) / (high - low)
    values = spec.feasible_values
    if len(values) == 1:
        return 0.5
    index = next(i for i, v in enumerate(values) if v == value)
    return index / (len(values) - 1)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def unscale_from_unit(spec: ParameterSpec, u: float) -> ParamValue:
    """Inverse of scale_to_unit; INTEGER/DISCRETE/CATEGORICAL round to the
    nearest grid index (half-up)."""
    u = min(max(float(u), 0.0), 1.0)
    if spec.kind is ParameterKind.DOUBLE:
        low, high = spec.bounds
        if low == high:
            return low
        if spec.scale is ScaleKind.LOG:
            raw = math.exp(math.log(low) + u * (math.log(high) - math.log(low)))
        else:
            raw = low + u * (high - low)
        return min(max(raw, low), high)  # exp/mul can overshoot by an ulp
    if spec.kind is ParameterKind.INTEGER:
        low, high = spec.bounds
        if low == high:
            return int(low)
        if spec.scale is ScaleKind.LOG:
            raw = math.exp(math.log(low) + u * (math.log(high) - math.log(low)))
        else:
            raw = low + u * (high - low)
        return int(min(max(_round_half_up(raw), low), high))
    values = spec.feasible_values
    if len(values) == 1:
        return values[0]
    index = min(_round_half_up(u * (len(values) - 1)), len(values) - 1)
    return values[index]


# -- sampling ----------------------------------------------------------------


def sample_random(space: Sequence[ParameterSpec],
                  rng: np.random.Generator) -> ParameterAssignment:
    """Uniform draw in scaled space for each active parameter, descending
    into children once the parent's value is known."""
    values: dict[str, ParamValue] = {}

    def draw(spec: ParameterSpec):
        u = float(rng.random())
        values[spec.name] = unscale_from_unit(spec, u)
        for child in spec.children_for(values[spec.name]):
            draw(child)

    for root in space:
        draw(root)
    return ParameterAssignment(values)


def repair_assignment(space: Sequence[ParameterSpec],
                      partial: dict[str, ParamValue],
                      rng: np.random.Generator) -> ParameterAssignment:
    """Builds a valid assignment from a partial one: keeps feasible supplied
    values, draws missing active parameters, drops inactive leftovers."""
    values: dict[str, ParamValue] = {}

    def settle(spec: ParameterSpec):
        supplied = partial.get(spec.name)
        if supplied is not None and spec.is_feasible(supplied):
            values[spec.name] = supplied
        else:
            values[spec.name] = unscale_from_unit(spec, float(rng.random()))
        for child in spec.children_for(values[spec.name]):
            settle(child)

    for root in space:
        settle(root)
    return ParameterAssignment(values)


# -- combinatorial reparameterization ----------------------------------------


def _sequential_removal(code: Sequence[int], n: int) -> list[int]:
    if any(not isinstance(c, (int, np.integer)) or isinstance(c, bool) for c in code):
        raise CodeOutOfRange("code entries must be integers")
    items = list(range(n))
    picked = []
    for i, c in enumerate(code):
        if not 0 <= c <= n - 1 - i:
            raise CodeOutOfRange(f"code[{i}]={c} outside [0, {n - 1 - i}]")
        picked.append(items.pop(c))
    return picked


def lehmer_decode(code: Sequence[int]) -> list[int]:
    """Decodes a Lehmer code over [n] x [n-1] x ... x [1] into a permutation
    of range(n); a bijection from the code lattice onto all permutations."""
    return _sequential_removal(code, len(code))


def subset_decode(code: Sequence[int], n: int) -> set[int]:
    """Decodes a code over [n] x [n-1] x ... x [n-k+1] into a k-subset of
    range(n) by sequential removal; each subset has exactly k! preimages."""
    if len(code) > n:
        raise CodeOutOfRange(f"code length {len(code)} exceeds n={n}")
    return set(_sequential_removal(code, n))


def grid_values(spec: ParameterSpec, double_resolution: int = 10) -> list[ParamValue]:
    """The lattice points one parameter contributes to a grid search."""
    if spec.kind is ParameterKind.DOUBLE:
        r = max(int(double_resolution), 2)
        return [unscale_from_unit(spec, i / (r - 1)) for i in range(r)]
    if spec.kind is ParameterKind.INTEGER:
        low, high = spec.bounds
        return list(range(int(low), int(high) + 1))
    return list(spec.feasible_values)


def grid_assignments(space: Sequence[ParameterSpec],
                     double_resolution: int = 10) -> Iterable[ParameterAssignment]:
    """Row-major enumeration of the full (conditional) lattice: earlier
    declared parameters vary slowest; active children expand within their
    parent's value."""

    def expand(params: Sequence[ParameterSpec]):
        if not params:
            yield {}
            return
        head, rest = params[0], params[1:]
        for v in grid_values(head, double_resolution):
            for child_part in expand(head.children_for(v)):
                for rest_part in expand(rest):
                    yield {head.name: v, **child_part, **rest_part}

    for values in expand(list(space)):
        yield ParameterAssignment(values)
