"""
Probabilistic timed automata: domain types, the textual model language and the
static validator.

Model language (UTF-8, `#` starts a line comment):

    pta "name"
    clocks x, y
    location Start initial invariant x <= 5
    location End final
    edge Start -> L1 action a guard x >= 1 reset x weight 0.4
    edge Start -> L2 action a guard x >= 1 weight 0.6

Edges sharing (source, action, guard) form one probability distribution.
"""

from collections import defaultdict
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Literal, Optional, Sequence, Set, Tuple

import networkx as nx
from pydantic import BaseModel, Field
from textx import TextXSyntaxError, get_location, metamodel_from_str

from common.config.config import get_analysis_config
from common.utils.logger import get_logger

logger = get_logger(__name__)

RESERVED_CLOCKS = {"CLK"}

PTA_GRAMMAR = r"""
Model:
    'pta' name=STRING
    ('clocks' clocks+=ClockDecl[','])?
    statements*=Statement
;

ClockDecl: name=ID;

Statement: LocationDecl | EdgeDecl;

LocationDecl:
    'location' name=ID
    flags*=LocationFlag
    ('invariant' invariant=Conjunction)?
    ('label' labels+=ID[','])?
;

LocationFlag: 'initial' | 'final';

EdgeDecl:
    'edge' source=ID '->' target=ID
    ('action' action=ID)?
    ('guard' guard=Conjunction)?
    ('reset' resets+=ID[','])?
    'weight' weight=Decimal
;

Conjunction: atoms+=Atom['&&'];

Atom: left=ID ('-' right=ID)? op=Operator bound=Integer;

Operator: '<=' | '>=' | '==' | '<' | '>' | '=';

Decimal: /[0-9]+(\.[0-9]*)?([eE][-+]?[0-9]+)?/;

Integer: /-?[0-9]+/;

Comment: /#.*$/;
"""

_metamodel = None


def _get_metamodel():
    global _metamodel
    if _metamodel is None:
        _metamodel = metamodel_from_str(PTA_GRAMMAR, autokwd=True)
    return _metamodel


# =============================================================================
# Exceptions
# =============================================================================

class ParseError(Exception):
    """Syntax or name-resolution error in model text"""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.message = message
        self.line = line
        self.column = column
        where = f"line {line} col {column}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class ModelUsageError(Exception):
    """Raised when a model query gets arguments that do not describe the model"""

    def __init__(self, message: str):
        self.message = message
        super().__init__(message)


# =============================================================================
# Domain Types
# =============================================================================

Relop = Literal["<", "<=", ">=", ">"]


class ClockId(BaseModel):
    """A model clock. Index 0 is the reference clock, user clocks start at 1."""

    index: int = Field(..., ge=1, description="Matrix index of the clock")
    name: str = Field(..., description="Clock identifier")

    model_config = {"frozen": True, "extra": "forbid"}


class AtomicConstraint(BaseModel):
    """x - y ~ c, or x ~ c when right is None"""

    left: str = Field(..., description="Left clock name")
    right: Optional[str] = Field(None, description="Right clock name, None for the reference clock")
    relation: Relop = Field(..., description="Comparison operator")
    bound: int = Field(..., description="Integer constant in time units")

    model_config = {"frozen": True, "extra": "forbid"}

    @property
    def clocks(self) -> Tuple[str, ...]:
        return (self.left,) if self.right is None else (self.left, self.right)

    @property
    def is_upper_bound(self) -> bool:
        return self.right is None and self.relation in ("<", "<=")

    def render(self) -> str:
        lhs = self.left if self.right is None else f"{self.left} - {self.right}"
        return f"{lhs} {self.relation} {self.bound}"


class Guard(BaseModel):
    """Conjunction of atomic constraints; the empty conjunction is `true`"""

    conjuncts: Tuple[AtomicConstraint, ...] = Field(default=(), description="Conjuncts")

    model_config = {"frozen": True, "extra": "forbid"}

    @property
    def clocks(self) -> Set[str]:
        return {clock for atom in self.conjuncts for clock in atom.clocks}

    def render(self) -> str:
        return " && ".join(atom.render() for atom in self.conjuncts)


class Invariant(Guard):
    """Location invariant; the validator requires upper bounds only"""

    @property
    def bounded(self) -> bool:
        return any(atom.is_upper_bound for atom in self.conjuncts)


class Location(BaseModel):
    name: str = Field(..., description="Location identifier")
    initial: bool = Field(False, description="Initial location flag")
    final: bool = Field(False, description="Final (time-locked) location flag")
    invariant: Invariant = Field(default_factory=Invariant, description="Location invariant")
    labels: Tuple[str, ...] = Field(default=(), description="Atomic propositions")

    model_config = {"frozen": True, "extra": "forbid"}


class Edge(BaseModel):
    """One outcome of a probabilistic edge"""

    id: str = Field(..., description="Edge identifier e<index>")
    source: str = Field(..., description="Source location")
    action: Optional[str] = Field(None, description="Action name")
    guard: Guard = Field(default_factory=Guard, description="Enabling condition")
    resets: Tuple[str, ...] = Field(default=(), description="Clocks reset to zero")
    target: str = Field(..., description="Target location")
    weight: float = Field(..., description="Probability of this outcome")

    model_config = {"frozen": True, "extra": "forbid"}

    @property
    def distribution_key(self) -> Tuple[str, Optional[str], Guard]:
        return self.source, self.action, self.guard


class Pta(BaseModel):
    """A probabilistic timed automaton; immutable after parsing"""

    name: str = Field(..., description="Model name")
    clocks: Tuple[ClockId, ...] = Field(default=(), description="User clocks, index 1..|X|")
    locations: Tuple[Location, ...] = Field(..., description="Locations in declaration order")
    edges: Tuple[Edge, ...] = Field(default=(), description="Edges in declaration order")

    model_config = {"frozen": True, "extra": "forbid"}

    @property
    def clock_names(self) -> Tuple[str, ...]:
        return tuple(clock.name for clock in self.clocks)

    @property
    def location_names(self) -> Tuple[str, ...]:
        return tuple(location.name for location in self.locations)

    def location(self, name: str) -> Location:
        for location in self.locations:
            if location.name == name:
                return location
        raise ModelUsageError(f"Unknown location: {name}")

    def edge(self, edge_id: str) -> Edge:
        for edge in self.edges:
            if edge.id == edge_id:
                return edge
        raise ModelUsageError(f"Unknown edge: {edge_id}")

    def out_edges(self, location: str) -> List[Edge]:
        return [edge for edge in self.edges if edge.source == location]

    @property
    def initial_location(self) -> Location:
        initial = [location for location in self.locations if location.initial]
        if len(initial) != 1:
            raise ModelUsageError(f"Model {self.name} has {len(initial)} initial locations, expected 1")
        return initial[0]

    def with_weights(self, weights: Dict[str, float]) -> "Pta":
        """Copy of the model with some edge weights replaced"""
        edges = tuple(
            edge.model_copy(update={"weight": weights[edge.id]}) if edge.id in weights else edge
            for edge in self.edges
        )
        return self.model_copy(update={"edges": edges})


class Violation(BaseModel):
    """One failed static check"""

    kind: str = Field(..., description="Violation kind, e.g. FlatnessViolated")
    message: str = Field(..., description="Human readable description")
    severity: Literal["error", "warning"] = Field("error", description="Only errors make a model invalid")
    location: Optional[str] = Field(None, description="Offending location, if any")
    value: Optional[float] = Field(None, description="Offending value, e.g. a distribution sum")

    def __str__(self) -> str:
        return f"[{self.severity}] {self.kind}: {self.message}"


# =============================================================================
# Parsing and printing
# =============================================================================

def _position(obj) -> Tuple[Optional[int], Optional[int]]:
    try:
        loc = get_location(obj)
        return loc.get("line"), loc.get("col")
    except Exception:
        return None, None


def _semantic_error(obj, message: str) -> ParseError:
    line, column = _position(obj)
    return ParseError(message, line, column)


def _convert_conjunction(conjunction, clocks: Set[str]) -> Tuple[AtomicConstraint, ...]:
    if conjunction is None:
        return ()
    atoms: List[AtomicConstraint] = []
    for atom in conjunction.atoms:
        right = atom.right or None
        for clock in (atom.left, right):
            if clock is not None and clock not in clocks:
                raise _semantic_error(atom, f"unknown clock '{clock}'")
        bound = int(atom.bound)
        if atom.op in ("=", "=="):
            atoms.append(AtomicConstraint(left=atom.left, right=right, relation="<=", bound=bound))
            atoms.append(AtomicConstraint(left=atom.left, right=right, relation=">=", bound=bound))
        else:
            atoms.append(AtomicConstraint(left=atom.left, right=right, relation=atom.op, bound=bound))
    return tuple(atoms)


def parse_model(text: str) -> Pta:
    """
    Parse model text into a Pta

    Args:
        text: Model source in the model language

    Returns:
        Structurally well-formed Pta (run validate() for the semantic checks)

    Raises:
        ParseError: Syntax error, duplicate or unknown identifier, weight outside (0, 1]
    """
    try:
        tree = _get_metamodel().model_from_str(text)
    except TextXSyntaxError as err:
        raise ParseError(err.message, err.line, err.col)

    clocks: List[ClockId] = []
    clock_names: Set[str] = set()
    for decl in tree.clocks:
        if decl.name in RESERVED_CLOCKS:
            raise _semantic_error(decl, f"clock name '{decl.name}' is reserved")
        if decl.name in clock_names:
            raise _semantic_error(decl, f"duplicate clock '{decl.name}'")
        clock_names.add(decl.name)
        clocks.append(ClockId(index=len(clocks) + 1, name=decl.name))

    location_decls = [s for s in tree.statements if s.__class__.__name__ == "LocationDecl"]
    edge_decls = [s for s in tree.statements if s.__class__.__name__ == "EdgeDecl"]

    locations: List[Location] = []
    location_names: Set[str] = set()
    for decl in location_decls:
        if decl.name in location_names:
            raise _semantic_error(decl, f"duplicate location '{decl.name}'")
        location_names.add(decl.name)
        locations.append(Location(
            name=decl.name,
            initial="initial" in decl.flags,
            final="final" in decl.flags,
            invariant=Invariant(conjuncts=_convert_conjunction(decl.invariant, clock_names)),
            labels=tuple(decl.labels),
        ))

    edges: List[Edge] = []
    for decl in edge_decls:
        for endpoint in (decl.source, decl.target):
            if endpoint not in location_names:
                raise _semantic_error(decl, f"unknown location '{endpoint}'")
        for clock in decl.resets:
            if clock not in clock_names:
                raise _semantic_error(decl, f"unknown clock '{clock}' in reset")
        weight = float(decl.weight)
        if not 0.0 < weight <= 1.0:
            raise _semantic_error(decl, f"probability out of range: {decl.weight}")
        edges.append(Edge(
            id=f"e{len(edges)}",
            source=decl.source,
            action=decl.action or None,
            guard=Guard(conjuncts=_convert_conjunction(decl.guard, clock_names)),
            resets=tuple(decl.resets),
            target=decl.target,
            weight=weight,
        ))

    pta = Pta(name=tree.name, clocks=tuple(clocks), locations=tuple(locations), edges=tuple(edges))
    logger.debug(f"Parsed model {pta.name}: {len(pta.locations)} locations, "
                 f"{len(pta.edges)} edges, {len(pta.clocks)} clocks")
    return pta


def load_model(path: Path) -> Pta:
    """Read and parse a model file (UTF-8)"""
    return parse_model(Path(path).read_text(encoding="utf-8"))


def print_model(pta: Pta) -> str:
    """Canonical model text; parse_model(print_model(p)) == p"""
    lines = [f'pta "{pta.name}"']
    if pta.clocks:
        lines.append(f"clocks {', '.join(pta.clock_names)}")
    for location in pta.locations:
        parts = [f"location {location.name}"]
        if location.initial:
            parts.append("initial")
        if location.final:
            parts.append("final")
        if location.invariant.conjuncts:
            parts.append(f"invariant {location.invariant.render()}")
        if location.labels:
            parts.append(f"label {', '.join(location.labels)}")
        lines.append(" ".join(parts))
    for edge in pta.edges:
        parts = [f"edge {edge.source} -> {edge.target}"]
        if edge.action:
            parts.append(f"action {edge.action}")
        if edge.guard.conjuncts:
            parts.append(f"guard {edge.guard.render()}")
        if edge.resets:
            parts.append(f"reset {', '.join(edge.resets)}")
        parts.append(f"weight {edge.weight!r}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


# =============================================================================
# Cycles
# =============================================================================

def location_graph(pta: Pta) -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_nodes_from(pta.location_names)
    for edge in pta.edges:
        graph.add_edge(edge.source, edge.target)
    return graph


def simple_cycles(pta: Pta) -> List[List[str]]:
    """Simple cycles of the location graph, each rotated to start at its earliest-declared location"""
    order = {name: i for i, name in enumerate(pta.location_names)}
    cycles = []
    for cycle in nx.simple_cycles(location_graph(pta)):
        start = min(range(len(cycle)), key=lambda i: order[cycle[i]])
        cycles.append(cycle[start:] + cycle[:start])
    cycles.sort(key=lambda c: [order[name] for name in c])
    return cycles


def cycle_of(pta: Pta, location: str, cycles: Optional[Sequence[List[str]]] = None) -> Optional[List[str]]:
    """The simple cycle through a location, or None"""
    for cycle in (cycles if cycles is not None else simple_cycles(pta)):
        if location in cycle:
            return list(cycle)
    return None


def cycle_edges(pta: Pta, cycle: Sequence[str]) -> List[Edge]:
    """
    Edges of a cycle in traversal order, edge i leading from cycle[i] to cycle[i + 1]

    Raises:
        ModelUsageError: The locations do not form a cycle, or a step is ambiguous
    """
    if not cycle:
        raise ModelUsageError("Empty location list is not a cycle")
    if len(set(cycle)) != len(cycle):
        raise ModelUsageError(f"Locations repeat in {list(cycle)}, not a simple cycle")
    edges = []
    for i, source in enumerate(cycle):
        target = cycle[(i + 1) % len(cycle)]
        step = [edge for edge in pta.edges if edge.source == source and edge.target == target]
        if not step:
            raise ModelUsageError(f"No edge {source} -> {target}: {list(cycle)} is not a cycle")
        if len(step) > 1:
            raise ModelUsageError(f"Parallel edges {source} -> {target} on cycle {list(cycle)}")
        edges.append(step[0])
    return edges


def active_clocks(pta: Pta, cycle_locations: Sequence[str]) -> FrozenSet[str]:
    """
    Clocks that may influence the cycle's future: those in an invariant of a
    cycle location or in a guard of a cycle edge. Resets only assign zero, so
    no value propagates from one clock to another.

    Raises:
        ModelUsageError: cycle_locations is not a cycle of the location graph
    """
    edges = cycle_edges(pta, cycle_locations)
    active: Set[str] = set()
    for name in cycle_locations:
        active |= pta.location(name).invariant.clocks
    for edge in edges:
        active |= edge.guard.clocks
    return frozenset(active)


# =============================================================================
# Validation
# =============================================================================

def _check_distributions(pta: Pta, tolerance: float) -> List[Violation]:
    violations = []
    by_location: Dict[str, Dict[tuple, List[Edge]]] = defaultdict(lambda: defaultdict(list))
    for edge in pta.edges:
        if not 0.0 < edge.weight <= 1.0:
            violations.append(Violation(
                kind="WeightOutOfRange", location=edge.source, value=edge.weight,
                message=f"Edge {edge.id} has weight {edge.weight} outside (0, 1]"))
        by_location[edge.source][edge.distribution_key].append(edge)

    for location, distributions in by_location.items():
        if len(distributions) > 1:
            violations.append(Violation(
                kind="NotPurelyProbabilistic", location=location,
                message=f"Location {location} has {len(distributions)} distributions, expected one"))
        for edges in distributions.values():
            total = sum(edge.weight for edge in edges)
            if abs(total - 1.0) > tolerance:
                violations.append(Violation(
                    kind="DistributionNotNormalized", location=location, value=round(total, 12),
                    message=f"Weights out of {location} sum to {total:g}"))
    return violations


def _check_flatness(pta: Pta, cycles: List[List[str]]) -> List[Violation]:
    violations = []
    seen: Dict[str, int] = {}
    for i, cycle in enumerate(cycles):
        for name in cycle:
            if name in seen:
                violations.append(Violation(
                    kind="FlatnessViolated", location=name,
                    message=f"Location {name} lies on more than one simple cycle"))
            seen[name] = i
        for j, source in enumerate(cycle):
            target = cycle[(j + 1) % len(cycle)]
            parallel = [e for e in pta.edges if e.source == source and e.target == target]
            if len(parallel) > 1:
                violations.append(Violation(
                    kind="FlatnessViolated", location=source,
                    message=f"Parallel edges {source} -> {target} give more than one cycle"))
    unique = {}
    for violation in violations:
        unique.setdefault(violation.message, violation)
    return list(unique.values())


def _check_locations(pta: Pta) -> List[Violation]:
    violations = []
    initial = [location.name for location in pta.locations if location.initial]
    if len(initial) != 1:
        violations.append(Violation(
            kind="InitialLocationCount", value=float(len(initial)),
            message=f"Expected exactly one initial location, found {len(initial)}"))
    for location in pta.locations:
        not_upper = [atom for atom in location.invariant.conjuncts if not atom.is_upper_bound]
        if not_upper:
            violations.append(Violation(
                kind="InvariantNotUpperBound", location=location.name,
                message=f"Invariant of {location.name} has non upper-bound conjunct "
                        f"{not_upper[0].render()}"))
        if location.final:
            if pta.out_edges(location.name):
                violations.append(Violation(
                    kind="FinalNotTimeLocked", location=location.name,
                    message=f"Final location {location.name} has outgoing edges"))
        elif not location.invariant.bounded:
            violations.append(Violation(
                kind="UnboundedInvariant", location=location.name,
                message=f"Location {location.name} lets time grow without bound"))
    return violations


def _check_zeno(pta: Pta, cycles: List[List[str]]) -> List[Violation]:
    violations = []
    for cycle in cycles:
        edges = [e for e in pta.edges if e.source in cycle and e.target in cycle
                 and cycle[(cycle.index(e.source) + 1) % len(cycle)] == e.target]
        reset = {clock for edge in edges for clock in edge.resets}
        lower_bounded = {
            atom.left for edge in edges for atom in edge.guard.conjuncts
            if atom.right is None and ((atom.relation == ">=" and atom.bound > 0)
                                       or (atom.relation == ">" and atom.bound >= 0))
        }
        if not reset & lower_bounded:
            violations.append(Violation(
                kind="ZenoCycle", severity="warning", location=cycle[0],
                message=f"Cycle {' -> '.join(cycle)} may iterate without time passing"))
    return violations


def validate(pta: Pta) -> List[Violation]:
    """
    Static checks of a parsed model

    Guards and invariants are conjunctions by construction, so convexity needs no check.

    Returns:
        All violations; an empty list (or warnings only) means the model can be analysed
    """
    tolerance = get_analysis_config().weight_tolerance
    cycles = simple_cycles(pta)
    violations = (_check_locations(pta)
                  + _check_distributions(pta, tolerance)
                  + _check_flatness(pta, cycles)
                  + _check_zeno(pta, cycles))
    for violation in violations:
        if violation.severity == "warning":
            logger.warning(f"{pta.name}: {violation}")
        else:
            logger.debug(f"{pta.name}: {violation}")
    return violations


def errors_only(violations: Iterable[Violation]) -> List[Violation]:
    return [violation for violation in violations if violation.severity == "error"]


__all__ = [
    'AtomicConstraint',
    'ClockId',
    'Edge',
    'Guard',
    'Invariant',
    'Location',
    'ModelUsageError',
    'ParseError',
    'Pta',
    'Violation',
    'active_clocks',
    'cycle_edges',
    'cycle_of',
    'errors_only',
    'load_model',
    'location_graph',
    'parse_model',
    'print_model',
    'simple_cycles',
    'validate',
]
