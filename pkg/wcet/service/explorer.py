"""
Zone-graph exploration without acceleration.

ZoneGraphSearch walks the zone graph depth first with a LIFO WAIT list,
expanding each state over all of its outgoing edges at once and adding
`alpha' x clk_advance` per kept step. Cycles are unrolled explicitly; the step
that closes an iteration is kept only while its probability stays above
delta. The accelerating search in wcet.service.engine subclasses it.
"""

import math
import time
from itertools import count
from typing import Dict, List, Optional, Set, Tuple

from pydantic import BaseModel, Field

from common.config.config import get_analysis_config
from common.utils.logger import get_logger
from wcet.core.dbm import Dbm, UnboundedDelay, clk_advance, conjoin, reset, up
from wcet.core.model import Edge, ModelUsageError, Pta, cycle_edges, cycle_of, simple_cycles
from wcet.core.records import (
    EXPLORING,
    FINISHED,
    Report,
    Subrun,
    SubrunStep,
    SymState,
    cycle_label,
)
from wcet.service.accel import NonConvergingCycle

logger = get_logger(__name__)


class EdgeDisabled(Exception):
    """The successor zone of an edge is empty"""

    def __init__(self, edge_id: str):
        self.edge_id = edge_id
        super().__init__(f"Edge {edge_id} is disabled: successor zone is empty")


class WcetUnbounded(Exception):
    """Time can grow without bound somewhere in the zone graph"""

    def __init__(self, location: str, cycle: Optional[Tuple[str, ...]] = None, reason: str = ""):
        self.location = location
        self.cycle = cycle
        self.reason = reason
        where = f"cycle {cycle_label(cycle)}" if cycle else f"location {location}"
        detail = f" ({reason})" if reason else ""
        super().__init__(f"WCET may be unbounded at {where}{detail}")


class SubrunUsageError(Exception):
    def __init__(self, message: str):
        self.message = message
        super().__init__(message)


# =============================================================================
# Symbolic successors
# =============================================================================

def successor_zone(zone: Dbm, edge: Edge, pta: Pta) -> Dbm:
    """
    Zone after letting time pass in the source location and taking the edge

    Raises:
        EdgeDisabled: The resulting zone is empty
    """
    source_inv = pta.location(edge.source).invariant.conjuncts
    target_inv = pta.location(edge.target).invariant.conjuncts
    delayed = conjoin(up(conjoin(zone, source_inv)), source_inv)
    taken = reset(conjoin(delayed, edge.guard.conjuncts), edge.resets)
    result = conjoin(taken, target_inv)
    if result.is_empty():
        raise EdgeDisabled(edge.id)
    return result


def succ(s: SymState, e: Edge, pta: Pta) -> SymState:
    """
    Symbolic successor of a state along an edge. The cycle context is not
    updated here; the search owns that policy.

    Raises:
        EdgeDisabled: The edge cannot be taken from s
    """
    if e.source != s.loc:
        raise ModelUsageError(f"Edge {e.id} leaves {e.source}, not {s.loc}")
    zone = successor_zone(s.zone, e, pta)
    return SymState(loc=e.target, zone=zone, alpha=s.alpha * e.weight, cnt=s.cnt,
                    cycle=s.cycle, entry=s.entry, visit=s.visit, parent=s, model=s.model)


def initial_state(pta: Pta) -> SymState:
    """Initial location with every clock (CLK included) at zero, under its invariant"""
    location = pta.initial_location
    zone = conjoin(Dbm.zero(pta.clock_names), location.invariant.conjuncts)
    return SymState(loc=location.name, zone=zone, alpha=1.0)


# =============================================================================
# Search
# =============================================================================

class SearchStats(BaseModel):
    wcet: float = Field(0.0, description="Accumulated expected maximal delay")
    states_explored: int = Field(0, description="Expanded non-seed states")
    residual_mass: float = Field(0.0, description="Probability truncated at delta")
    lost_mass: float = Field(0.0, description="Probability stuck in dead ends or disabled edges")
    terminated: bool = Field(True, description="No probability was lost")
    seeded_states: int = Field(0, description="States created by acceleration")
    iterations: Dict[str, int] = Field(default_factory=dict, description="Deepest iteration per cycle")


class ZoneGraph(BaseModel):
    """Explored zone graph, nodes deduplicated by (location, zone)"""

    nodes: Dict[Tuple[str, Dbm], int] = Field(default_factory=dict, description="Node id per (location, zone)")
    edges: Set[Tuple[int, int, str]] = Field(default_factory=set, description="(source, target, edge id)")
    collapsed: List[Tuple[int, str]] = Field(default_factory=list, description="Collapsed cycle per entry node")
    alpha: Dict[int, float] = Field(default_factory=dict, description="Summed reach probability per node")
    cnt: Dict[int, int] = Field(default_factory=dict, description="Highest iteration count per node")

    model_config = {"arbitrary_types_allowed": True}

    def node(self, state: SymState) -> int:
        key = (state.loc, state.zone)
        if key not in self.nodes:
            self.nodes[key] = len(self.nodes)
        return self.nodes[key]

    def visit(self, state: SymState) -> int:
        """Register a reached state; merged nodes sum their reach probabilities"""
        node = self.node(state)
        self.alpha[node] = self.alpha.get(node, 0.0) + state.alpha
        self.cnt[node] = max(self.cnt.get(node, 0), state.cnt)
        return node

    def add_edge(self, source: SymState, target: SymState, label: str) -> None:
        self.edges.add((self.node(source), self.visit(target), label))


class ZoneGraphSearch:
    """
    Depth-first zone-graph exploration with explicit cycle unrolling.

    Subclasses hook into _on_iteration to replace the explicit unrolling.
    """

    mode = "baseline"

    def __init__(self, pta: Pta, delta: float, graph: Optional["ZoneGraph"] = None,
                 cutoff_tolerance: Optional[float] = None):
        self.pta = pta
        self.delta = delta
        self.cutoff = delta * (1.0 + (get_analysis_config().cutoff_tolerance
                                      if cutoff_tolerance is None else cutoff_tolerance))
        self.cycles = [tuple(c) for c in simple_cycles(pta)]
        self.cycle_of: Dict[str, Tuple[str, ...]] = {}
        for name in pta.location_names:
            cycle = cycle_of(pta, name, self.cycles)
            if cycle is not None:
                self.cycle_of[name] = tuple(cycle)
        self.cycle_edge_ids: Set[str] = set()
        self.sigma: Dict[Tuple[str, ...], float] = {}
        for cycle in self.cycles:
            try:
                edges = cycle_edges(pta, cycle)
            except ModelUsageError:
                continue
            self.cycle_edge_ids |= {e.id for e in edges}
            self.sigma[cycle] = math.prod(e.weight for e in edges)
        self.stats = SearchStats()
        self.graph = graph
        self._visits = count(1)

    # -- context ------------------------------------------------------------

    def _set_context(self, parent: Optional[SymState], edge: Optional[Edge], child: SymState) -> None:
        """Carry, reset or clear the cycle context of a fresh successor"""
        cycle = self.cycle_of.get(child.loc)
        if cycle is None or child.seed:
            child.cycle, child.entry, child.cnt = None, None, 0
            return
        if parent is not None and parent.cycle == cycle and edge is not None and edge.id in self.cycle_edge_ids:
            child.cycle, child.entry, child.visit = parent.cycle, parent.entry, parent.visit
            child.cnt = parent.cnt + 1 if child.loc == parent.entry else parent.cnt
            return
        child.cycle, child.entry, child.cnt, child.visit = cycle, child.loc, 0, next(self._visits)

    def _is_final(self, state: SymState) -> bool:
        return (state.model or self.pta).location(state.loc).final

    # -- main loop ----------------------------------------------------------

    def run(self) -> SearchStats:
        start = initial_state(self.pta)
        if start.zone.is_empty():
            logger.warning(f"Initial invariant of {start.loc} excludes the zero valuation")
            self.stats.lost_mass += 1.0
            self.stats.terminated = False
            return self.stats
        self._set_context(None, None, start)
        if self.graph is not None:
            self.graph.visit(start)
        if self._is_final(start):
            return self.stats

        wait: List[SymState] = [start]
        while wait:
            state = wait.pop()
            children = self._expand(state)
            # reversed so that edges are explored in declaration order
            wait.extend(reversed(children))
        return self.stats

    def _expand(self, state: SymState) -> List[SymState]:
        state.sts = EXPLORING
        if not state.seed:
            self.stats.states_explored += 1
        model = state.model or self.pta
        edges = [edge for edge in model.out_edges(state.loc) if edge.weight > 0]
        if not edges:
            logger.debug(f"Dead end at {state.loc}, alpha={state.alpha:.6g}")
            self._lose(state.alpha)
            self._finish(state)
            return []

        successors = []
        for edge in edges:
            try:
                child = succ(state, edge, model)
            except EdgeDisabled:
                logger.debug(f"Edge {edge.id} disabled from {state.loc}")
                self._lose(state.alpha * edge.weight)
                continue
            try:
                advance = clk_advance(state.zone, child.zone)
            except UnboundedDelay as e:
                raise WcetUnbounded(state.loc, state.cycle, str(e))
            state.advances[edge.id] = advance
            self._set_context(state, edge, child)
            successors.append((edge, child, advance))

        children: List[SymState] = []
        for edge, child, advance in successors:
            children.extend(self._on_successor(state, edge, child, advance))
        state.pending = len(children)
        if not children:
            self._finish(state)
        return children

    def _cycle_sigma(self, state: SymState) -> Optional[float]:
        """Product of the cycle edge weights in the model the state expands over"""
        if state.model is None:
            return self.sigma.get(state.cycle)
        try:
            return math.prod(e.weight for e in cycle_edges(state.model, state.cycle))
        except ModelUsageError:
            return None

    def _on_successor(self, parent: SymState, edge: Edge, child: SymState,
                      advance: float) -> List[SymState]:
        if child.completes_iteration:
            sigma = self._cycle_sigma(child)
            if sigma is not None and sigma >= 1.0:
                raise NonConvergingCycle(child.cycle, sigma)
            kept = self._on_iteration(parent, edge, child, advance)
            if kept is not None:
                return kept
        return self._keep(parent, edge, child, advance)

    def _on_iteration(self, parent: SymState, edge: Edge, child: SymState,
                      advance: float) -> Optional[List[SymState]]:
        """Delta test on an iteration-closing step; None means keep the child as usual"""
        label = cycle_label(child.cycle)
        self.stats.iterations[label] = max(self.stats.iterations.get(label, 0), child.cnt)
        if child.alpha > self.cutoff:
            return None
        logger.debug(f"Truncated {label} at iteration {child.cnt}, alpha={child.alpha:.3g}")
        self.stats.residual_mass += child.alpha
        return []

    def _keep(self, parent: SymState, edge: Edge, child: SymState, advance: float) -> List[SymState]:
        if not parent.seed:
            self.stats.wcet += child.alpha * advance
        if self.graph is not None:
            self.graph.add_edge(parent, child, edge.id)
        if self._is_final(child):
            return []
        return [child]

    def _lose(self, mass: float) -> None:
        self.stats.lost_mass += mass
        self.stats.terminated = False

    def _finish(self, state: SymState) -> None:
        """Mark a state finished and propagate to ancestors whose children are all done"""
        node = state
        while node is not None:
            node.sts = FINISHED
            parent = node.parent
            if parent is None:
                break
            parent.pending -= 1
            if parent.pending > 0:
                break
            node = parent

    def report(self, wall_time: float = 0.0) -> Report:
        return Report(
            model=self.pta.name,
            mode=self.mode,
            delta=self.delta,
            wcet=self.stats.wcet,
            states_explored=self.stats.states_explored,
            terminated=self.stats.terminated,
            wall_time=wall_time,
            residual_mass=self.stats.residual_mass,
            lost_mass=self.stats.lost_mass,
            seeded_states=self.stats.seeded_states,
            iterations=dict(self.stats.iterations),
        )


def run_search(search: ZoneGraphSearch) -> Report:
    """Run a search to completion and time it"""
    started = time.perf_counter()
    search.run()
    report = search.report(time.perf_counter() - started)
    logger.info(f"{search.mode.capitalize()} WCET of {search.pta.name}: {report.wcet:.9g} "
                f"({report.states_explored} states, terminated={report.terminated})")
    return report


def wcet_baseline(pta: Pta, delta: Optional[float] = None, graph: Optional[ZoneGraph] = None) -> Report:
    """
    Expected WCET with every cycle unrolled until its probability drops to delta

    Args:
        pta: Validated model
        delta: Approximation bound, defaults to the configured one
        graph: Filled with the explored zone graph when given

    Raises:
        WcetUnbounded: Some step has no finite maximal delay
        NonConvergingCycle: An iteration completes on a cycle whose weights multiply to 1
    """
    delta = get_analysis_config().delta if delta is None else delta
    logger.info(f"Baseline exploration of {pta.name} (delta={delta:g})")
    return run_search(ZoneGraphSearch(pta, delta, graph=graph))


def check_termination(pta: Pta, delta: Optional[float] = None) -> bool:
    """True iff every explored branch (delta-truncated cycles included) reaches a final location"""
    try:
        return wcet_baseline(pta, delta).terminated
    except NonConvergingCycle as e:
        logger.info(f"{pta.name} does not terminate: {e}")
        return False


# =============================================================================
# Subruns
# =============================================================================

def _clk_lower(zone: Dbm) -> int:
    return -zone.lower("CLK").value


def enumerate_subruns(pta: Pta) -> List[Subrun]:
    """
    Subruns of an acyclic model, partitioning the zone-graph tree: the first
    branch out of a state continues the subrun that reached it, every other
    branch starts a new subrun whose prefix probability is the state's alpha.

    Raises:
        SubrunUsageError: The model has cycles
    """
    if simple_cycles(pta):
        raise SubrunUsageError(f"Model {pta.name} has cycles; subruns are enumerated on acyclic models only")

    subruns: List[Subrun] = []

    def walk(state: SymState, steps: List[SubrunStep], prefix: float) -> None:
        location = pta.location(state.loc)
        edges = [edge for edge in pta.out_edges(state.loc) if edge.weight > 0]
        if location.final or not edges:
            subruns.append(Subrun(steps=steps, prefix_probability=prefix, ends_final=location.final))
            return
        first = True
        for edge in edges:
            try:
                child = succ(state, edge, pta)
            except EdgeDisabled:
                continue
            upper = clk_advance(state.zone, child.zone)
            lower = max(0, _clk_lower(child.zone) - _clk_lower(state.zone))
            step = SubrunStep(location=state.loc, edge=edge.id, target=edge.target,
                              t_min=float(lower), t_max=upper, probability=edge.weight)
            if first:
                walk(child, steps + [step], prefix)
                first = False
            else:
                walk(child, [step], state.alpha)

    walk(initial_state(pta), [], 1.0)
    return subruns


def subrun_maxdelay(r: Subrun) -> float:
    """
    Maxdelay of a subrun: sum over steps of the probability product up to and
    including the step's edge times the step's maximal delay.

    Raises:
        SubrunUsageError: The subrun does not end in a final location
    """
    if not r.ends_final:
        raise SubrunUsageError("Maxdelay is defined for subruns ending in a final location")
    total = 0.0
    product = r.prefix_probability
    for step in r.steps:
        product *= step.probability
        total += product * step.t_max
    return total


__all__ = [
    'EdgeDisabled',
    'SearchStats',
    'SubrunUsageError',
    'WcetUnbounded',
    'ZoneGraph',
    'ZoneGraphSearch',
    'check_termination',
    'enumerate_subruns',
    'run_search',
    'initial_state',
    'subrun_maxdelay',
    'succ',
    'successor_zone',
    'wcet_baseline',
]
