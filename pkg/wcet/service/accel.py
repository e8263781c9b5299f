"""
Cycle acceleration: fixed-point detection on active clocks, classification,
closed-form delay formulas, iteration counts, zone extrapolation and the
probability update applied once a cycle has been collapsed.
"""

import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from common.config.config import get_analysis_config
from common.utils.logger import get_logger
from wcet.core.dbm import INF, Dbm, Relation, close, decode, encode, project_active, relation
from wcet.core.model import Edge, Pta, cycle_edges
from wcet.core.records import EXPLORING, CycleClass, SymState

logger = get_logger(__name__)

CONSTANT_CNT_LIMIT = 3


class NonConvergingCycle(Exception):
    """The cycle keeps all of its probability mass: sigma >= 1"""

    def __init__(self, cycle: Sequence[str], sigma: float):
        self.cycle = tuple(cycle)
        self.sigma = sigma
        super().__init__(
            f"Cycle {' -> '.join(cycle)} never loses probability (sigma={sigma:g}): WCET may be unbounded")


class AccelerationInconsistent(Exception):
    """Extrapolated zones are empty or a periodic precondition fails"""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"Acceleration inconsistent: {reason}")


class NoExitEdge(Exception):
    """A branching cycle location has no edge leaving the cycle"""

    def __init__(self, location: str):
        self.location = location
        super().__init__(f"Cycle location {location} has no exit edge")


# =============================================================================
# Types
# =============================================================================

class FixedPoint(BaseModel):
    """Two entry states of one cycle visit whose active-clock zones coincide"""

    earlier: SymState = Field(..., description="Matched ancestor s")
    later: SymState = Field(..., description="Candidate s'")
    cycle_locations: List[str] = Field(..., description="Cycle locations starting at the entry")
    cycle_edges: List[Edge] = Field(..., description="Cycle edges, edge b leaving cycle_locations[b]")
    path: List[SymState] = Field(default_factory=list, repr=False,
                                 description="States of the visit from the cnt-0 entry up to the parent of later")

    model_config = {"arbitrary_types_allowed": True}

    @property
    def span(self) -> int:
        return self.later.cnt - self.earlier.cnt

    def iterations(self) -> Dict[int, List[SymState]]:
        """Path states grouped by iteration, each group in cycle order"""
        grouped: Dict[int, List[SymState]] = {}
        for state in self.path:
            grouped.setdefault(state.cnt, []).append(state)
        return grouped

    def entry_zones(self) -> Dict[int, Dbm]:
        """Zone at the entry location per iteration, the candidate included"""
        zones = {state.cnt: state.zone for state in self.path if state.loc == self.later.entry}
        zones[self.later.cnt] = self.later.zone
        return zones


class DelayFormula(BaseModel):
    """
    Expected delay of the cycle's iterations: iteration a adds
    initial_prob * sigma^a * sum_b prefix_b * t_b, with the terms of phase
    (a - phase_origin) mod period.
    """

    sigma: float = Field(..., gt=0, lt=1, description="Product of the cycle edge weights")
    initial_prob: float = Field(..., gt=0, le=1, description="Reach probability of the entry at iteration 0")
    phases: List[List[Tuple[float, float]]] = Field(..., min_length=1,
                                                    description="(prefix product, expected step delay) per cycle location, per phase")
    phase_origin: int = Field(0, ge=0, description="Iteration that phase 0 corresponds to")
    closing_delays: List[float] = Field(default_factory=list,
                                        description="Maximal delay of the iteration-closing step, per phase")

    @property
    def period(self) -> int:
        return len(self.phases)

    def phase_of(self, iteration: int) -> int:
        return (iteration - self.phase_origin) % self.period

    def phase_weight(self, phase: int) -> float:
        return sum(prefix * t_max for prefix, t_max in self.phases[phase])

    def closing_delay(self, iteration: int) -> float:
        if not self.closing_delays:
            return 0.0
        return self.closing_delays[self.phase_of(iteration)]


# =============================================================================
# Detection and classification
# =============================================================================

def detect_cycle(candidate: SymState, passed: Iterable[SymState], active: Iterable[str],
                 pta: Pta) -> Optional[FixedPoint]:
    """
    Look for an ancestor still being explored at the cycle entry, in the
    same visit, with 1 <= cnt < candidate.cnt and the same zone on the
    active clocks.
    The most recent match wins.

    Args:
        candidate: State produced by the step that closes an iteration
        passed: Ancestors of the candidate, most recent first
        active: Active clocks of the cycle
        pta: Model the cycle belongs to
    """
    if not candidate.completes_iteration:
        return None
    active = set(active)
    target = project_active(candidate.zone, active)
    path: List[SymState] = []
    match: Optional[SymState] = None
    for state in passed:
        if state.visit != candidate.visit or state.cycle != candidate.cycle:
            break
        path.append(state)
        if (match is None and state.sts == EXPLORING and state.loc == candidate.entry
                and 1 <= state.cnt < candidate.cnt
                and relation(project_active(state.zone, active), target) == Relation.EQUAL):
            match = state
        if state.cnt == 0 and state.loc == candidate.entry:
            break
    if match is None:
        return None

    cycle = list(candidate.cycle)
    start = cycle.index(candidate.entry)
    cycle = cycle[start:] + cycle[:start]
    logger.debug(f"Fixed point at {candidate.entry}: cnt {candidate.cnt} matches cnt {match.cnt}")
    return FixedPoint(earlier=match, later=candidate, cycle_locations=cycle,
                      cycle_edges=cycle_edges(pta, cycle), path=list(reversed(path)))


def classify(fp: FixedPoint) -> CycleClass:
    """Constant when the candidate is within the first iterations or the match is one iteration back"""
    if fp.later.cnt <= CONSTANT_CNT_LIMIT or fp.span == 1:
        return CycleClass.constant()
    return CycleClass.periodic(fp.span)


# =============================================================================
# Iteration counts and formulas
# =============================================================================

def compute_n(sigma: float, initial_prob: float, delta: float, tolerance: Optional[float] = None) -> int:
    """
    Smallest n with initial_prob * sigma^n <= delta (within the cutoff tolerance)

    Raises:
        NonConvergingCycle: sigma >= 1
    """
    if sigma >= 1.0:
        raise NonConvergingCycle((), sigma)
    tolerance = get_analysis_config().cutoff_tolerance if tolerance is None else tolerance
    limit = delta * (1.0 + tolerance)
    if initial_prob <= limit:
        return 0
    if sigma <= 0.0:
        return 1
    n = max(0, math.ceil(math.log(delta / initial_prob) / math.log(sigma)))
    while initial_prob * sigma ** n > limit:
        n += 1
    while n > 0 and initial_prob * sigma ** (n - 1) <= limit:
        n -= 1
    return n


def printed_n(sigma: float, initial_prob: float, delta: float) -> float:
    """ln(delta) / ln(sigma * initial_prob), which matches compute_n's unrounded value only when initial_prob = 1"""
    return math.log(delta) / math.log(sigma * initial_prob)


def geometric_sum(sigma: float, low: int, high: int, stride: int = 1) -> float:
    """sum of sigma^a for a = low, low + stride, ... <= high"""
    if high < low:
        return 0.0
    terms = (high - low) // stride + 1
    log_sigma = math.log(sigma)
    return math.exp(low * log_sigma) * math.expm1(terms * stride * log_sigma) / math.expm1(stride * log_sigma)


def iteration_weight(states: Sequence[SymState], edges: Sequence[Edge], pta: Pta) -> List[Tuple[float, float]]:
    """(prefix product, expected step delay) for each cycle location of one explicit iteration"""
    terms = []
    prefix = 1.0
    for state, cycle_edge in zip(states, edges):
        expected = sum(edge.weight * state.advances[edge.id]
                       for edge in pta.out_edges(state.loc) if edge.id in state.advances)
        terms.append((prefix, expected))
        prefix *= cycle_edge.weight
    return terms


def delays_repeat(fp: FixedPoint, pta: Pta, rel_tolerance: float = 1e-12) -> bool:
    """True when every iteration between the matched states has the same expected delay"""
    iterations = fp.iterations()
    weights = [sum(p * t for p, t in iteration_weight(iterations[a], fp.cycle_edges, pta))
               for a in range(fp.earlier.cnt, fp.later.cnt)]
    return all(math.isclose(w, weights[0], rel_tol=rel_tolerance, abs_tol=1e-12) for w in weights)


def synth_formula(fp: FixedPoint, cycle_class: CycleClass, pta: Pta,
                  history: Optional[Dict[int, List[SymState]]] = None) -> DelayFormula:
    """
    Delay formula of a cycle, read from the explicit iterations before the fixed point

    Args:
        fp: Fixed point of the cycle
        cycle_class: Constant (terms of the last explicit iteration) or periodic
            (one term list per iteration of the period)
        pta: Model whose weights apply
        history: Explicit iterations grouped by cnt, defaults to fp.iterations()

    Raises:
        NonConvergingCycle: The product of cycle weights is not below 1
    """
    history = fp.iterations() if history is None else history
    sigma = math.prod(edge.weight for edge in fp.cycle_edges)
    if sigma >= 1.0:
        raise NonConvergingCycle(fp.cycle_locations, sigma)
    initial_prob = history[0][0].alpha

    k = fp.later.cnt
    first = k - cycle_class.period
    phases, closing = [], []
    for a in range(first, k):
        states = history[a]
        phases.append(iteration_weight(states, fp.cycle_edges, pta))
        closing.append(states[-1].advances[fp.cycle_edges[-1].id])
    return DelayFormula(sigma=sigma, initial_prob=initial_prob, phases=phases,
                        phase_origin=first, closing_delays=closing)


def eval_formula(f: DelayFormula, n: int) -> float:
    """Sum over iterations a = 0..n of initial_prob * sigma^a * phase weight, in closed form"""
    if n < 0:
        return 0.0
    period = f.period
    total = 0.0
    for phase in range(period):
        first = (f.phase_origin + phase) % period
        total += f.phase_weight(phase) * geometric_sum(f.sigma, first, n, period)
    return f.initial_prob * total


def eval_formula_naive(f: DelayFormula, n: int) -> float:
    """Term-by-term summation of eval_formula"""
    return sum(f.initial_prob * f.sigma ** a * f.phase_weight(f.phase_of(a)) for a in range(n + 1))


# =============================================================================
# Zone extrapolation
# =============================================================================

def _finite_mask(*matrices: np.ndarray) -> np.ndarray:
    mask = np.ones_like(matrices[0], dtype=bool)
    for matrix in matrices:
        mask &= matrix < INF
    return mask


def _closed_or_fail(template: Dbm, values: np.ndarray, nonstrict: np.ndarray, finite: np.ndarray) -> Dbm:
    raw = np.where(finite, encode(values, nonstrict), INF)
    np.fill_diagonal(raw, 1)
    result = close(template.with_matrix(raw))
    if result.is_empty():
        raise AccelerationInconsistent("extrapolated zone is empty")
    return result


def accelerate_zone_constant(d_km1: Dbm, d_k: Dbm, k: int, n: int) -> Dbm:
    """
    Zone at iteration n from the zones at iterations k-1 and k: unary bounds
    keep growing by their last per-iteration change, diagonal constraints grow
    by (upper of the left clock minus bound of the right one) per iteration.

    Raises:
        AccelerationInconsistent: The extrapolated zone is empty
    """
    if n == k:
        return d_k
    steps = n - k
    prev_values, _ = decode(d_km1.matrix)
    values, nonstrict = decode(d_k.matrix)
    finite = _finite_mask(d_km1.matrix, d_k.matrix)

    result = values + steps * (values - prev_values)
    dim = d_k.dim
    for i in range(1, dim):
        for j in range(1, dim):
            if i == j:
                continue
            if d_k.matrix[i, 0] >= INF or d_k.matrix[0, j] >= INF:
                finite[i, j] = False
                continue
            result[i, j] = values[i, j] + (values[i, 0] - values[0, j]) * steps
            finite[i, j] = d_k.matrix[i, j] < INF
    return _closed_or_fail(d_k, result, nonstrict, finite)


def accelerate_zone_periodic(history: Sequence[Dbm], k: int, n: int) -> Dbm:
    """
    Zone at iteration n of a cycle whose zones repeat their changes every k iterations

    Args:
        history: Entry zones of iterations 0..k of one period
        k: Period
        n: Target iteration, counted from history[0]

    Raises:
        AccelerationInconsistent: Wrong history length or an empty result
    """
    if len(history) != k + 1:
        raise AccelerationInconsistent(f"periodic rule needs {k + 1} zones, got {len(history)}")
    if n < k:
        raise AccelerationInconsistent(f"target iteration {n} precedes the period {k}")
    matrices = [zone.matrix for zone in history]
    finite = _finite_mask(*matrices)
    values = [decode(matrix)[0] for matrix in matrices]
    remainder = n % k
    result = values[0] + (values[k] - values[0]) * (n // k) + (values[remainder] - values[0])
    _, nonstrict = decode(matrices[remainder if remainder else k])
    return _closed_or_fail(history[k], result, nonstrict, finite)


# =============================================================================
# Probability update
# =============================================================================

def reweight(pta: Pta, fp: FixedPoint) -> Pta:
    """
    Model after the cycle has been collapsed: at every cycle location whose
    cycle edge has weight below 1, the cycle edge weight is spread over the
    exits in proportion to their weights and the cycle edge is set to zero.

    Raises:
        NoExitEdge: A branching cycle location has no exit
    """
    updates: Dict[str, float] = {}
    for location, cycle_edge in zip(fp.cycle_locations, fp.cycle_edges):
        weight = next(edge.weight for edge in pta.edges if edge.id == cycle_edge.id)
        if weight >= 1.0:
            continue
        exits = [edge for edge in pta.out_edges(location) if edge.id != cycle_edge.id and edge.weight > 0]
        if not exits:
            raise NoExitEdge(location)
        exit_total = sum(edge.weight for edge in exits)
        for edge in exits:
            updates[edge.id] = edge.weight + edge.weight * weight / exit_total
        updates[cycle_edge.id] = 0.0
    return pta.with_weights(updates)


__all__ = [
    'AccelerationInconsistent',
    'DelayFormula',
    'FixedPoint',
    'NoExitEdge',
    'NonConvergingCycle',
    'accelerate_zone_constant',
    'accelerate_zone_periodic',
    'classify',
    'compute_n',
    'delays_repeat',
    'detect_cycle',
    'eval_formula',
    'eval_formula_naive',
    'geometric_sum',
    'iteration_weight',
    'printed_n',
    'reweight',
    'synth_formula',
]
