"""
Accelerated WCET computation.

AcceleratedSearch runs the same depth-first exploration as the baseline but,
whenever the step closing a cycle iteration reaches a fixed point on the
cycle's active clocks, it replaces the remaining iterations by the closed-form
delay formula and continues from one seed state per exit point of the cycle.
"""

import math
from typing import Dict, FrozenSet, List, Optional, Set, Tuple

from common.config.config import get_analysis_config
from common.utils.logger import get_logger
from wcet.core.model import Edge, Pta, active_clocks
from wcet.core.records import AccelRecord, CycleClass, Report, SymState, cycle_label
from wcet.service.accel import (
    AccelerationInconsistent,
    FixedPoint,
    NoExitEdge,
    accelerate_zone_constant,
    accelerate_zone_periodic,
    classify,
    compute_n,
    delays_repeat,
    detect_cycle,
    eval_formula,
    geometric_sum,
    printed_n,
    reweight,
    synth_formula,
)
from wcet.service.explorer import (
    EdgeDisabled,
    WcetUnbounded,
    ZoneGraph,
    ZoneGraphSearch,
    run_search,
    successor_zone,
    wcet_baseline,
)

logger = get_logger(__name__)


class ReportMismatchError(Exception):
    """Two reports that should describe the same analysis problem do not"""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"Reports are not comparable: {reason}")


class AcceleratedSearch(ZoneGraphSearch):
    """Zone-graph search that collapses cycles at their fixed points"""

    mode = "accelerated"

    def __init__(self, pta: Pta, delta: float, graph: Optional[ZoneGraph] = None,
                 cutoff_tolerance: Optional[float] = None):
        super().__init__(pta, delta, graph=graph, cutoff_tolerance=cutoff_tolerance)
        self.records: List[AccelRecord] = []
        self._explicit_visits: Set[int] = set()
        self._active_cache: Dict[Tuple[str, ...], FrozenSet[str]] = {}

    def _active(self, cycle: Tuple[str, ...]) -> FrozenSet[str]:
        if cycle not in self._active_cache:
            self._active_cache[cycle] = active_clocks(self.pta, cycle)
        return self._active_cache[cycle]

    def _on_iteration(self, parent: SymState, edge: Edge, child: SymState,
                      advance: float) -> Optional[List[SymState]]:
        if child.visit in self._explicit_visits:
            return super()._on_iteration(parent, edge, child, advance)
        model = child.model or self.pta
        fp = detect_cycle(child, child.ancestors(), self._active(child.cycle), model)
        if fp is None:
            return super()._on_iteration(parent, edge, child, advance)
        try:
            return self._accelerate(fp, parent, edge, child, advance, model)
        except AccelerationInconsistent as e:
            logger.warning(f"{e}; exploring cycle {cycle_label(child.cycle)} explicitly")
            self._explicit_visits.add(child.visit)
            return super()._on_iteration(parent, edge, child, advance)

    def _effective_class(self, fp: FixedPoint, model: Pta) -> CycleClass:
        cycle_class = classify(fp)
        if cycle_class.kind == "Constant" and fp.span > 1 and not delays_repeat(fp, model):
            logger.info(f"Delays of {cycle_label(fp.cycle_locations)} vary over {fp.span} iterations; "
                        f"accelerating it as periodic")
            cycle_class = CycleClass.periodic(fp.span)
        return cycle_class

    def _extrapolate_entry(self, fp: FixedPoint, cycle_class: CycleClass, n: int):
        zones = fp.entry_zones()
        k = fp.later.cnt
        if cycle_class.kind == "Constant":
            return accelerate_zone_constant(zones[k - 1], zones[k], k, n)
        origin = k - cycle_class.period
        history = [zones[a] for a in range(origin, k + 1)]
        return accelerate_zone_periodic(history, cycle_class.period, n - origin)

    def _seeds(self, fp: FixedPoint, parent: SymState, entry_zone, n: int, model: Pta) -> List[SymState]:
        """One state per cycle location with exits, carrying the exit mass of iterations k..n-1"""
        k = fp.later.cnt
        try:
            collapsed_model = reweight(model, fp)
        except NoExitEdge as e:
            raise WcetUnbounded(e.location, fp.later.cycle, str(e))
        sigma = math.prod(edge.weight for edge in fp.cycle_edges)
        initial_prob = fp.iterations()[0][0].alpha
        mass = geometric_sum(sigma, k, n - 1)

        seeds = []
        zone = entry_zone
        prefix = 1.0
        for b, (location, cycle_edge) in enumerate(zip(fp.cycle_locations, fp.cycle_edges)):
            exits = [e for e in model.out_edges(location) if e.id != cycle_edge.id and e.weight > 0]
            if exits:
                alpha = initial_prob * prefix * sum(e.weight for e in exits) * mass
                seeds.append(SymState(loc=location, zone=zone, alpha=alpha, seed=True,
                                      parent=parent, model=collapsed_model))
            prefix *= cycle_edge.weight
            if b + 1 < len(fp.cycle_locations):
                try:
                    zone = successor_zone(zone, cycle_edge, model)
                except EdgeDisabled:
                    raise AccelerationInconsistent(f"cycle edge {cycle_edge.id} disabled in extrapolated zone")
        return seeds

    def _accelerate(self, fp: FixedPoint, parent: SymState, edge: Edge, child: SymState,
                    advance: float, model: Pta) -> List[SymState]:
        label = cycle_label(fp.cycle_locations)
        k = child.cnt
        cycle_class = self._effective_class(fp, model)
        formula = synth_formula(fp, cycle_class, model)
        sigma, initial_prob = formula.sigma, formula.initial_prob

        n = compute_n(sigma, initial_prob, self.delta)
        kept = child.alpha > self.cutoff
        if kept and n <= k:
            n = k + 1
        if not kept:
            n = k
        self.stats.iterations[label] = max(self.stats.iterations.get(label, 0), n)
        if n == k:
            logger.debug(f"Fixed point of {label} at iteration {k} coincides with the delta cutoff")
            self.stats.residual_mass += child.alpha
            return []

        entry_zone = self._extrapolate_entry(fp, cycle_class, n)
        seeds = self._seeds(fp, parent, entry_zone, n, model)

        closing = initial_prob * sigma ** n * formula.closing_delay(n - 1)
        tail = eval_formula(formula, n - 1) - eval_formula(formula, k - 1) - closing
        step = 0.0 if parent.seed else child.alpha * advance
        contribution = step + tail
        self.stats.wcet += contribution
        self.stats.residual_mass += initial_prob * sigma ** n
        self.stats.seeded_states += len(seeds)

        record = AccelRecord(
            cycle_locations=fp.cycle_locations,
            cycle_class=cycle_class,
            sigma=sigma,
            initial_prob=initial_prob,
            k=k,
            n=n,
            contribution=max(0.0, contribution),
            printed_n=printed_n(sigma, initial_prob, self.delta) if initial_prob == 1.0 else None,
            final_states=seeds,
        )
        self.records.append(record)
        logger.info(f"Accelerated {label}: {cycle_class.kind} (period {cycle_class.period}), "
                    f"k={k}, n={n}, sigma={sigma:g}, contribution={contribution:.9g}, seeds={len(seeds)}")

        if self.graph is not None:
            self.graph.add_edge(parent, child, edge.id)
            node = self.graph.node(child)
            self.graph.collapsed.append((node, f"n={n}, k={k}, +{contribution:.6g}"))
            for seed in seeds:
                self.graph.add_edge(child, seed, "exit")
        return seeds

    def report(self, wall_time: float = 0.0) -> Report:
        report = super().report(wall_time)
        report.accel_records = list(self.records)
        return report


def wcet_accelerated(pta: Pta, delta: Optional[float] = None, graph: Optional[ZoneGraph] = None) -> Report:
    """
    Expected WCET with cycle acceleration

    Args:
        pta: Validated model
        delta: Approximation bound, defaults to the configured one
        graph: Filled with the explored zone graph when given

    Raises:
        WcetUnbounded: Some step has no finite maximal delay
        NonConvergingCycle: A cycle keeps all of its probability
    """
    delta = get_analysis_config().delta if delta is None else delta
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    logger.info(f"Accelerated exploration of {pta.name} (delta={delta:g})")
    return run_search(AcceleratedSearch(pta, delta, graph=graph))


def rg_formula(report: Report) -> int:
    """sum over collapsed cycles of (n - k) * cycle length"""
    return sum((record.n - record.k) * record.length for record in report.accel_records)


def reduction_gained(baseline: Report, accelerated: Report) -> int:
    """
    States the acceleration saved

    Raises:
        ReportMismatchError: The reports cover different models, deltas or modes
    """
    if baseline.model != accelerated.model:
        raise ReportMismatchError(f"models differ ({baseline.model} vs {accelerated.model})")
    if baseline.delta != accelerated.delta:
        raise ReportMismatchError(f"deltas differ ({baseline.delta:g} vs {accelerated.delta:g})")
    if baseline.mode != "baseline" or accelerated.mode != "accelerated":
        raise ReportMismatchError(f"expected baseline and accelerated, got {baseline.mode} and {accelerated.mode}")
    rg = baseline.states_explored - accelerated.states_explored
    if rg < 0:
        logger.warning(f"Accelerated search of {accelerated.model} explored more states than the baseline")
    return max(0, rg)


def compare(pta: Pta, delta: Optional[float] = None,
            graph: Optional[ZoneGraph] = None) -> Tuple[Report, Report]:
    """Run both analyses; the accelerated report gets its reduction gained and, when given, fills graph"""
    baseline = wcet_baseline(pta, delta)
    accelerated = wcet_accelerated(pta, delta, graph=graph)
    accelerated.rg = reduction_gained(baseline, accelerated)
    formula = rg_formula(accelerated)
    if accelerated.rg != formula:
        logger.warning(f"Reduction gained {accelerated.rg} differs from the cycle formula {formula}")
    return baseline, accelerated


__all__ = [
    'AcceleratedSearch',
    'ReportMismatchError',
    'compare',
    'rg_formula',
    'reduction_gained',
    'wcet_accelerated',
]
