import math
import unittest

import numpy as np

from wcet.core.dbm import CLK, Bound, Dbm, conjoin
from wcet.core.model import AtomicConstraint, cycle_edges, parse_model
from wcet.core.records import EXPLORING, FINISHED, CycleClass, SymState
from wcet.models import load_bundled
from wcet.service.accel import (
    AccelerationInconsistent,
    DelayFormula,
    FixedPoint,
    NoExitEdge,
    NonConvergingCycle,
    accelerate_zone_constant,
    accelerate_zone_periodic,
    classify,
    compute_n,
    detect_cycle,
    eval_formula,
    eval_formula_naive,
    geometric_sum,
    printed_n,
    reweight,
    synth_formula,
)
from wcet.service.explorer import ZoneGraphSearch

DELTA = 1e-6

TWO_EDGE_CYCLE = """
pta "two_edge"
clocks x
location L0 initial invariant x <= 2
location L1 invariant x <= 3
location End final
edge L0 -> L1 guard x >= 2 reset x weight 0.9
edge L0 -> End guard x >= 2 weight 0.1
edge L1 -> L0 guard x >= 3 reset x weight 1
"""

EXIT_TEMPLATE = """
pta "exits"
clocks x
location A initial invariant x <= 1
location B final
edge A -> A guard x >= 1 reset x weight 0.5
edge A -> B guard x >= 1 weight 0.125
edge A -> B guard x >= 1 weight 0.125
edge A -> B guard x >= 1 weight 0.125
edge A -> B guard x >= 1 weight 0.125
"""


def zone(clocks, **uppers) -> Dbm:
    """Non-negative zone with the given upper bounds, e.g. zone(['x'], x=0, CLK=5)"""
    constraints = [AtomicConstraint(left=name, relation="<=", bound=value) for name, value in uppers.items()]
    return conjoin(Dbm.universe(clocks), constraints)


def cycle_state(loc, cnt, alpha=1.0, parent=None, entry=None, cycle=None, z=None, advances=None, visit=1,
                sts=EXPLORING):
    cycle = cycle or (loc,)
    return SymState(loc=loc, zone=z if z is not None else zone(["x"], x=0, CLK=cnt), alpha=alpha,
                    sts=sts, cnt=cnt, cycle=cycle, entry=entry or cycle[0], visit=visit, parent=parent,
                    advances=advances or {})


class EntryZoneRecorder(ZoneGraphSearch):
    """Baseline search that keeps the entry zone of every completed iteration"""

    def __init__(self, pta, delta):
        super().__init__(pta, delta)
        self.zones = {}

    def _on_iteration(self, parent, edge, child, advance):
        self.zones[(child.visit, child.cnt)] = child.zone
        return super()._on_iteration(parent, edge, child, advance)


def fixed_point(pta, cycle, earlier_cnt, later_cnt) -> FixedPoint:
    earlier = cycle_state(cycle[0], earlier_cnt, cycle=tuple(cycle))
    later = cycle_state(cycle[0], later_cnt, cycle=tuple(cycle), parent=earlier)
    return FixedPoint(earlier=earlier, later=later, cycle_locations=list(cycle),
                      cycle_edges=cycle_edges(pta, cycle))


class TestDetectAndClassify(unittest.TestCase):
    """Fixed-point detection and constant/periodic classification"""

    def setUp(self):
        self.pta = load_bundled("geometric_c")

    def test_match_one_iteration_back(self):
        s0 = cycle_state("Start", 0)
        s1 = cycle_state("Start", 1, alpha=0.999, parent=s0)
        candidate = cycle_state("Start", 2, alpha=0.998001, parent=s1)
        fp = detect_cycle(candidate, candidate.ancestors(), {"x"}, self.pta)
        self.assertIsNotNone(fp)
        self.assertIs(fp.earlier, s1)
        self.assertEqual(fp.span, 1)
        self.assertEqual(fp.cycle_locations, ["Start"])
        self.assertEqual([e.id for e in fp.cycle_edges], ["e0"])
        self.assertEqual([s.cnt for s in fp.path], [0, 1])

    def test_no_match(self):
        s0 = cycle_state("Start", 0)
        first = cycle_state("Start", 1, parent=s0)
        self.assertIsNone(detect_cycle(first, first.ancestors(), {"x"}, self.pta))

        s1 = cycle_state("Start", 1, parent=s0)
        different = cycle_state("Start", 2, parent=s1, z=zone(["x"], x=1, CLK=2))
        self.assertIsNone(detect_cycle(different, different.ancestors(), {"x"}, self.pta))

        not_closing = cycle_state("Start", 0)
        self.assertIsNone(detect_cycle(not_closing, [], {"x"}, self.pta))

    def test_other_visit_ignored(self):
        s1 = cycle_state("Start", 1, visit=7)
        candidate = cycle_state("Start", 2, parent=s1, visit=8)
        self.assertIsNone(detect_cycle(candidate, candidate.ancestors(), {"x"}, self.pta))

    def test_finished_ancestor_ignored(self):
        s0 = cycle_state("Start", 0)
        s1 = cycle_state("Start", 1, alpha=0.999, parent=s0, sts=FINISHED)
        candidate = cycle_state("Start", 2, alpha=0.998001, parent=s1)
        self.assertIsNone(detect_cycle(candidate, candidate.ancestors(), {"x"}, self.pta))

        s1.sts = EXPLORING
        self.assertIs(detect_cycle(candidate, candidate.ancestors(), {"x"}, self.pta).earlier, s1)

    def test_classify(self):
        self.assertEqual(classify(fixed_point(self.pta, ["Start"], 1, 2)), CycleClass.constant())
        self.assertEqual(classify(fixed_point(self.pta, ["Start"], 2, 5)), CycleClass.periodic(3))
        self.assertEqual(classify(fixed_point(self.pta, ["Start"], 0, 3)), CycleClass.constant())


class TestIterationCount(unittest.TestCase):
    """compute_n and its post-condition"""

    def test_examples(self):
        self.assertEqual(compute_n(0.001, 1.0, DELTA), 2)
        self.assertEqual(compute_n(0.999, 1.0, DELTA), 13809)
        self.assertEqual(compute_n(0.5, 2 * 1e-4, 1e-4), 1)
        self.assertEqual(compute_n(0.5, 1e-7, DELTA), 0)
        print(f"\nprinted n for 0.999: {printed_n(0.999, 1.0, DELTA):.2f}")
        self.assertAlmostEqual(printed_n(0.999, 1.0, DELTA), 13808.6, delta=0.1)

    def test_non_converging(self):
        with self.assertRaises(NonConvergingCycle) as caught:
            compute_n(1.0, 1.0, DELTA)
        self.assertIn("WCET may be unbounded", str(caught.exception))

    def test_postcondition(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            sigma = float(rng.uniform(0.01, 0.9999))
            initial = float(rng.uniform(1e-5, 1.0))
            delta = float(10 ** rng.uniform(-9, -2))
            n = compute_n(sigma, initial, delta, tolerance=0.0)
            if initial <= delta:
                self.assertEqual(n, 0)
                continue
            self.assertLessEqual(initial * sigma ** n, delta)
            self.assertGreater(initial * sigma ** (n - 1), delta)


class TestDelayFormula(unittest.TestCase):
    """Formula synthesis and evaluation"""

    def test_self_loop_formula(self):
        pta = load_bundled("geometric_c")
        s0 = cycle_state("Start", 0, advances={"e0": 1.0, "e1": 1.0})
        s1 = cycle_state("Start", 1, alpha=0.999, parent=s0, advances={"e0": 1.0, "e1": 1.0})
        later = cycle_state("Start", 2, alpha=0.998001, parent=s1)
        fp = FixedPoint(earlier=s1, later=later, cycle_locations=["Start"],
                        cycle_edges=[pta.edge("e0")], path=[s0, s1])
        formula = synth_formula(fp, CycleClass.constant(), pta)
        self.assertAlmostEqual(formula.sigma, 0.999)
        self.assertEqual(formula.initial_prob, 1.0)
        self.assertEqual(formula.period, 1)
        self.assertAlmostEqual(formula.phases[0][0][0], 1.0)
        self.assertAlmostEqual(formula.phases[0][0][1], 1.0)
        self.assertEqual(formula.closing_delays, [1.0])

    def test_two_edge_formula(self):
        pta = parse_model(TWO_EDGE_CYCLE)
        cycle = ("L0", "L1")
        path = []
        parent = None
        for cnt in (0, 1):
            l0 = cycle_state("L0", cnt, parent=parent, cycle=cycle, advances={"e0": 2.0, "e1": 2.0},
                             alpha=0.9 ** cnt)
            l1 = cycle_state("L1", cnt, parent=l0, cycle=cycle, advances={"e2": 3.0}, alpha=0.9 ** (cnt + 1))
            path += [l0, l1]
            parent = l1
        later = cycle_state("L0", 2, parent=parent, cycle=cycle, alpha=0.81)
        fp = FixedPoint(earlier=path[2], later=later, cycle_locations=list(cycle),
                        cycle_edges=[pta.edge("e0"), pta.edge("e2")], path=path)
        formula = synth_formula(fp, CycleClass.constant(), pta)
        self.assertAlmostEqual(formula.sigma, 0.9)
        terms = formula.phases[0]
        self.assertAlmostEqual(terms[0][0], 1.0)
        self.assertAlmostEqual(terms[0][1], 2.0)
        self.assertAlmostEqual(terms[1][0], 0.9)
        self.assertAlmostEqual(terms[1][1], 3.0)

    def test_non_converging_formula(self):
        pta = parse_model('pta "loop"\nclocks x\nlocation A initial invariant x <= 1\n'
                          'edge A -> A guard x >= 1 reset x weight 1\n')
        s1 = cycle_state("A", 1, advances={"e0": 1.0})
        fp = FixedPoint(earlier=s1, later=cycle_state("A", 2, parent=s1), cycle_locations=["A"],
                        cycle_edges=[pta.edge("e0")], path=[cycle_state("A", 0), s1])
        with self.assertRaises(NonConvergingCycle):
            synth_formula(fp, CycleClass.constant(), pta)

    def test_eval_examples(self):
        long_cycle = DelayFormula(sigma=0.999, initial_prob=0.999, phases=[[(1.0, 1.0)]])
        self.assertAlmostEqual(eval_formula(long_cycle, 13809), 998.999, delta=1e-3)

        short_cycle = DelayFormula(sigma=0.001, initial_prob=0.001, phases=[[(1.0, 1.0)]])
        self.assertAlmostEqual(eval_formula(short_cycle, 2), 0.001001, delta=1e-8)

        single_pass = DelayFormula(sigma=0.9, initial_prob=0.5, phases=[[(1.0, 2.0), (0.9, 3.0)]])
        self.assertAlmostEqual(eval_formula(single_pass, 0), 0.5 * (2.0 + 2.7), places=12)

        idle = DelayFormula(sigma=0.5, initial_prob=1.0, phases=[[(1.0, 0.0)]])
        self.assertEqual(eval_formula(idle, 100), 0.0)
        self.assertEqual(eval_formula(idle, -1), 0.0)

    def test_closed_form_matches_naive_sum(self):
        rng = np.random.default_rng(13)
        for _ in range(1000):
            period = int(rng.integers(1, 4))
            phases = [[(1.0, float(rng.uniform(0, 10))), (float(rng.uniform(0.1, 1)), float(rng.uniform(0, 10)))]
                      for _ in range(period)]
            formula = DelayFormula(sigma=float(rng.uniform(0.01, 0.999)), initial_prob=float(rng.uniform(0.01, 1)),
                                   phases=phases, phase_origin=int(rng.integers(0, 6)))
            n = int(rng.integers(0, 400))
            closed, naive = eval_formula(formula, n), eval_formula_naive(formula, n)
            self.assertTrue(math.isclose(closed, naive, rel_tol=1e-9, abs_tol=1e-12), f"{closed} vs {naive}")

    def test_geometric_sum(self):
        self.assertAlmostEqual(geometric_sum(0.5, 0, 2), 1.75, places=14)
        self.assertAlmostEqual(geometric_sum(0.5, 1, 5, 2), 0.5 + 0.125 + 0.03125, places=14)
        self.assertEqual(geometric_sum(0.5, 3, 2), 0.0)


class TestZoneExtrapolation(unittest.TestCase):
    """Constant and periodic zone extrapolation"""

    def test_constant_rule(self):
        d1, d2 = zone(["x"], x=0, CLK=5), zone(["x"], x=0, CLK=10)
        extrapolated = accelerate_zone_constant(d1, d2, 2, 100)
        print(f"\nExtrapolated zone: {extrapolated.render()}")
        self.assertEqual(extrapolated.upper(CLK), Bound.le(500))
        self.assertEqual(extrapolated.upper("x"), Bound.le(0))
        self.assertIs(accelerate_zone_constant(d1, d2, 2, 2), d2)

    def test_periodic_rule(self):
        history = [zone(["x"], x=0, CLK=c) for c in (0, 3, 5)]
        extrapolated = accelerate_zone_periodic(history, 2, 7)
        self.assertEqual(extrapolated.upper(CLK), Bound.le(18))
        self.assertEqual(accelerate_zone_periodic(history, 2, 2), history[2])

    def test_periodic_rule_needs_full_period(self):
        history = [zone(["x"], x=0, CLK=c) for c in (0, 3)]
        with self.assertRaises(AccelerationInconsistent):
            accelerate_zone_periodic(history, 2, 7)

    def test_empty_extrapolation(self):
        # lower bound of x grows faster than its upper bound
        d1 = conjoin(zone(["x"], x=5, CLK=5), [AtomicConstraint(left="x", relation=">=", bound=1)])
        d2 = conjoin(zone(["x"], x=5, CLK=10), [AtomicConstraint(left="x", relation=">=", bound=3)])
        with self.assertRaises(AccelerationInconsistent):
            accelerate_zone_constant(d1, d2, 2, 10)

    def test_constant_rule_one_step_matches_exploration(self):
        # one extrapolated iteration must land on the zone the explicit unrolling reaches
        checked = 0
        for name in ("geometric_b", "geometric_c", "geometric_d", "two_cycles", "branching_cycle"):
            with self.subTest(name):
                search = EntryZoneRecorder(load_bundled(name), 1e-3)
                search.run()
                zones = search.zones
                for (visit, k), d_k in zones.items():
                    if (visit, k - 1) not in zones or (visit, k + 1) not in zones:
                        continue
                    extrapolated = accelerate_zone_constant(zones[(visit, k - 1)], d_k, k, k + 1)
                    self.assertEqual(extrapolated, zones[(visit, k + 1)], f"{name} visit {visit} k={k}")
                    checked += 1
        print(f"\nOne-step extrapolations checked: {checked}")
        self.assertGreater(checked, 0)


class TestReweight(unittest.TestCase):
    """Probability update after collapsing a cycle"""

    def test_single_exit(self):
        pta = load_bundled("geometric_c")
        collapsed = reweight(pta, fixed_point(pta, ["Start"], 1, 2))
        self.assertEqual(collapsed.edge("e0").weight, 0.0)
        self.assertAlmostEqual(collapsed.edge("e1").weight, 1.0, places=12)

    def test_two_exits(self):
        pta = parse_model('pta "two"\nclocks x\nlocation A initial invariant x <= 1\nlocation B final\n'
                          'location C final\nedge A -> A guard x >= 1 reset x weight 0.5\n'
                          'edge A -> B guard x >= 1 weight 0.3\nedge A -> C guard x >= 1 weight 0.2\n')
        collapsed = reweight(pta, fixed_point(pta, ["A"], 1, 2))
        self.assertAlmostEqual(collapsed.edge("e1").weight, 0.6, places=12)
        self.assertAlmostEqual(collapsed.edge("e2").weight, 0.4, places=12)

    def test_weight_one_edges_unchanged(self):
        pta = load_bundled("periodic_k2")
        collapsed = reweight(pta, fixed_point(pta, ["L0", "L1", "L2"], 1, 3))
        self.assertEqual(collapsed.edge("e2").weight, 1.0)
        self.assertEqual(collapsed.edge("e3").weight, 1.0)
        self.assertEqual(collapsed.edge("e0").weight, 0.0)
        self.assertAlmostEqual(collapsed.edge("e1").weight, 1.0, places=12)

    def test_no_exit(self):
        pta = parse_model('pta "trap"\nclocks x\nlocation A initial invariant x <= 1\n'
                          'edge A -> A guard x >= 1 reset x weight 0.5\n')
        with self.assertRaises(NoExitEdge) as caught:
            reweight(pta, fixed_point(pta, ["A"], 1, 2))
        self.assertEqual(caught.exception.location, "A")

    def test_normalization(self):
        template = parse_model(EXIT_TEMPLATE)
        rng = np.random.default_rng(17)
        for _ in range(1000):
            exits = int(rng.integers(1, 5))
            shares = rng.dirichlet(np.ones(exits + 1))
            weights = {"e0": float(shares[0])}
            for i in range(4):
                weights[f"e{i + 1}"] = float(shares[i + 1]) if i < exits else 0.0
            pta = template.with_weights(weights)
            collapsed = reweight(pta, fixed_point(pta, ["A"], 1, 2))
            total = sum(edge.weight for edge in collapsed.out_edges("A"))
            self.assertAlmostEqual(total, 1.0, delta=1e-12)
            self.assertEqual(collapsed.edge("e0").weight, 0.0)


if __name__ == '__main__':
    unittest.main()
