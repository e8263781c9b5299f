import unittest

import numpy as np

from wcet.core.model import (
    ModelUsageError,
    ParseError,
    active_clocks,
    cycle_edges,
    errors_only,
    parse_model,
    print_model,
    simple_cycles,
    validate,
)
from wcet.models import bundled_models, load_bundled

FLAT_TWO_CYCLES = """
pta "shared"
clocks x
location A initial invariant x <= 2
location B invariant x <= 2
location C invariant x <= 2
location End final
edge A -> B guard x >= 1 reset x weight 0.5
edge A -> C guard x >= 1 reset x weight 0.5
edge B -> A guard x >= 1 reset x weight 1
edge C -> A guard x >= 1 reset x weight 0.5
edge C -> End guard x >= 1 weight 0.5
"""


class TestParseModel(unittest.TestCase):
    """Model language parsing"""

    def test_example_model(self):
        pta = load_bundled("example1")
        print(f"\nParsed {pta.name}: {pta.location_names}")
        self.assertEqual(len(pta.locations), 4)
        self.assertEqual(len(pta.edges), 4)
        self.assertEqual(pta.initial_location.name, "start")
        self.assertEqual([e.weight for e in pta.out_edges("start")], [0.4, 0.6])
        self.assertEqual(pta.out_edges("start")[0].resets, ("x",))

    def test_language_sample(self):
        text = """
        # sample with actions and comments
        pta "sample"
        clocks x, y
        location Start initial invariant x <= 5 label busy
        location L1 invariant x <= 3 && y <= 7
        location L2 invariant x <= 3
        location End final
        edge Start -> L1 action a guard x >= 1 reset x weight 0.4
        edge Start -> L2 action a guard x >= 1 weight 0.6
        edge L1 -> End guard y - x < 4 weight 1
        edge L2 -> End guard y = 2 weight 1
        """
        pta = parse_model(text)
        self.assertEqual(pta.clock_names, ("x", "y"))
        self.assertEqual(pta.location("Start").labels, ("busy",))
        self.assertEqual(pta.edge("e0").action, "a")
        diagonal = pta.edge("e2").guard.conjuncts[0]
        self.assertEqual((diagonal.left, diagonal.right, diagonal.relation, diagonal.bound), ("y", "x", "<", 4))
        equality = pta.edge("e3").guard.conjuncts
        self.assertEqual([a.relation for a in equality], ["<=", ">="])
        self.assertEqual(errors_only(validate(pta)), [])

    def test_degenerate_model(self):
        pta = parse_model('pta "tiny"\nlocation Only initial final\n')
        self.assertEqual(pta.clocks, ())
        self.assertTrue(pta.initial_location.final)
        self.assertEqual(validate(pta), [])

    def test_weight_out_of_range(self):
        with self.assertRaises(ParseError) as caught:
            parse_model('pta "w"\nclocks x\nlocation A initial invariant x <= 1\nlocation B final\n'
                        'edge A -> B weight 1.2\n')
        self.assertIn("probability out of range", str(caught.exception))
        self.assertEqual(caught.exception.line, 5)

    def test_syntax_error_position(self):
        with self.assertRaises(ParseError) as caught:
            parse_model('pta "s"\nclocks x\nlocation A initial invariant x <= five\nlocation B final\n')
        print(f"\nSyntax error: {caught.exception}")
        self.assertEqual(caught.exception.line, 3)
        self.assertIsNotNone(caught.exception.column)

    def test_name_errors(self):
        cases = {
            "duplicate clock": 'pta "d"\nclocks x, x\nlocation A initial final\n',
            "duplicate location": 'pta "d"\nlocation A initial\nlocation A final\n',
            "unknown location": 'pta "d"\nlocation A initial final\nedge A -> B weight 1\n',
            "unknown clock": 'pta "d"\nclocks x\nlocation A initial invariant y <= 1\n',
            "reserved": 'pta "d"\nclocks CLK\nlocation A initial final\n',
        }
        for expected, text in cases.items():
            with self.subTest(expected):
                with self.assertRaises(ParseError) as caught:
                    parse_model(text)
                self.assertIn(expected, str(caught.exception))

    def test_print_parse_round_trip(self):
        for name in bundled_models():
            with self.subTest(name):
                pta = load_bundled(name)
                self.assertEqual(parse_model(print_model(pta)), pta)

    def test_round_trip_random_weights(self):
        rng = np.random.default_rng(3)
        base = load_bundled("two_cycles")
        for _ in range(200):
            weights = {edge.id: float(rng.uniform(1e-6, 1.0)) for edge in base.edges}
            pta = base.with_weights(weights)
            self.assertEqual(parse_model(print_model(pta)), pta)


class TestValidate(unittest.TestCase):
    """Static checks"""

    def test_bundled_models(self):
        for name in bundled_models():
            with self.subTest(name):
                violations = validate(load_bundled(name))
                print(f"\n{name}: {[str(v) for v in violations]}")
                if name == "unbounded":
                    self.assertEqual([v.kind for v in violations], ["UnboundedInvariant"])
                else:
                    self.assertEqual(violations, [])

    def test_flatness(self):
        violations = validate(parse_model(FLAT_TWO_CYCLES))
        self.assertIn("FlatnessViolated", [v.kind for v in violations])

    def test_not_normalized(self):
        pta = parse_model('pta "n"\nclocks x\nlocation A initial invariant x <= 1\nlocation B final\n'
                          'edge A -> B weight 0.4\nedge A -> B weight 0.5\n')
        violations = validate(pta)
        self.assertEqual([v.kind for v in violations], ["DistributionNotNormalized"])
        self.assertEqual(violations[0].value, 0.9)

    def test_not_purely_probabilistic(self):
        pta = parse_model('pta "p"\nclocks x\nlocation A initial invariant x <= 1\nlocation B final\n'
                          'edge A -> B action a weight 1\nedge A -> B action b weight 1\n')
        self.assertIn("NotPurelyProbabilistic", [v.kind for v in validate(pta)])

    def test_invariant_and_final_checks(self):
        pta = parse_model('pta "f"\nclocks x\nlocation A initial invariant x >= 1\n'
                          'location B final\nedge A -> B weight 1\nedge B -> A weight 1\n')
        kinds = {v.kind for v in validate(pta)}
        self.assertIn("InvariantNotUpperBound", kinds)
        self.assertIn("FinalNotTimeLocked", kinds)
        self.assertIn("UnboundedInvariant", kinds)

    def test_initial_location_count(self):
        pta = parse_model('pta "i"\nlocation A final\n')
        self.assertEqual([v.kind for v in validate(pta)], ["InitialLocationCount"])
        with self.assertRaises(ModelUsageError):
            pta.initial_location

    def test_zeno_warning(self):
        pta = parse_model('pta "z"\nclocks x\nlocation A initial invariant x <= 1\nlocation B final\n'
                          'edge A -> A reset x weight 0.5\nedge A -> B weight 0.5\n')
        violations = validate(pta)
        self.assertEqual([(v.kind, v.severity) for v in violations], [("ZenoCycle", "warning")])
        self.assertEqual(errors_only(violations), [])


class TestCycles(unittest.TestCase):
    """Cycle enumeration and active clocks"""

    def test_simple_cycles(self):
        self.assertEqual(simple_cycles(load_bundled("example1")), [])
        self.assertEqual(simple_cycles(load_bundled("geometric_c")), [["Start"]])
        self.assertEqual(simple_cycles(load_bundled("two_cycles")), [["A"], ["B1", "B2"]])
        self.assertEqual(simple_cycles(load_bundled("periodic_k3")), [["L0", "L1", "L2", "L3"]])

    def test_cycle_edges(self):
        pta = load_bundled("branching_cycle")
        self.assertEqual([e.id for e in cycle_edges(pta, ["L0", "L1"])], ["e0", "e2"])
        with self.assertRaises(ModelUsageError):
            cycle_edges(pta, ["L0", "End0"])

    def test_active_clocks(self):
        guarded_only = parse_model('pta "g"\nclocks x, y\nlocation A initial invariant y <= 9\n'
                                   'location B final\nedge A -> A guard x >= 1 reset x weight 0.5\n'
                                   'edge A -> B guard x >= 1 weight 0.5\n')
        self.assertEqual(active_clocks(guarded_only, ["A"]), frozenset({"x", "y"}))

        self.assertEqual(active_clocks(load_bundled("inescapable"), ["Start"]), frozenset({"x"}))

        free = parse_model('pta "f"\nclocks x\nlocation A initial\nlocation B final\n'
                           'edge A -> A weight 0.5\nedge A -> B weight 0.5\n')
        self.assertEqual(active_clocks(free, ["A"]), frozenset())

        with self.assertRaises(ModelUsageError):
            active_clocks(load_bundled("example1"), ["start", "l1"])


if __name__ == '__main__':
    unittest.main()
