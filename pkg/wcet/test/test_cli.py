import io
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

from wcet.models import bundled_model_path
from wcet.service.explorer import ZoneGraph
from wcet.service.main import EXIT_INVALID, EXIT_OK, EXIT_UNBOUNDED, CliConfig, main, parse_arguments
from wcet.service.report import CompareDocument, emit_dot, parse_report


def model(name: str) -> str:
    return str(bundled_model_path(name))


def invoke(*argv: str):
    """Run the CLI in-process and return (exit code, stdout, stderr)"""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


class TestArguments(unittest.TestCase):
    """Argument parsing"""

    def test_defaults(self):
        config = parse_arguments(["analyze", model("example1")])
        self.assertEqual(config.command, "analyze")
        self.assertEqual(config.mode, "accel")
        self.assertEqual(config.delta, 1e-6)
        self.assertEqual(config.output, "text")
        self.assertIsNone(config.dot_path)

    def test_simulate_options(self):
        config = parse_arguments(["simulate", model("example1"), "--trials", "500", "--seed", "3", "--json"])
        self.assertEqual((config.trials, config.seed, config.output), (500, 3, "structured"))

    def test_rejected_arguments(self):
        for argv in (["analyze", model("example1"), "--delta", "2"],
                     ["analyze", model("example1"), "--mode", "fast"],
                     ["simulate", model("example1"), "--trials", "0"],
                     ["frobnicate"]):
            with self.subTest(argv):
                with redirect_stderr(io.StringIO()), self.assertRaises(SystemExit) as caught:
                    parse_arguments(argv)
                self.assertEqual(caught.exception.code, EXIT_INVALID)

    def test_config_delta_range(self):
        with self.assertRaises(ValueError):
            CliConfig(command="analyze", model_path=Path("m.pta"), delta=0.0)


class TestCommands(unittest.TestCase):
    """End-to-end invocations"""

    def test_validate_clean_model(self):
        code, out, _ = invoke("validate", model("example1"))
        print(f"\n{out}")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("0 violations (0 warnings)", out)

    def test_validate_reports_errors(self):
        code, out, _ = invoke("validate", model("unbounded"), "--json")
        self.assertEqual(code, EXIT_INVALID)
        self.assertIn('"UnboundedInvariant"', out)

    def test_analyze_text(self):
        code, out, err = invoke("analyze", model("example1"))
        self.assertEqual(code, EXIT_OK, err)
        self.assertIn("WCET:             15", out)
        self.assertIn("Accelerated cycles: none", out)

    def test_analyze_structured(self):
        code, out, _ = invoke("analyze", model("example1"), "--json")
        self.assertEqual(code, EXIT_OK)
        self.assertIn('"cycles": []', out)
        document = parse_report(out.encode("utf-8"))
        self.assertAlmostEqual(document.wcet, 15.0, delta=1e-9)
        self.assertEqual(document.mode, "accelerated")

    def test_analyze_large_delays(self):
        code, out, _ = invoke("analyze", model("geometric_d"), "--json")
        self.assertEqual(code, EXIT_OK)
        document = parse_report(out.encode("utf-8"))
        print(f"\ngeometric_d WCET: {document.wcet}")
        self.assertLessEqual(abs(document.wcet - 999999000.0), 5000.0)
        self.assertEqual(document.cycles[0].cycle_class, "Constant")
        self.assertIn('"class": "Constant"', out)

    def test_compare_structured(self):
        code, out, _ = invoke("analyze", model("geometric_c"), "--mode", "compare", "--json")
        self.assertEqual(code, EXIT_OK)
        document = CompareDocument.model_validate_json(out)
        self.assertEqual(document.rg, 13807)
        self.assertTrue(document.rg_formula_check)
        self.assertEqual(document.baseline.states_explored, 13809)
        self.assertLessEqual(document.wcet_difference, 1e-6 * document.baseline.wcet)

    def test_baseline_mode(self):
        code, out, _ = invoke("analyze", model("geometric_a"), "--mode", "baseline", "--json")
        self.assertEqual(code, EXIT_OK)
        self.assertAlmostEqual(parse_report(out.encode("utf-8")).wcet, 1.000999, delta=1e-9)

    def test_simulate(self):
        code, out, _ = invoke("simulate", model("example1"), "--trials", "1000", "--seed", "0")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("Mean WCET:        15", out)

    def test_unbounded_exit_code(self):
        code, out, err = invoke("analyze", model("unbounded"))
        print(f"\n{err}")
        self.assertEqual(code, EXIT_UNBOUNDED)
        self.assertEqual(out, "")
        self.assertIn("WCET may be unbounded", err)

    def test_probability_one_cycle_exit_code(self):
        for mode in ("baseline", "accel", "compare"):
            with self.subTest(mode):
                code, out, err = invoke("analyze", model("trap"), "--mode", mode)
                self.assertEqual(code, EXIT_UNBOUNDED)
                self.assertEqual(out, "")
                self.assertIn("WCET may be unbounded", err)

    def test_model_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            broken = Path(tmp) / "broken.pta"
            broken.write_text('pta "b"\nclocks x\nlocation A initial invariant x <= five\n')
            code, _, err = invoke("analyze", str(broken))
            self.assertEqual(code, EXIT_INVALID)
            self.assertIn("line 3", err)

            unnormalized = Path(tmp) / "unnormalized.pta"
            unnormalized.write_text('pta "u"\nclocks x\nlocation A initial invariant x <= 1\n'
                                    'location B final\nedge A -> B weight 0.5\n')
            code, _, err = invoke("analyze", str(unnormalized))
            self.assertEqual(code, EXIT_INVALID)
            self.assertIn("DistributionNotNormalized", err)

            code, _, _ = invoke("analyze", str(Path(tmp) / "missing.pta"))
            self.assertEqual(code, EXIT_INVALID)


class TestDotExport(unittest.TestCase):
    """Zone graph export"""

    def test_collapsed_cycle(self):
        with tempfile.TemporaryDirectory() as tmp:
            target = Path(tmp) / "graph.dot"
            code, _, _ = invoke("analyze", model("geometric_c"), "--dot", str(target))
            self.assertEqual(code, EXIT_OK)
            source = target.read_text()
            self.assertTrue(source.startswith("digraph geometric_c"))
            self.assertIn("n=13809", source)
            self.assertIn("style=bold", source)

    def test_example_graph(self):
        with tempfile.TemporaryDirectory() as tmp:
            target = Path(tmp) / "example.dot"
            code, _, _ = invoke("analyze", model("example1"), "--mode", "baseline", "--dot", str(target))
            self.assertEqual(code, EXIT_OK)
            source = target.read_text()
            print(f"\n{source}")
            self.assertEqual(source.count("->"), 4)
            for location in ("start", "l1", "l2", "end"):
                self.assertIn(location, source)

    def test_empty_graph(self):
        source = emit_dot(ZoneGraph(), name="empty").decode("utf-8")
        self.assertTrue(source.startswith("digraph empty {"))
        self.assertNotIn("->", source)
        self.assertNotIn("label", source)


if __name__ == '__main__':
    unittest.main()
