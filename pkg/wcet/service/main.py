"""
Command-line front end for expected-WCET analysis.

The AnalysisWorkflow runs the stages of one invocation (load, validate,
analyze or simulate, export) and turns the failure classes into exit codes:
0 on success, 1 on parse or validation failure, 2 when the WCET may be
unbounded.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator

from common.config.config import ConfigError, get_analysis_config
from common.utils.logger import get_logger, set_log_level
from wcet.core.model import ParseError, Pta, Violation, errors_only, load_model, validate
from wcet.service.accel import NonConvergingCycle
from wcet.service.engine import compare, rg_formula, wcet_accelerated
from wcet.service.explorer import WcetUnbounded, ZoneGraph, wcet_baseline
from wcet.service.report import emit_compare, emit_dot, emit_report, emit_simulation, emit_violations
from wcet.service.simulator import simulate

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_UNBOUNDED = 2

# Analysis can still run on these; the search itself reports the unbounded delay
_ANALYZABLE_VIOLATIONS = {"UnboundedInvariant"}


class ModelInvalidError(Exception):
    """The model failed static validation"""

    def __init__(self, path: Path, violations: List[Violation]):
        self.path = path
        self.violations = violations
        kinds = ", ".join(sorted({v.kind for v in violations}))
        super().__init__(f"{path}: {len(violations)} violations ({kinds})")


class CliConfig(BaseModel):
    """One CLI invocation"""

    command: Literal["analyze", "simulate", "validate"] = Field(..., description="Subcommand")
    model_path: Path = Field(..., description="Model file")
    delta: float = Field(1e-6, description="Approximation bound")
    mode: Literal["accel", "baseline", "compare"] = Field("accel", description="Analysis mode")
    trials: int = Field(100_000, ge=1, description="Monte Carlo trials")
    seed: int = Field(0, description="Monte Carlo seed")
    workers: int = Field(1, ge=1, description="Monte Carlo worker processes")
    output: Literal["text", "structured"] = Field("text", description="Report format")
    dot_path: Optional[Path] = Field(None, description="Where to write the explored zone graph")
    verbose: bool = Field(False, description="Log at DEBUG level")

    @field_validator("delta")
    @classmethod
    def _check_delta(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {value}")
        return value


class RunResult(BaseModel):
    exit_code: int
    output: bytes = b""
    message: str = ""


class AnalysisWorkflow:
    """
    Runs one CLI invocation stage by stage.

    Stages raise; main() maps the failure classes to exit codes.
    """

    def __init__(self, config: CliConfig):
        self.config = config
        self.graph: Optional[ZoneGraph] = ZoneGraph() if config.dot_path else None

    def _load(self) -> Pta:
        """
        Stage 1: Parse the model file.

        Raises:
            OSError: The file cannot be read
            ParseError: Syntax or semantic error, with line and column
        """
        logger.info(f"Stage 1: Loading model {self.config.model_path}")
        pta = load_model(self.config.model_path)
        logger.info(f"Loaded {pta.name}: {len(pta.locations)} locations, {len(pta.edges)} edges, "
                    f"{len(pta.clocks)} clocks")
        return pta

    def _validate(self, pta: Pta) -> List[Violation]:
        """
        Stage 2: Static checks. Unbounded invariants are left to the analysis, which
        reports them with the offending location.

        Raises:
            ModelInvalidError: The model has blocking errors
        """
        logger.info("Stage 2: Validating model")
        violations = validate(pta)
        blocking = [v for v in errors_only(violations) if v.kind not in _ANALYZABLE_VIOLATIONS]
        if blocking:
            for violation in blocking:
                logger.error(str(violation))
            raise ModelInvalidError(self.config.model_path, blocking)
        logger.info(f"Stage 2 completed: {len(errors_only(violations))} errors, "
                    f"{len(violations) - len(errors_only(violations))} warnings")
        return violations

    def _analyze(self, pta: Pta) -> bytes:
        """
        Stage 3: WCET analysis in the configured mode.

        Raises:
            WcetUnbounded: A step has no finite maximal delay
            NonConvergingCycle: A cycle never loses probability
        """
        config = self.config
        logger.info(f"Stage 3: Analyzing in {config.mode} mode (delta={config.delta:g})")
        if config.mode == "compare":
            baseline, accelerated = compare(pta, config.delta, graph=self.graph)
            return emit_compare(baseline, accelerated, rg_formula(accelerated), config.output)
        if config.mode == "baseline":
            report = wcet_baseline(pta, config.delta, graph=self.graph)
        else:
            report = wcet_accelerated(pta, config.delta, graph=self.graph)
        logger.info(f"Stage 3 completed: WCET {report.wcet:.9g}")
        return emit_report(report, config.output)

    def _simulate(self, pta: Pta) -> bytes:
        """Stage 3: Monte Carlo estimate"""
        config = self.config
        logger.info(f"Stage 3: Simulating {config.trials} trials (seed {config.seed})")
        stats = simulate(pta, trials=config.trials, seed=config.seed, workers=config.workers)
        return emit_simulation(stats, pta.name, config.output)

    def _export_graph(self, pta: Pta) -> None:
        """Stage 4: Write the explored zone graph"""
        if self.graph is None:
            return
        logger.info(f"Stage 4: Writing zone graph to {self.config.dot_path}")
        self.config.dot_path.write_bytes(emit_dot(self.graph, name=pta.name))

    def main(self) -> RunResult:
        """
        Run the configured command.

        Returns:
            RunResult: exit code, document for standard output, diagnosis for standard error
        """
        config = self.config
        logger.info("=" * 60)
        logger.info(f"PTA-WCET {config.command.upper()} STARTED")
        logger.info("=" * 60)

        try:
            pta = self._load()
            if config.command == "validate":
                violations = validate(pta)
                code = EXIT_INVALID if errors_only(violations) else EXIT_OK
                return RunResult(exit_code=code, output=emit_violations(pta.name, violations, config.output))

            self._validate(pta)
            if config.command == "simulate":
                output = self._simulate(pta)
            else:
                output = self._analyze(pta)
                self._export_graph(pta)

            logger.info("=" * 60)
            logger.info(f"PTA-WCET {config.command.upper()} COMPLETED")
            logger.info("=" * 60)
            return RunResult(exit_code=EXIT_OK, output=output)

        except (OSError, ParseError, ModelInvalidError) as e:
            logger.error(f"{config.command} failed: {e}")
            return RunResult(exit_code=EXIT_INVALID, message=str(e))

        except (WcetUnbounded, NonConvergingCycle) as e:
            logger.error(f"{config.command} failed: {e}")
            return RunResult(exit_code=EXIT_UNBOUNDED, message=str(e))


def run(config: CliConfig) -> int:
    """Execute one invocation, writing the document to stdout and failures to stderr"""
    if config.verbose:
        set_log_level("DEBUG")
    result = AnalysisWorkflow(config).main()
    if result.output:
        sys.stdout.write(result.output.decode("utf-8"))
        sys.stdout.flush()
    if result.message:
        print(f"error: {result.message}", file=sys.stderr)
    return result.exit_code


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with EXIT_INVALID; exit code 2 is reserved for unbounded WCET"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INVALID)


def _build_parser() -> argparse.ArgumentParser:
    defaults = get_analysis_config()

    common = _ArgumentParser(add_help=False)
    common.add_argument("model", type=Path, help="Model file (.pta)")
    common.add_argument("--json", action="store_true", help="Emit structured JSON instead of text")
    common.add_argument("--verbose", "-v", action="store_true", help="Log at DEBUG level")

    parser = _ArgumentParser(
        prog="pta-wcet",
        description="Expected worst-case execution time of probabilistic timed automata",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  pta-wcet analyze wcet/models/example1.pta
  pta-wcet analyze wcet/models/geometric_c.pta --mode compare --json
  pta-wcet analyze wcet/models/geometric_c.pta --dot graph.dot
  pta-wcet simulate wcet/models/example1.pta --trials 100000 --seed 0
  pta-wcet validate wcet/models/example1.pta
        """
    )
    commands = parser.add_subparsers(dest="command", required=True)

    analyze = commands.add_parser("analyze", parents=[common], help="Compute the expected WCET")
    analyze.add_argument("--delta", type=float, default=defaults.delta, help="Approximation bound in (0, 1)")
    analyze.add_argument("--mode", choices=["accel", "baseline", "compare"], default="accel",
                         help="Accelerated, explicit, or both with the reduction gained")
    analyze.add_argument("--dot", type=Path, default=None, help="Write the explored zone graph as DOT")

    sim = commands.add_parser("simulate", parents=[common], help="Monte Carlo estimate of the expected WCET")
    sim.add_argument("--trials", type=int, default=defaults.trials, help="Number of simulated runs")
    sim.add_argument("--seed", type=int, default=defaults.seed, help="Random seed")
    sim.add_argument("--workers", type=int, default=defaults.sim_workers, help="Worker processes")

    commands.add_parser("validate", parents=[common], help="Run the static model checks")
    return parser


def parse_arguments(argv: Optional[List[str]] = None) -> CliConfig:
    """
    Parse command line arguments into a CliConfig

    Raises:
        SystemExit: Invalid arguments or help requested
    """
    parser = _build_parser()
    args = parser.parse_args(argv)
    values = {
        "command": args.command,
        "model_path": args.model,
        "output": "structured" if args.json else "text",
        "verbose": args.verbose,
    }
    for flag, field in (("delta", "delta"), ("mode", "mode"), ("dot", "dot_path"),
                        ("trials", "trials"), ("seed", "seed"), ("workers", "workers")):
        if getattr(args, flag, None) is not None:
            values[field] = getattr(args, flag)
    try:
        return CliConfig(**values)
    except ValueError as e:
        parser.error(str(e))


def main(argv: Optional[List[str]] = None) -> int:
    try:
        config = parse_arguments(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    return run(config)


if __name__ == "__main__":
    try:
        sys.exit(main())
    except SystemExit:
        raise
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        sys.exit(130)
