"""
Report writers: text and structured (JSON) documents for analyses, comparisons,
simulations and validation runs, plus DOT export of explored zone graphs.

Structured documents are pydantic models so key order is fixed by field
order and floats survive a dump/parse cycle unchanged.
"""

from typing import List, Literal, Optional

from graphviz import Digraph
from pydantic import BaseModel, ConfigDict, Field

from common.utils.logger import get_logger
from wcet.core.model import Violation
from wcet.core.records import AccelRecord, Report, SimStats, cycle_label
from wcet.service.explorer import ZoneGraph

logger = get_logger(__name__)

OutputFormat = Literal["text", "structured"]


# =============================================================================
# Structured documents
# =============================================================================

class CycleDocument(BaseModel):
    locations: List[str] = Field(..., description="Cycle locations starting at the entry")
    cycle_class: Literal["Constant", "Periodic"] = Field(..., alias="class")
    period: int
    sigma: float
    initial_prob: float
    k: int
    n: int
    contribution: float
    printed_n: Optional[float] = None

    model_config = ConfigDict(populate_by_name=True)


class ReportDocument(BaseModel):
    model: str
    mode: Literal["accelerated", "baseline"]
    delta: float
    wcet: float
    states_explored: int
    rg: int
    terminated: bool
    cycles: List[CycleDocument] = Field(default_factory=list)
    residual_mass: float = 0.0
    lost_mass: float = 0.0
    seeded_states: int = 0


class CompareDocument(BaseModel):
    baseline: ReportDocument
    accelerated: ReportDocument
    rg: int
    rg_formula: int
    rg_formula_check: bool
    wcet_difference: float


class SimulationDocument(BaseModel):
    model: str
    trials: int
    seed: int
    mean: float
    std_err: float
    terminated_fraction: float


class ViolationDocument(BaseModel):
    model: str
    errors: int
    warnings: int
    violations: List[Violation] = Field(default_factory=list)


def cycle_document(record: AccelRecord) -> CycleDocument:
    return CycleDocument(
        locations=list(record.cycle_locations),
        cycle_class=record.cycle_class.kind,
        period=record.period,
        sigma=record.sigma,
        initial_prob=record.initial_prob,
        k=record.k,
        n=record.n,
        contribution=record.contribution,
        printed_n=record.printed_n,
    )


def report_document(report: Report) -> ReportDocument:
    return ReportDocument(
        model=report.model,
        mode=report.mode,
        delta=report.delta,
        wcet=report.wcet,
        states_explored=report.states_explored,
        rg=report.rg,
        terminated=report.terminated,
        cycles=[cycle_document(record) for record in report.accel_records],
        residual_mass=report.residual_mass,
        lost_mass=report.lost_mass,
        seeded_states=report.seeded_states,
    )


def parse_report(data: bytes) -> ReportDocument:
    """Read back a structured report"""
    return ReportDocument.model_validate_json(data)


def _dump(document: BaseModel) -> bytes:
    return (document.model_dump_json(indent=2, by_alias=True) + "\n").encode("utf-8")


# =============================================================================
# Text rendering
# =============================================================================

def _report_lines(report: Report) -> List[str]:
    lines = [
        f"Model:            {report.model}",
        f"Mode:             {report.mode}",
        f"Delta:            {report.delta:g}",
        f"WCET:             {report.wcet:.9g}",
        f"States explored:  {report.states_explored}",
        f"Terminated:       {'yes' if report.terminated else 'no'}",
        f"Residual mass:    {report.residual_mass:.3g}",
    ]
    if report.lost_mass > 0:
        lines.append(f"Lost mass:        {report.lost_mass:.3g}")
    if report.rg:
        lines.append(f"Reduction gained: {report.rg}")
    if report.wall_time:
        lines.append(f"Wall time:        {report.wall_time:.3f}s")
    if report.accel_records:
        lines.append("Accelerated cycles:")
        for record in report.accel_records:
            kind = record.cycle_class.kind
            if kind == "Periodic":
                kind = f"{kind}({record.period})"
            lines.append(f"  {cycle_label(record.cycle_locations)}: {kind}, sigma={record.sigma:g}, "
                         f"I={record.initial_prob:g}, k={record.k}, n={record.n}, "
                         f"contribution={record.contribution:.9g}")
    else:
        lines.append("Accelerated cycles: none")
    return lines


def emit_report(report: Report, fmt: OutputFormat = "text") -> bytes:
    """Serialize one analysis report"""
    if fmt == "structured":
        return _dump(report_document(report))
    return ("\n".join(_report_lines(report)) + "\n").encode("utf-8")


def emit_compare(baseline: Report, accelerated: Report, rg_formula: int,
                 fmt: OutputFormat = "text") -> bytes:
    """Serialize a baseline/accelerated pair with the reduction-gained check"""
    document = CompareDocument(
        baseline=report_document(baseline),
        accelerated=report_document(accelerated),
        rg=accelerated.rg,
        rg_formula=rg_formula,
        rg_formula_check=accelerated.rg == rg_formula,
        wcet_difference=abs(accelerated.wcet - baseline.wcet),
    )
    if fmt == "structured":
        return _dump(document)
    lines = ["== baseline =="] + _report_lines(baseline)
    lines += ["", "== accelerated =="] + _report_lines(accelerated)
    lines += [
        "",
        f"WCET difference:  {document.wcet_difference:.3g}",
        f"Reduction gained: {document.rg} (cycle formula {rg_formula}, "
        f"{'match' if document.rg_formula_check else 'MISMATCH'})",
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


def emit_simulation(stats: SimStats, model: str, fmt: OutputFormat = "text") -> bytes:
    document = SimulationDocument(model=model, trials=stats.trials, seed=stats.seed, mean=stats.mean,
                                  std_err=stats.std_err, terminated_fraction=stats.terminated_fraction)
    if fmt == "structured":
        return _dump(document)
    return (f"Model:            {model}\n"
            f"Trials:           {stats.trials} (seed {stats.seed})\n"
            f"Mean WCET:        {stats.mean:.9g}\n"
            f"Standard error:   {stats.std_err:.3g}\n"
            f"Terminated:       {stats.terminated_fraction:.4f}\n").encode("utf-8")


def emit_violations(model: str, violations: List[Violation], fmt: OutputFormat = "text") -> bytes:
    errors = sum(1 for v in violations if v.severity == "error")
    document = ViolationDocument(model=model, errors=errors, warnings=len(violations) - errors,
                                 violations=violations)
    if fmt == "structured":
        return _dump(document)
    lines = [f"{v.severity.upper()} {v.kind}: {v.message}" for v in violations]
    lines.append(f"{errors} violations ({document.warnings} warnings)")
    return ("\n".join(lines) + "\n").encode("utf-8")


# =============================================================================
# Zone graph export
# =============================================================================

def emit_dot(graph: ZoneGraph, name: str = "zone_graph") -> bytes:
    """
    DOT description of an explored zone graph

    Nodes are labelled `location | zone | alpha | cnt`; every collapsed cycle is
    drawn as one bold self-loop annotated with n, k and its contribution.
    """
    dot = Digraph(name=name)
    dot.attr("node", shape="record")
    for (location, zone), node in sorted(graph.nodes.items(), key=lambda item: item[1]):
        alpha = graph.alpha.get(node, 0.0)
        cnt = graph.cnt.get(node, 0)
        label = f"{location} | {zone.render()} | {alpha:.6g} | {cnt}"
        dot.node(str(node), _escape_record(label))
    for source, target, label in sorted(graph.edges):
        dot.edge(str(source), str(target), label)
    for node, annotation in graph.collapsed:
        dot.edge(str(node), str(node), annotation, style="bold")
    logger.debug(f"Zone graph {name}: {len(graph.nodes)} nodes, {len(graph.edges)} edges, "
                 f"{len(graph.collapsed)} collapsed cycles")
    return dot.source.encode("utf-8")


def _escape_record(label: str) -> str:
    # record labels treat braces, angle brackets and pipes specially; keep only the field separators
    fields = [part.strip() for part in label.split(" | ")]
    escaped = [part.replace("{", "\\{").replace("}", "\\}").replace("<", "\\<").replace(">", "\\>")
               .replace("|", "\\|") for part in fields]
    return " | ".join(escaped)


__all__ = [
    'CompareDocument',
    'CycleDocument',
    'ReportDocument',
    'SimulationDocument',
    'ViolationDocument',
    'emit_compare',
    'emit_dot',
    'emit_report',
    'emit_simulation',
    'emit_violations',
    'parse_report',
    'report_document',
]
