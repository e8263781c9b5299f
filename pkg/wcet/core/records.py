"""
Value types shared by the explorer, the acceleration engine and the report writers.
"""

from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from wcet.core.dbm import Dbm
from wcet.core.model import Pta

UNVISITED = 0
EXPLORING = 1
FINISHED = 2


class SymState(BaseModel):
    """
    One node of the zone graph: (location, zone, alpha, sts, cnt) plus search bookkeeping.

    The cycle context (cycle, entry, cnt) is set while the state lies on a
    simple cycle: cnt counts completed iterations since the cycle was entered
    at `entry`.
    """

    loc: str = Field(..., description="Location name")
    zone: Dbm = Field(..., description="Canonical non-empty zone including CLK")
    alpha: float = Field(..., description="Reach probability")
    sts: int = Field(UNVISITED, description="0 unvisited, 1 being explored, 2 finished")
    cnt: int = Field(0, description="Completed iterations of the current cycle")
    cycle: Optional[Tuple[str, ...]] = Field(None, description="Simple cycle the state lies on")
    entry: Optional[str] = Field(None, description="Location where the cycle was entered")
    visit: int = Field(0, description="Identifier of the cycle visit, unique per search")
    seed: bool = Field(False, description="Created by acceleration; its outgoing steps are already paid for")
    advances: Dict[str, float] = Field(default_factory=dict, description="CLK advance per outgoing edge id")
    pending: int = Field(0, description="Children not yet finished")
    parent: Optional["SymState"] = Field(None, exclude=True, repr=False)
    model: Optional[Pta] = Field(None, exclude=True, repr=False,
                                 description="Model the state expands over, when it differs from the searched one")

    model_config = {"arbitrary_types_allowed": True}

    @property
    def completes_iteration(self) -> bool:
        """True for the state reached by the step that closes an iteration"""
        return self.cycle is not None and self.loc == self.entry and self.cnt > 0

    def ancestors(self):
        """Path ancestors, most recent first"""
        node = self.parent
        while node is not None:
            yield node
            node = node.parent


class SubrunStep(BaseModel):
    """A location visit followed by the edge taken out of it"""

    location: str = Field(..., description="Location the delay is spent in")
    edge: str = Field(..., description="Edge id taken after the delay")
    target: str = Field(..., description="Target location of the edge")
    t_min: float = Field(..., ge=0, description="Minimal delay before the edge")
    t_max: float = Field(..., ge=0, description="Maximal delay before the edge")
    probability: float = Field(..., gt=0, le=1, description="Weight of the edge")


class Subrun(BaseModel):
    """
    A path of the zone-graph tree. Subruns partition the tree's steps: the
    first subrun of a branch point reaches it from the root, the others start
    at the branch point with the probability of reaching it as prefix.
    """

    steps: List[SubrunStep] = Field(default_factory=list, description="Ordered steps")
    prefix_probability: float = Field(1.0, gt=0, le=1, description="Probability of reaching the first step")
    ends_final: bool = Field(True, description="Whether the last target is a final location")

    @model_validator(mode="after")
    def _check_connected(self) -> "Subrun":
        for before, after in zip(self.steps, self.steps[1:]):
            if before.target != after.location:
                raise ValueError(f"Step {before.edge} ends in {before.target}, next starts in {after.location}")
        return self


class SimStats(BaseModel):
    trials: int = Field(..., ge=0, description="Number of simulated runs")
    mean: float = Field(..., description="Mean accumulated maximal delay over terminated runs")
    std_err: float = Field(..., ge=0, description="Standard error of the mean")
    terminated_fraction: float = Field(..., ge=0, le=1, description="Share of runs that reached a final location")
    variance: float = Field(0.0, ge=0, description="Sample variance, kept for merging shards")
    seed: int = Field(0, description="Seed of the run")


class CycleClass(BaseModel):
    kind: Literal["Constant", "Periodic"] = Field(..., description="Delay pattern of the cycle")
    period: int = Field(1, ge=1, description="Iterations after which delays repeat")

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _check_period(self) -> "CycleClass":
        if self.kind == "Periodic" and self.period < 2:
            raise ValueError("Periodic cycles need a period of at least 2")
        if self.kind == "Constant" and self.period != 1:
            raise ValueError("Constant cycles have period 1")
        return self

    @classmethod
    def constant(cls) -> "CycleClass":
        return cls(kind="Constant", period=1)

    @classmethod
    def periodic(cls, period: int) -> "CycleClass":
        return cls(kind="Periodic", period=period)


class AccelRecord(BaseModel):
    """One collapsed cycle"""

    cycle_locations: List[str] = Field(..., description="Cycle locations starting at the entry")
    cycle_class: CycleClass = Field(..., description="Constant or periodic, with period")
    sigma: float = Field(..., description="Product of the cycle edge weights")
    initial_prob: float = Field(..., description="Reach probability of the cycle entry")
    k: int = Field(..., ge=1, description="Iteration at which the fixed point was found")
    n: int = Field(..., ge=1, description="Iteration at which the cycle's mass drops to delta")
    contribution: float = Field(..., ge=0, description="Expected time added by the collapsed iterations")
    printed_n: Optional[float] = Field(None, description="ln(delta)/ln(sigma*initial_prob), for comparison")
    final_states: List[SymState] = Field(default_factory=list, exclude=True, repr=False)

    @property
    def length(self) -> int:
        return len(self.cycle_locations)

    @property
    def period(self) -> int:
        return self.cycle_class.period

    @model_validator(mode="after")
    def _check_order(self) -> "AccelRecord":
        if self.n < self.k:
            raise ValueError(f"n={self.n} must not be below k={self.k}")
        return self


class Report(BaseModel):
    """Outcome of one WCET analysis"""

    model: str = Field(..., description="Model name")
    mode: Literal["accelerated", "baseline"] = Field(..., description="Analysis mode")
    delta: float = Field(..., description="Approximation bound")
    wcet: float = Field(..., ge=0, description="Expected worst-case execution time")
    states_explored: int = Field(..., ge=0, description="Expanded zone-graph states")
    accel_records: List[AccelRecord] = Field(default_factory=list, description="Collapsed cycles")
    rg: int = Field(0, ge=0, description="Reduction gained against the baseline")
    terminated: bool = Field(..., description="Every explored branch reached a final location")
    wall_time: float = Field(0.0, ge=0, description="Seconds spent in the search")
    residual_mass: float = Field(0.0, ge=0, description="Probability truncated at delta")
    lost_mass: float = Field(0.0, ge=0, description="Probability stuck in dead ends or disabled edges")
    seeded_states: int = Field(0, ge=0, description="Final states created by acceleration")
    iterations: Dict[str, int] = Field(default_factory=dict, description="Iterations explored per cycle")


def cycle_label(cycle) -> str:
    return " -> ".join(cycle)


SymState.model_rebuild()


__all__ = [
    'AccelRecord',
    'CycleClass',
    'EXPLORING',
    'FINISHED',
    'Report',
    'SimStats',
    'Subrun',
    'SubrunStep',
    'SymState',
    'UNVISITED',
    'cycle_label',
]
