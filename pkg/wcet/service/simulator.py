"""
Monte Carlo estimate of the expected WCET.

Trials run in lockstep on numpy arrays: each round, every live trial samples
an edge of its location by weight and spends the maximal delay that the
source invariant, the edge guard and the target invariant allow before
taking it. Trials whose sampled edge cannot be taken are stuck.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from common.config.config import get_analysis_config
from common.utils.logger import get_logger
from wcet.core.model import AtomicConstraint, Pta
from wcet.core.records import SimStats
from wcet.service.explorer import WcetUnbounded

logger = get_logger(__name__)


class _CompiledModel:
    """Index-based view of a Pta for vectorized stepping"""

    def __init__(self, pta: Pta):
        self.pta = pta
        self.clock_index = {name: i for i, name in enumerate(pta.clock_names)}
        self.location_index = {name: i for i, name in enumerate(pta.location_names)}
        self.final = np.array([location.final for location in pta.locations], dtype=bool)
        self.edges = {
            location.name: [edge for edge in pta.out_edges(location.name) if edge.weight > 0]
            for location in pta.locations
        }
        self.cumulative = {
            name: np.cumsum([edge.weight for edge in edges]) for name, edges in self.edges.items()
        }

    def column(self, clock: Optional[str]) -> Optional[int]:
        return None if clock is None else self.clock_index[clock]


def _compare(diff: np.ndarray, relation: str, bound: int) -> np.ndarray:
    if relation == "<=":
        return diff <= bound
    if relation == "<":
        return diff < bound
    if relation == ">=":
        return diff >= bound
    return diff > bound


def _delay_window(current: np.ndarray, before: Sequence[AtomicConstraint], after: Sequence[AtomicConstraint],
                  resets: Sequence[str], model: _CompiledModel) -> Tuple[np.ndarray, np.ndarray]:
    """
    Largest delay d such that the atoms in `before` hold after waiting d and
    the atoms in `after` hold once the resets are applied as well.

    Each atom reads as base + slope * d ~ bound, where the slope of a clock is
    1 while it keeps running and 0 once it is reset, so diagonal atoms bound d
    whenever exactly one of their clocks is reset.

    Returns:
        (delay, feasible) per trial; delay is inf where nothing bounds it
    """
    count, n_clocks = current.shape
    lo = np.zeros(count)
    lo_strict = np.zeros(count, dtype=bool)
    hi = np.full(count, np.inf)
    hi_strict = np.zeros(count, dtype=bool)
    feasible = np.ones(count, dtype=bool)

    reset_columns = np.array([model.column(clock) for clock in resets], dtype=np.int64)
    reset_values = current.copy()
    reset_values[:, reset_columns] = 0.0
    running = np.ones(n_clocks)
    reset_rates = running.copy()
    reset_rates[reset_columns] = 0.0

    phases = [(atom, current, running) for atom in before] + [(atom, reset_values, reset_rates) for atom in after]
    for atom, values, rates in phases:
        left = model.column(atom.left)
        right = model.column(atom.right)
        base = values[:, left] - (0.0 if right is None else values[:, right])
        slope = rates[left] - (0.0 if right is None else rates[right])
        strict = atom.relation in ("<", ">")
        if slope == 0:
            feasible &= _compare(base, atom.relation, atom.bound)
            continue
        limit = (atom.bound - base) * slope
        if (atom.relation in ("<", "<=")) == (slope > 0):
            tighter = (limit < hi) | ((limit == hi) & strict)
            hi = np.where(tighter, limit, hi)
            hi_strict = np.where(tighter, strict, hi_strict)
        else:
            tighter = (limit > lo) | ((limit == lo) & strict)
            lo = np.where(tighter, limit, lo)
            lo_strict = np.where(tighter, strict, lo_strict)

    feasible &= (lo < hi) | ((lo == hi) & ~lo_strict & ~hi_strict)
    return hi, feasible


def _run_trials(pta: Pta, trials: int, rng: np.random.Generator, max_steps: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Simulate trials and return (accumulated delay, terminated flag) per trial

    Raises:
        WcetUnbounded: A sampled step has no finite maximal delay
    """
    model = _CompiledModel(pta)
    n_clocks = len(pta.clocks)
    start = model.location_index[pta.initial_location.name]

    location = np.full(trials, start, dtype=np.int64)
    values = np.zeros((trials, n_clocks))
    elapsed = np.zeros(trials)
    live = np.ones(trials, dtype=bool)
    terminated = np.zeros(trials, dtype=bool)
    if model.final[start]:
        return elapsed, np.ones(trials, dtype=bool)

    for _ in range(max_steps):
        if not live.any():
            break
        for loc_name, loc_id in model.location_index.items():
            members = np.flatnonzero(live & (location == loc_id))
            if members.size == 0:
                continue
            edges = model.edges[loc_name]
            if not edges:
                live[members] = False
                continue
            cumulative = model.cumulative[loc_name]
            draws = rng.random(members.size) * cumulative[-1]
            choice = np.minimum(np.searchsorted(cumulative, draws, side="right"), len(edges) - 1)
            invariant = pta.location(loc_name).invariant.conjuncts

            for edge_pos, edge in enumerate(edges):
                chosen = members[choice == edge_pos]
                if chosen.size == 0:
                    continue
                current = values[chosen]
                target = pta.location(edge.target)
                delay, ok = _delay_window(current, invariant + edge.guard.conjuncts,
                                          target.invariant.conjuncts, edge.resets, model)
                if np.isinf(delay[ok]).any():
                    raise WcetUnbounded(loc_name, None, f"no upper bound on the delay before edge {edge.id}")
                delay = np.where(ok, delay, 0.0)
                after = current + delay[:, None]
                for clock in edge.resets:
                    after[:, model.column(clock)] = 0.0

                stuck = chosen[~ok]
                live[stuck] = False
                moved = chosen[ok]
                values[moved] = after[ok]
                elapsed[moved] += delay[ok]
                location[moved] = model.location_index[edge.target]
                if target.final:
                    live[moved] = False
                    terminated[moved] = True
    if live.any():
        logger.warning(f"{int(live.sum())} trials exceeded the step budget of {max_steps}")
    return elapsed, terminated


def _summarise(elapsed: np.ndarray, terminated: np.ndarray, seed: int) -> SimStats:
    done = elapsed[terminated]
    count = int(done.size)
    mean = float(done.mean()) if count else 0.0
    variance = float(done.var(ddof=1)) if count > 1 else 0.0
    std_err = math.sqrt(variance / count) if count > 1 else 0.0
    return SimStats(trials=int(elapsed.size), mean=mean, std_err=std_err,
                    terminated_fraction=count / elapsed.size if elapsed.size else 1.0,
                    variance=variance, seed=seed)


def _simulate_shard(args) -> SimStats:
    """Module level so ProcessPoolExecutor can pickle it"""
    pta, trials, seed_sequence, max_steps, seed = args
    elapsed, terminated = _run_trials(pta, trials, np.random.default_rng(seed_sequence), max_steps)
    return _summarise(elapsed, terminated, seed)


def merge_stats(shards: List[SimStats]) -> SimStats:
    """Combine shard statistics by count-weighted mean and pooled variance"""
    trials = sum(shard.trials for shard in shards)
    counts = [round(shard.trials * shard.terminated_fraction) for shard in shards]
    done = sum(counts)
    if done == 0:
        return SimStats(trials=trials, mean=0.0, std_err=0.0, terminated_fraction=0.0,
                        seed=shards[0].seed if shards else 0)
    mean = sum(c * shard.mean for c, shard in zip(counts, shards)) / done
    squares = sum((c - 1) * shard.variance + c * (shard.mean - mean) ** 2
                  for c, shard in zip(counts, shards) if c > 0)
    variance = squares / (done - 1) if done > 1 else 0.0
    return SimStats(trials=trials, mean=mean, std_err=math.sqrt(variance / done) if done > 1 else 0.0,
                    terminated_fraction=done / trials, variance=variance, seed=shards[0].seed)


def simulate(pta: Pta, trials: Optional[int] = None, seed: Optional[int] = None,
             workers: Optional[int] = None, max_steps: Optional[int] = None) -> SimStats:
    """
    Monte Carlo estimate of the expected sum of maximal delays

    Args:
        pta: Validated model
        trials: Number of runs, defaults to the configured count
        seed: Seed of the run; identical seeds reproduce identical statistics
        workers: Process shards; 1 runs in-process
        max_steps: Per-trial step budget; runs exceeding it count as non-terminated

    Raises:
        WcetUnbounded: Some sampled step has no finite maximal delay
    """
    config = get_analysis_config()
    trials = config.trials if trials is None else trials
    seed = config.seed if seed is None else seed
    workers = config.sim_workers if workers is None else workers
    max_steps = config.max_sim_steps if max_steps is None else max_steps
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")

    logger.info(f"Simulating {pta.name}: {trials} trials, seed {seed}, {workers} worker(s)")
    if workers <= 1:
        elapsed, terminated = _run_trials(pta, trials, np.random.default_rng(seed), max_steps)
        stats = _summarise(elapsed, terminated, seed)
    else:
        sizes = [trials // workers + (1 if i < trials % workers else 0) for i in range(workers)]
        children = np.random.SeedSequence(seed).spawn(workers)
        jobs = [(pta, size, child, max_steps, seed) for size, child in zip(sizes, children) if size > 0]
        with ProcessPoolExecutor(max_workers=workers) as executor:
            stats = merge_stats(list(executor.map(_simulate_shard, jobs)))

    logger.info(f"Simulated mean {stats.mean:.6g} +/- {stats.std_err:.3g} "
                f"(terminated {stats.terminated_fraction:.4f})")
    return stats


__all__ = [
    'merge_stats',
    'simulate',
]
