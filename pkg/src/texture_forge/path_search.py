"""Exponential-weights search over processing paths.

Each restart starts from the initial ODF and, for up to ``steps`` steps, asks an
oracle for the outcome of all 31 modes, scores the objective improvement of
each, and samples the next mode with probability proportional to
``beta ** (delta / max(delta))``.  A restart stops early once no mode improves
the objective.  The best final objective over all restarts wins.
"""
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .crystal_plasticity import ALL_MODES, FCC, as_mode
from .errors import InvalidArgumentError, NotImprovableError, TextureForgeError
from .homogenization import ObjectiveWeights
from .surrogate_nn import ModelSuite
from .texture_evolution import ProcessStepConfig, Trajectory, VelocityCache, apply_process

ORACLES = ("surrogate", "simulator")
FLAVORS = ("base", "exp")


@dataclass(frozen=True)
class SearchConfig:
    restarts: int = 1000
    steps: int = 10
    beta: float = 5.0
    seed: int = 0
    oracle: str = "surrogate"
    flavor: str = "base"  # "base": beta**(d/dmax); "exp": exp(beta*d/dmax)
    greedy: bool = False  # the beta -> infinity limit

    def __post_init__(self):
        if int(self.restarts) != self.restarts or self.restarts < 1:
            raise InvalidArgumentError("restarts must be a positive integer")
        if int(self.steps) != self.steps or self.steps < 0:
            raise InvalidArgumentError("steps must be a nonnegative integer")
        if not self.beta > 1:
            raise InvalidArgumentError(f"beta must exceed 1, got {self.beta!r}")
        if self.oracle not in ORACLES:
            raise InvalidArgumentError(f"oracle must be one of {ORACLES}")
        if self.flavor not in FLAVORS:
            raise InvalidArgumentError(f"flavor must be one of {FLAVORS}")

    def to_dict(self):
        return {
            "restarts": int(self.restarts),
            "steps": int(self.steps),
            "beta": float(self.beta),
            "seed": int(self.seed),
            "oracle": self.oracle,
            "flavor": self.flavor,
            "greedy": bool(self.greedy),
        }


class SurrogateOracle:
    """All 31 outcomes from one batched evaluation of the per-mode networks."""

    name = "surrogate"

    def __init__(self, models):
        self.suite = models if isinstance(models, ModelSuite) else ModelSuite(models)

    def __call__(self, a):
        return self.suite.predict(a)


class SimulatorOracle:
    """All 31 outcomes from the physics simulator.

    With ``cached=False`` every call recomputes the reorientation fields, which
    is the cost of a genuine simulator expansion.
    """

    name = "simulator"

    def __init__(self, mesh, cfg=None, slips=FCC, cached=True, workers=1):
        self.mesh = mesh
        self.cfg = ProcessStepConfig() if cfg is None else cfg
        self.slips = slips
        self.cache = VelocityCache(mesh, slips) if cached else None
        self.workers = workers

    def _one(self, a, mode):
        velocity = self.cache(mode) if self.cache is not None else None
        try:
            return apply_process(self.mesh, a, mode, self.cfg, self.slips, velocity=velocity)
        except TextureForgeError as exc:
            exc.args = (f"mode {mode}: {exc}",)
            raise

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                rows = list(pool.map(lambda mode: self._one(a, mode), ALL_MODES))
        else:
            rows = [self._one(a, mode) for mode in ALL_MODES]
        return np.array(rows)


def _objective_p(a, p, wp):
    return float(wp @ (np.asarray(a) @ p))


def objective_diffs(oracle, a, w, p):
    """Objective change of every mode relative to ``a``; returns ``(deltas, outcomes)``."""
    w = ObjectiveWeights() if w is None else w
    wp = w.packed()
    outcomes = oracle(a)
    f0 = _objective_p(a, p, wp)
    deltas = np.array([_objective_p(row, p, wp) for row in outcomes]) - f0
    return deltas, outcomes


def softmax_base(deltas, beta, flavor="base"):
    """Sampling probabilities ``beta ** (delta_k / delta_max)``, normalized.

    ``beta = inf`` puts all mass on the first maximizer.
    """
    d = np.asarray(deltas, dtype=float)
    if not np.any(d > 0):
        raise NotImprovableError("no mode improves the objective")
    dmax = float(d.max())
    if math.isinf(beta):
        probs = np.zeros_like(d)
        probs[int(np.argmax(d))] = 1.0
        return probs
    if not beta > 1:
        raise InvalidArgumentError(f"beta must exceed 1, got {beta!r}")
    scale = math.log(beta) if flavor == "base" else beta
    logits = (d / dmax - 1.0) * scale
    weights = np.exp(logits)
    return weights / weights.sum()


@dataclass
class PathResult:
    best_modes: list
    best_objective: float
    best_trajectory: Trajectory
    restarts: list = field(default_factory=list)  # per restart: final objective, break step, error
    failures: int = 0

    def to_dict(self):
        return {
            "best_modes": [m.mask for m in self.best_modes],
            "best_objective": self.best_objective,
            "best_trajectory": self.best_trajectory.to_dict(),
            "restarts": self.restarts,
            "failures": self.failures,
        }


def _run_restart(oracle, a0, cfg, wp, p, index):
    rng = np.random.default_rng(cfg.seed + index)
    beta = math.inf if cfg.greedy else cfg.beta
    a = np.asarray(a0, dtype=float)
    odfs, modes, objectives = [a], [], [_objective_p(a, p, wp)]
    break_step = None
    for step in range(cfg.steps):
        outcomes = oracle(a)
        deltas = np.array([_objective_p(row, p, wp) for row in outcomes]) - objectives[-1]
        try:
            probs = softmax_base(deltas, beta, cfg.flavor)
        except NotImprovableError:
            break_step = step
            break
        k = int(np.argmax(probs)) if math.isinf(beta) else int(rng.choice(len(probs), p=probs))
        a = outcomes[k]
        odfs.append(a)
        modes.append(ALL_MODES[k])
        objectives.append(_objective_p(a, p, wp))
    return Trajectory(odfs=odfs, modes=modes, objectives=objectives), break_step


def search(oracle, a0, cfg=None, w=None, p=None, workers=1):
    """Best path over ``cfg.restarts`` seeded restarts.

    ``p`` is the property matrix of the mesh.  Restart ``i`` draws from seed
    ``cfg.seed + i``; the winner is the highest final objective, ties broken by
    the lexicographically smallest path.  Oracle errors end only the affected
    restart unless every restart fails.
    """
    cfg = SearchConfig() if cfg is None else cfg
    w = ObjectiveWeights() if w is None else w
    if p is None:
        raise InvalidArgumentError("the property matrix p is required")
    wp = w.packed()

    def run(i):
        try:
            traj, break_step = _run_restart(oracle, a0, cfg, wp, p, i)
        except TextureForgeError as exc:
            return None, {"restart": i, "final_objective": None, "break_step": None, "error": str(exc)}
        summary = {"restart": i, "final_objective": traj.objectives[-1], "break_step": break_step, "error": None}
        return traj, summary

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(cfg.restarts)))
    else:
        results = [run(i) for i in range(cfg.restarts)]

    best = None
    for traj, _ in results:
        if traj is None:
            continue
        key = (-traj.objectives[-1], [m.mask for m in traj.modes])
        if best is None or key < best[0]:
            best = (key, traj)
    summaries = [s for _, s in results]
    failures = sum(1 for s in summaries if s["error"] is not None)
    if best is None:
        raise TextureForgeError(f"all {cfg.restarts} restarts failed; first error: {summaries[0]['error']}")
    traj = best[1]
    return PathResult(list(traj.modes), traj.objectives[-1], traj, summaries, failures)


def replay(oracle, a0, modes, w=None, p=None):
    """Trajectory of ``modes`` under ``oracle``, objectives from ``p``."""
    w = ObjectiveWeights() if w is None else w
    wp = w.packed()
    a = np.asarray(a0, dtype=float)
    traj = Trajectory(odfs=[a], modes=[], objectives=[_objective_p(a, p, wp)])
    for mode in modes:
        mode = as_mode(mode)
        a = oracle(a)[mode.id - 1]
        traj.odfs.append(a)
        traj.modes.append(mode)
        traj.objectives.append(_objective_p(a, p, wp))
    return traj


def time_expansion(oracle, a, repeats=1):
    """Best-of-``repeats`` wall-clock seconds of one 31-mode expansion."""
    best = math.inf
    for _ in range(repeats):
        start = time.perf_counter()
        oracle(a)
        best = min(best, time.perf_counter() - start)
    return best
