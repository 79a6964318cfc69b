"""Decision-process environment, reward accounting, GRPO arithmetic and scripted policies."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import schema
from .assign import AssignConfig, RankedCandidate, rerank, score_candidate
from .errors import BudgetExhausted, EmptyEvaluation, MalformedAction, MalformedDocument, NmrxError, ShapeMismatch
from .match import CandidateDatabase, peak_set_similarity, repair_local_search, search_two_stage
from .molecule import CandidateStructure, MoleculeGraph, refine_colors, signals_from_annotated, simulate_spectrum
from .peaks import AnnotatedSpectrum

ACTION_TYPES = ("Generate", "Search", "Optimize", "ReRank", "Stop")
_ARG_TYPES = {
    "Generate": {"n": int},
    "Search": {"k": int},
    "Optimize": {"candidate_id": str, "max_iters": int},
    "ReRank": {"use_hard_case": bool},
    "Stop": {},
}
DUPLICATE_SIM = 0.98


class ToolFailure(NmrxError):
    """Raised by a tool deliberately configured to fail."""


def structure_key(graph: MoleculeGraph) -> str:
    """Colour-refinement hash of a graph: equal graphs give equal keys regardless of numbering."""
    colors, _ = refine_colors(graph)
    adj = graph.adjacency()
    atoms = sorted(f"{c}|{a.element}|{a.attached_hydrogens}|{a.environment_class}|"
                   + ",".join(sorted(f"{o}:{colors[u]}" for u, o in adj[i]))
                   for i, (c, a) in enumerate(zip(colors, graph.atoms)))
    return hashlib.sha1(";".join(atoms).encode()).hexdigest()[:16]


# --- actions and observations -------------------------------------------------

@dataclass(frozen=True)
class Action:
    action_type: str
    args: dict = field(default_factory=dict)

    def validate(self):
        if self.action_type not in _ARG_TYPES:
            raise MalformedAction(f"unknown action type {self.action_type!r}")
        spec = _ARG_TYPES[self.action_type]
        if not isinstance(self.args, dict) or set(self.args) != set(spec):
            raise MalformedAction(f"{self.action_type} expects arguments {sorted(spec)}")
        for k, t in spec.items():
            v = self.args[k]
            if t is int and (isinstance(v, bool) or not isinstance(v, int) or v < 1):
                raise MalformedAction(f"{self.action_type}.{k} must be a positive integer")
            if t is not int and not isinstance(v, t):
                raise MalformedAction(f"{self.action_type}.{k} must be {t.__name__}")

    def to_dict(self):
        return {"action_type": self.action_type, "args": dict(self.args)}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise MalformedAction("action must be an object")
        return cls(d.get("action_type", ""), d.get("args", {}))


@dataclass(frozen=True)
class Observation:
    pool_size: int
    best_S: float
    delta_S: float
    duplicate_groups: int
    best_sim: float
    mean_sim_top3: float
    valid: bool = True
    success: bool = True
    new_candidates: int = 0
    message: str = ""

    def to_dict(self):
        return {
            "candidate_summary": {"pool_size": self.pool_size, "best_S": self.best_S, "delta_S": self.delta_S},
            "equivalence_judgment": {"duplicate_groups": self.duplicate_groups},
            "alignment_info": {"best_Sim": self.best_sim, "mean_Sim_top3": self.mean_sim_top3},
            "status": {"valid": self.valid, "success": self.success,
                       "new_candidates": self.new_candidates, "message": self.message},
        }


# --- state --------------------------------------------------------------------

@dataclass(frozen=True)
class PoolEntry:
    candidate: CandidateStructure
    S: float
    sim: float
    s_hard: float | None = None


@dataclass(frozen=True)
class DecisionState:
    observations: tuple
    pool: tuple = ()
    history: tuple = ()
    budget_remaining: int = 8
    t: int = 0
    terminated_by: str | None = None

    def __post_init__(self):
        if self.budget_remaining < 0:
            raise MalformedAction("budget must be non-negative")

    @property
    def nmr_summary(self) -> dict:
        out = {}
        for a in self.observations:
            shifts = [m.center_ppm for m in a.multiplets]
            out[a.nucleus] = {"signals": len(shifts),
                              "shift_range": [min(shifts), max(shifts)] if shifts else [],
                              "total_protons": int(sum(m.integral_protons for m in a.multiplets))}
        return out

    @property
    def uncertainty(self) -> float:
        """Spread of the top-3 scores relative to the best (0 when fewer than two)."""
        s = [e.S for e in self.pool[:3]]
        if len(s) < 2:
            return 0.0
        return float((max(s) - min(s)) / (abs(min(s)) + 1.0))

    @property
    def diversity(self) -> float:
        """1 - mean pairwise similarity of the pool's simulated spectra."""
        m = sim_matrix(self.pool)
        iu = np.triu_indices(len(self.pool), 1)
        return float(1.0 - m[iu].mean()) if len(iu[0]) else 0.0

    def digest(self) -> dict:
        return {"t": self.t, "budget_remaining": self.budget_remaining, "pool_size": len(self.pool),
                "best_S": self.pool[0].S if self.pool else None, "pool_ids": [e.candidate.id for e in self.pool],
                "uncertainty": self.uncertainty, "diversity": self.diversity}


def _sim_sets(observations):
    return [signals_from_annotated(a) for a in observations]


def sim_matrix(pool) -> np.ndarray:
    """Pairwise Sim of the pool's simulated spectra, averaged over the nuclei both candidates carry."""
    n = len(pool)
    spectra = [{nu: simulate_spectrum(e.candidate, nu) for nu in ("H1", "C13") if e.candidate.sites(nu)}
               for e in pool]
    m = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            common = sorted(set(spectra[i]) & set(spectra[j]))
            vals = [peak_set_similarity(spectra[i][nu], spectra[j][nu]) for nu in common]
            m[i, j] = m[j, i] = float(np.mean(vals)) if vals else 0.0
    return m


def duplicate_groups(pool) -> int:
    """Number of clusters (size >= 2) linked by simulated-spectrum Sim above 0.98."""
    n = len(pool)
    m = sim_matrix(pool)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if m[i, j] > DUPLICATE_SIM:
                parent[find(i)] = find(j)
    sizes: dict[int, int] = {}
    for i in range(n):
        r = find(i)
        sizes[r] = sizes.get(r, 0) + 1
    return sum(1 for v in sizes.values() if v >= 2)


# --- tools --------------------------------------------------------------------

@dataclass
class ToolBundle:
    """Everything ``step`` may call.  ``fail_tools`` names action types forced to fail ("*" for all)."""

    tables: dict
    db: CandidateDatabase | None = None
    generator_factory: Callable | None = None  # seed -> object with draw(n)
    assign_config: AssignConfig = field(default_factory=AssignConfig)
    coarse_k: int = 50
    seed: int = 0
    fail_tools: frozenset = frozenset()

    def check(self, action_type):
        if action_type in self.fail_tools or "*" in self.fail_tools:
            raise ToolFailure(f"{action_type} tool configured to fail")


def _observed_sim(cand, observations) -> float:
    vals = [peak_set_similarity(simulate_spectrum(cand, s.nucleus), s) for s in _sim_sets(observations)]
    return float(np.mean(vals)) if vals else 0.0


def _score(cand, state: DecisionState, tools: ToolBundle) -> PoolEntry:
    return PoolEntry(cand, score_candidate(cand, list(state.observations), tools.assign_config),
                     _observed_sim(cand, state.observations))


def _sorted_pool(entries):
    return tuple(sorted(entries, key=lambda e: (e.S, e.candidate.id)))


def _merge(state: DecisionState, cands, tools) -> tuple:
    have = {e.candidate.id for e in state.pool}
    new = []
    for c in cands:
        if c.id not in have:
            have.add(c.id)
            new.append(_score(c, state, tools))
    return _sorted_pool(state.pool + tuple(new)), len(new)


def empty_pool_score(state: DecisionState, cfg: AssignConfig) -> float:
    """best_S of an empty pool: every observed signal unexplained at the coverage rate."""
    return cfg.lambda_cov * cfg.beta * float(sum(len(a.multiplets) for a in state.observations))


def _best_S(state, tools):
    return state.pool[0].S if state.pool else empty_pool_score(state, tools.assign_config)


def observe(state: DecisionState, tools: ToolBundle, prev_best: float | None = None, **status) -> Observation:
    best = _best_S(state, tools)
    sims = sorted((e.sim for e in state.pool), reverse=True)
    return Observation(
        pool_size=len(state.pool), best_S=best, delta_S=0.0 if prev_best is None else best - prev_best,
        duplicate_groups=duplicate_groups(state.pool),
        best_sim=sims[0] if sims else 0.0, mean_sim_top3=float(np.mean(sims[:3])) if sims else 0.0,
        **status)


def step(state: DecisionState, action: Action, tools: ToolBundle) -> tuple[DecisionState, Observation]:
    """Apply one action; the input state is left untouched.

    Tool errors do not raise: they come back as an observation with
    ``success=False`` and an unchanged pool.

    Raises
    ------
    BudgetExhausted
        No budget left or the episode already stopped.
    MalformedAction
        Unknown action type or arguments of the wrong shape.
    """
    if state.budget_remaining <= 0 or state.terminated_by is not None:
        raise BudgetExhausted("no budget remaining")
    action.validate()
    prev_best = _best_S(state, tools)
    kind, args = action.action_type, action.args
    pool, added, terminated, msg = state.pool, 0, None, ""
    try:
        tools.check(kind)
        if kind == "Generate":
            if tools.generator_factory is None:
                raise ToolFailure("no candidate generator configured")
            gen = tools.generator_factory(tools.seed * 1000003 + state.t)
            pool, added = _merge(state, gen.draw(args["n"]), tools)
        elif kind == "Search":
            if tools.db is None:
                raise ToolFailure("no database configured")
            hits = search_two_stage(_sim_sets(state.observations), tools.db,
                                    max(tools.coarse_k, args["k"]), args["k"])
            pool, added = _merge(state, [h.candidate for h in hits], tools)
        elif kind == "Optimize":
            entry = next((e for e in state.pool if e.candidate.id == args["candidate_id"]), None)
            if entry is None:
                raise ToolFailure(f"candidate {args['candidate_id']!r} not in pool")
            fixed, trace = repair_local_search(entry.candidate, _sim_sets(state.observations), tools.tables,
                                               args["max_iters"])
            if len(trace) > 1:
                fixed = replace(fixed, id=f"rep-{structure_key(fixed.graph)}")
                pool, added = _merge(state, [fixed], tools)
        elif kind == "ReRank":
            ranked = rerank([e.candidate for e in state.pool], list(state.observations), tools.assign_config,
                            use_hard_case=args["use_hard_case"]) if state.pool else []
            by_id = {e.candidate.id: e for e in state.pool}
            pool = tuple(replace(by_id[r.candidate.id], S=r.score, s_hard=r.s_hard) for r in ranked)
        elif kind == "Stop":
            terminated = "Stop"
        success = True
    except NmrxError as exc:
        success, msg, pool, added, terminated = False, f"{type(exc).__name__}: {exc}", state.pool, 0, None
    new_state = DecisionState(state.observations, pool,
                              state.history + ((kind, "success" if success else "fail"),),
                              state.budget_remaining - 1, state.t + 1, terminated)
    obs = observe(new_state, tools, prev_best, valid=True, success=success, new_candidates=added, message=msg)
    return new_state, obs


# --- rewards ------------------------------------------------------------------

@dataclass(frozen=True)
class RewardWeights:
    lambda_fmt: float = 1.0
    lambda_eff: float = 1.0
    lambda_tool: float = 1.0
    lambda_align: float = 1.0
    T0: int = 5
    alpha_succ: float = 0.5
    alpha_prog: float = 0.5
    alpha_fail: float = 0.5
    beta1: float = 1.0
    beta2: float = 0.5

    def __post_init__(self):
        for k in ("lambda_fmt", "lambda_eff", "lambda_tool", "lambda_align", "beta1", "beta2", "T0"):
            if getattr(self, k) < 0:
                raise MalformedDocument(f"{k} must be non-negative")
        for k in ("alpha_succ", "alpha_prog", "alpha_fail"):
            if not getattr(self, k) > 0:
                raise MalformedDocument(f"{k} must be positive")

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise MalformedDocument(f"unknown reward settings: {sorted(extra)}")
        return cls(**d)


def _clamp(x, lo=-1.0, hi=1.0):
    return min(hi, max(lo, x))


def step_reward(action: Action | None, observation: Observation, t: int, prev_observation: Observation,
                weights: RewardWeights) -> dict:
    """Per-step reward components and their weighted sum ``r_t``."""
    valid = bool(observation.valid)
    succ = valid and observation.success
    fail = not succ
    productive = succ and (observation.best_S < prev_observation.best_S or observation.new_candidates > 0)
    r_fmt = 1.0 if valid else 0.0
    r_eff = -1.0 if t > weights.T0 else 0.0
    r_tool = weights.alpha_succ * succ + weights.alpha_prog * productive - weights.alpha_fail * fail
    r_cand = _clamp(prev_observation.best_S - observation.best_S)
    r_eq = _clamp(prev_observation.duplicate_groups - observation.duplicate_groups) / max(observation.pool_size, 1)
    r_align = weights.beta1 * r_cand + weights.beta2 * r_eq
    r_t = (weights.lambda_fmt * r_fmt + weights.lambda_eff * r_eff + weights.lambda_tool * r_tool
           + weights.lambda_align * r_align)
    return {"r_fmt": r_fmt, "r_eff": r_eff, "r_tool": float(r_tool), "r_cand": r_cand, "r_eq": r_eq,
            "r_align": r_align, "r_t": r_t}


# --- trajectories -------------------------------------------------------------

@dataclass(frozen=True)
class StepRecord:
    state_digest: dict
    action: dict
    observation: dict
    reward: dict
    r_t: float


@dataclass(frozen=True)
class Trajectory:
    steps: tuple
    final_prediction: tuple  # ranked (id, S, structure key)
    terminated_by: str
    stored_return: float
    seed: int = 0
    budget: int = 8
    policy: str = "workflow"
    ranking: tuple = field(default=(), compare=False, repr=False)  # RankedCandidate objects, not serialised
    inputs: tuple = field(default=(), compare=False, repr=False)  # AnnotatedSpectrum objects
    ground_truth: str | None = None  # structure key, when known

    def to_dict(self):
        return {
            "schema": schema.tag("trajectory"), "seed": self.seed, "budget": self.budget, "policy": self.policy,
            "inputs": [a.to_dict() for a in self.inputs], "ground_truth": self.ground_truth,
            "terminated_by": self.terminated_by, "return": self.stored_return,
            "final_prediction": [{"id": i, "S": s, "structure_key": k} for i, s, k in self.final_prediction],
            "steps": [{"state": s.state_digest, "action": s.action, "observation": s.observation,
                       "reward": s.reward, "r_t": s.r_t} for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise MalformedDocument("trajectory must be an object")
        schema.check(d, "trajectory")
        try:
            steps = tuple(StepRecord(s["state"], s["action"], s["observation"], s["reward"], float(s["r_t"]))
                          for s in d["steps"])
            pred = tuple((p["id"], float(p["S"]), p.get("structure_key", "")) for p in d["final_prediction"])
            inputs = tuple(AnnotatedSpectrum.from_dict(a) for a in d.get("inputs", []))
            return cls(steps, pred, d["terminated_by"], float(d["return"]), int(d.get("seed", 0)),
                       int(d.get("budget", 8)), d.get("policy", "workflow"), (), inputs, d.get("ground_truth"))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"bad trajectory: {exc}") from None


def trajectory_return(trajectory) -> float:
    """R = sum of r_t in step order."""
    steps = trajectory.steps if isinstance(trajectory, Trajectory) else trajectory
    total = 0.0
    for s in steps:
        total += s.r_t if isinstance(s, StepRecord) else float(s)
    return total


# --- GRPO ---------------------------------------------------------------------

def grpo_advantages(returns: Sequence[float], epsilon: float = 1e-8) -> list[float]:
    """Group-normalised advantages (R - mean) / (population std + epsilon)."""
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        return []
    mu = r.mean()
    sd = math.sqrt(float(np.mean((r - mu) ** 2)))
    return [float(x) for x in (r - mu) / (sd + epsilon)]


def _check_shapes(old, new, adv):
    if len(old) != len(new) or len(old) != len(adv) or len(old) == 0:
        raise ShapeMismatch("old, new and advantages must have one entry per response")
    for o, n in zip(old, new):
        if len(o) != len(n) or len(o) == 0:
            raise ShapeMismatch("token counts must match and be >= 1")


def grpo_loss(old_logprobs, new_logprobs, advantages, clip_eps: float = 0.2) -> float:
    """Clipped surrogate: -(1/G) sum_i (1/|y_i|) sum_t min(rho A, clip(rho, 1-e, 1+e) A)."""
    _check_shapes(old_logprobs, new_logprobs, advantages)
    total = 0.0
    for o, n, a in zip(old_logprobs, new_logprobs, advantages):
        rho = np.exp(np.asarray(n, float) - np.asarray(o, float))
        unclipped = rho * a
        clipped = np.clip(rho, 1 - clip_eps, 1 + clip_eps) * a
        total += float(np.mean(np.minimum(unclipped, clipped)))
    return -total / len(advantages)


def grpo_loss_grad(old_logprobs, new_logprobs, advantages, clip_eps: float = 0.2) -> list[np.ndarray]:
    """Gradient of :func:`grpo_loss` with respect to ``new_logprobs`` (per response)."""
    _check_shapes(old_logprobs, new_logprobs, advantages)
    G = len(advantages)
    out = []
    for o, n, a in zip(old_logprobs, new_logprobs, advantages):
        rho = np.exp(np.asarray(n, float) - np.asarray(o, float))
        clipped_val = np.clip(rho, 1 - clip_eps, 1 + clip_eps) * a
        use_unclipped = rho * a <= clipped_val
        inside = (rho > 1 - clip_eps) & (rho < 1 + clip_eps)
        d = np.where(use_unclipped | inside, rho * a, 0.0)
        out.append(-d / (len(rho) * G))
    return out


def hit_at_k(ranks: Sequence, k: int) -> float:
    """Fraction of cases whose rank is <= k; ``None`` counts as a miss."""
    if len(ranks) == 0:
        raise EmptyEvaluation("no cases to evaluate")
    return sum(1 for r in ranks if r is not None and r <= k) / len(ranks)


# --- policies -----------------------------------------------------------------

@dataclass(frozen=True)
class PolicySpec:
    name: str = "workflow"
    generate_n: int = 5
    search_k: int = 10
    sim_gate: float = 0.9
    optimize_iters: int = 3
    use_hard_case: bool = True
    stop_S: float = 0.5

    def __post_init__(self):
        if self.name not in ("workflow", "greedy-budget"):
            raise MalformedDocument(f"unknown policy {self.name!r}")


def _workflow(state: DecisionState, obs: Observation | None, spec: PolicySpec, done: set) -> Action:
    if "Generate" not in done:
        return Action("Generate", {"n": spec.generate_n})
    if "Search" not in done:
        return Action("Search", {"k": spec.search_k})
    if "Optimize" not in done and state.pool and max(e.sim for e in state.pool) < spec.sim_gate:
        best = max(state.pool, key=lambda e: (e.sim, -e.S))
        return Action("Optimize", {"candidate_id": best.candidate.id, "max_iters": spec.optimize_iters})
    if "ReRank" not in done:
        return Action("ReRank", {"use_hard_case": spec.use_hard_case})
    return Action("Stop", {})


def _greedy(state: DecisionState, obs: Observation | None, spec: PolicySpec, done: set) -> Action:
    """Pick the action with the largest expected reward gain; stop once best_S < stop_S."""
    if state.pool and state.pool[0].S < spec.stop_S and "ReRank" in done:
        return Action("Stop", {})
    if not state.pool or "Search" not in done:
        return Action("Search", {"k": spec.search_k})
    best_sim = max(e.sim for e in state.pool)
    if best_sim < spec.sim_gate and "Optimize" not in done:
        best = max(state.pool, key=lambda e: (e.sim, -e.S))
        return Action("Optimize", {"candidate_id": best.candidate.id, "max_iters": spec.optimize_iters})
    if best_sim < spec.sim_gate and "Generate" not in done:
        return Action("Generate", {"n": spec.generate_n})
    if "ReRank" not in done:
        return Action("ReRank", {"use_hard_case": spec.use_hard_case})
    return Action("Stop", {})


_POLICIES = {"workflow": _workflow, "greedy-budget": _greedy}


def _final_ranking(state: DecisionState, tools: ToolBundle) -> tuple:
    """The selection rule: rerank order of the frozen pool (hard-case tie-break on)."""
    if not state.pool:
        return ()
    try:
        return tuple(rerank([e.candidate for e in state.pool], list(state.observations), tools.assign_config,
                            use_hard_case=True))
    except NmrxError:
        return tuple(RankedCandidate(e.candidate, e.S, (), e.s_hard) for e in state.pool)


def execute(observations: Sequence[AnnotatedSpectrum], actions_fn, tools: ToolBundle, weights: RewardWeights,
            budget: int, policy_name: str = "workflow") -> Trajectory:
    """Drive an episode: ``actions_fn(state, obs, done)`` returns the next Action (or raw dict)."""
    if budget < 1:
        raise BudgetExhausted("budget must be >= 1")
    state = DecisionState(tuple(observations), budget_remaining=budget)
    prev = observe(state, tools)
    records = []
    done: set = set()
    while state.terminated_by is None and state.budget_remaining > 0:
        action = actions_fn(state, prev, done)
        if isinstance(action, dict):
            action = Action.from_dict(action)
        digest = state.digest()
        try:
            state, obs = step(state, action, tools)
        except MalformedAction as exc:
            # an unparseable action still consumes a turn
            state = DecisionState(state.observations, state.pool, state.history + ((str(action.action_type), "malformed"),),
                                  state.budget_remaining - 1, state.t + 1, None)
            obs = replace(prev, valid=False, success=False, new_candidates=0, delta_S=0.0, message=str(exc))
        if obs.success:
            done.add(action.action_type)
        rw = step_reward(action, obs, state.t, prev, weights)
        records.append(StepRecord(digest, action.to_dict(), obs.to_dict(), rw, rw["r_t"]))
        prev = obs
    term = state.terminated_by or "BudgetExhausted"
    steps = tuple(records)
    ranking = _final_ranking(state, tools)
    pred = tuple((r.candidate.id, r.score, structure_key(r.candidate.graph)) for r in ranking)
    return Trajectory(steps, pred, term, trajectory_return(steps), tools.seed, budget, policy_name, ranking,
                      tuple(observations))


def run_scripted_policy(observations, policy: PolicySpec, tools: ToolBundle, weights: RewardWeights,
                        T: int = 8) -> Trajectory:
    """Run a built-in policy for at most ``T`` actions; the final ranking reranks the frozen pool."""
    obs = [observations] if isinstance(observations, AnnotatedSpectrum) else list(observations)
    fn = _POLICIES[policy.name]
    return execute(obs, lambda s, o, d: fn(s, o, policy, d), tools, weights, T, policy.name)


def replay(trajectory: Trajectory, tools: ToolBundle, weights: RewardWeights, observations=None) -> Trajectory:
    """Re-execute the recorded actions against the same tools; rewards must match bit for bit.

    ``observations`` default to the inputs stored in the trajectory.
    """
    if observations is None:
        observations = trajectory.inputs
    obs = [observations] if isinstance(observations, AnnotatedSpectrum) else list(observations)
    actions = [s.action for s in trajectory.steps]
    it = iter(actions)
    out = execute(obs, lambda s, o, d: next(it), tools, weights, trajectory.budget, trajectory.policy)
    return replace(out, ground_truth=trajectory.ground_truth)


def same_rewards(a: Trajectory, b: Trajectory) -> bool:
    """Bit-for-bit equality of every reward component and the return."""
    if len(a.steps) != len(b.steps) or a.stored_return.hex() != b.stored_return.hex():
        return False
    for x, y in zip(a.steps, b.steps):
        if x.action != y.action or set(x.reward) != set(y.reward):
            return False
        if any(float(x.reward[k]).hex() != float(y.reward[k]).hex() for k in x.reward):
            return False
    return True


def rank_of(trajectory: Trajectory, key: str) -> int | None:
    """1-based position of a structure key in the final prediction."""
    for k, (_, _, sk) in enumerate(trajectory.final_prediction, 1):
        if sk == key:
            return k
    return None
