"""Policy synthesis.

Three routes to a minimum-information admissible policy:

* ``closed``    — one convex solve, valid when every unobserved maximal end
  component is closed (the agent can never be forced out of one);
* ``exhaustive``— enumerate subsets of unobserved-MEC states, solve the flow
  program for every subset that forms a union of unobserved end components,
  keep the best (optimal among stationary policies, exponential in the
  number of those states);
* ``switch``    — duplicate the unobserved-MEC states behind an artificial
  ``switch`` action that commits the agent to stay, solve one flow program
  on the modified model (optimal among observation-stationary policies:
  stationary at observed states, one bit of memory elsewhere).

Policies are read off the optimal residence times through
``x(s, a) = pi(s, a) * x(s)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .components import (SubMdp, all_unobserved_mecs_closed, is_union_uec,
                         stay_state_set, unobserved_mecs)
from .errors import ModelError, SearchCapError
from .graphs import reachable_from
from .mdp import Mdp, MarkovChain, StationaryPolicy, induce_chain, \
    reach_probability
from .solver import (FlowResult, TINY_RESIDENCE, REACH_FEAS_TOL,
                     PenaltyGroup, minimize_flow_information)

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_INFINITE = "infinite_information"


# ---------------------------------------------------------------------------
# feasibility (value iteration with qualitative precomputation)
# ---------------------------------------------------------------------------

def _prob1_states(mdp: Mdp, targets) -> set:
    """States from which some policy reaches `targets` with probability one
    (the classical nested fixpoint, so thresholds of exactly 1.0 are decided
    graph-theoretically rather than numerically)."""
    universe = set(mdp.states)
    targets = set(targets)
    while True:
        value = set(targets)
        changed = True
        while changed:
            changed = False
            for s in universe - value:
                for a in mdp.actions[s]:
                    row = mdp.transitions[(s, a)]
                    if all(q in universe for q in row) and \
                            any(q in value for q in row):
                        value.add(s)
                        changed = True
                        break
        if value == universe:
            return universe
        universe = value


def max_reach_values(mdp: Mdp) -> dict[str, float]:
    """Per-state maximal probability of reaching the model's targets."""
    targets = set(mdp.targets)
    if not targets:
        return {s: 0.0 for s in mdp.states}
    idx = mdp.state_index
    n = len(mdp.states)
    # qualitative: states with no path at all, states with a sure policy
    radj: list[list[int]] = [[] for _ in range(n)]
    for (s, a) in mdp.pairs():
        for q in mdp.transitions[(s, a)]:
            radj[idx[q]].append(idx[s])
    can = reachable_from(radj, [idx[t] for t in targets])
    sure = _prob1_states(mdp, targets)
    v = np.zeros(n)
    for t in sure:
        v[idx[t]] = 1.0
    free = [i for i in range(n)
            if i in can and mdp.states[i] not in sure]
    if free:
        pairs = [(s, a) for (s, a) in mdp.pairs()]
        starts = []
        seen_rows = []
        cur = None
        for k, (s, a) in enumerate(pairs):
            if s != cur:
                starts.append(k)
                seen_rows.append(idx[s])
                cur = s
        starts = np.array(starts)
        rows, cols, vals = [], [], []
        for k, (s, a) in enumerate(pairs):
            for q, p in mdp.transitions[(s, a)].items():
                rows.append(k)
                cols.append(idx[q])
                vals.append(p)
        pmat = sps.csr_matrix((vals, (rows, cols)), shape=(len(pairs), n))
        fixed = np.ones(n, dtype=bool)
        for i in free:
            fixed[i] = False
        for _ in range(200000):
            q = pmat @ v
            vnew_pairs = np.maximum.reduceat(q, starts)
            vnew = v.copy()
            for j, i in enumerate(seen_rows):
                if not fixed[i]:
                    vnew[i] = vnew_pairs[j]
            delta = float(np.max(np.abs(vnew - v)))
            v = vnew
            if delta < 1e-10:
                break
    return {s: float(v[idx[s]]) for s in mdp.states}


def feasibility_check(mdp: Mdp) -> bool:
    """Whether any policy meets the reach requirement at all."""
    values = max_reach_values(mdp)
    return values[mdp.initial] >= mdp.threshold - REACH_FEAS_TOL


def max_reach_policy(mdp: Mdp) -> StationaryPolicy:
    """A deterministic policy attaining the maximal reach probability,
    built attractor-style so value-preserving cycles are never chosen."""
    values = max_reach_values(mdp)
    rows: dict[str, dict[str, float]] = {}
    assigned = set(mdp.targets)
    frontier = True
    while frontier:
        frontier = False
        for s in mdp.states:
            if s in assigned or s in rows:
                continue
            vbest = values[s]
            if vbest <= 0.0:
                continue
            for a in mdp.actions[s]:
                row = mdp.transitions[(s, a)]
                val = sum(p * values[q] for q, p in row.items())
                if val >= vbest - 1e-12 and \
                        any(q in assigned or q in rows for q in row):
                    rows[s] = {a: 1.0}
                    frontier = True
                    break
    for s in mdp.states:
        if s not in rows:
            rows[s] = {mdp.actions[s][0]: 1.0}
    return StationaryPolicy(rows)


# ---------------------------------------------------------------------------
# occupation program and policy extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OccupationSolution:
    """Optimal expected state-action residence times outside the stay set."""

    x: dict[tuple[str, str], float]
    objective: float
    reach_prob: float
    status: str
    stay_states: tuple[str, ...]

    def state_residence(self, s) -> float:
        return sum(v for (ss, _a), v in self.x.items() if ss == s)


def _full_x(mdp: Mdp, stay, result: FlowResult) -> dict:
    x = {}
    for s in mdp.states:
        if s in stay:
            continue
        for a in mdp.actions[s]:
            x[(s, a)] = result.x.get((s, a), 0.0)
    return x


def solve_occupation_program(mdp: Mdp, stay_states, groups=()) -> OccupationSolution:
    """Minimize expected total information over residence times with the
    given stay set.  Distinguishes an unattainable requirement
    (``infeasible``) from one only attainable while visiting an observed
    state forever (``infinite_information``)."""
    stay = frozenset(stay_states)
    res = minimize_flow_information(mdp, stay, groups)
    ordered_stay = tuple(sorted(stay, key=mdp.state_index.get))
    if res.status == "optimal":
        return OccupationSolution(
            x=_full_x(mdp, stay, res),
            objective=res.objective,
            reach_prob=res.reach_prob,
            status=STATUS_OPTIMAL,
            stay_states=ordered_stay,
        )
    status = STATUS_INFINITE if feasibility_check(mdp) else STATUS_INFEASIBLE
    return OccupationSolution({}, math.inf, 0.0, status, ordered_stay)


def stay_policy(mdp: Mdp, union: SubMdp) -> StationaryPolicy:
    """Uniform over the union's action sets inside it (so its support never
    leaves), uniform over all enabled actions elsewhere."""
    rows = {}
    for s in mdp.states:
        if s in union:
            acts = union.actions[s]
            if not acts:
                raise ModelError(f"union end component has no action at {s!r}")
        else:
            acts = mdp.actions[s]
        rows[s] = {a: 1.0 / len(acts) for a in acts}
    return StationaryPolicy(rows)


def extract_policy(mdp: Mdp, sol: OccupationSolution, stay_states,
                   stay: StationaryPolicy) -> StationaryPolicy:
    """Read a policy off residence times: ratio where the state carries
    flow, the stay policy inside the stay set, uniform where residence is
    (numerically) zero."""
    stay_states = set(stay_states)
    rows = {}
    for s in mdp.states:
        if s in stay_states:
            rows[s] = stay.distribution(s)
            continue
        acts = mdp.actions[s]
        total = sum(max(sol.x.get((s, a), 0.0), 0.0) for a in acts)
        if total > TINY_RESIDENCE:
            rows[s] = {a: max(sol.x.get((s, a), 0.0), 0.0) / total
                       for a in acts}
        else:
            rows[s] = {a: 1.0 / len(acts) for a in acts}
    return StationaryPolicy(rows)


# ---------------------------------------------------------------------------
# exhaustive union search (stationary optimum)
# ---------------------------------------------------------------------------

def exhaustive_search(mdp: Mdp, groups=(), subset_cap=20):
    """Enumerate subsets of unobserved-MEC states (ascending bitmask; the
    first minimizer is kept), solve the flow program for each union of
    unobserved end components, and extract the best stationary policy.

    Returns ``(policy, objective)``; the objective is ``inf`` when no
    subset admits a finite-information admissible policy, in which case any
    maximal-reach policy is returned.
    """
    base = sorted(stay_state_set(mdp), key=mdp.state_index.get)
    if len(base) > subset_cap:
        raise SearchCapError(
            f"{len(base)} unobserved end-component states would require "
            f"2^{len(base)} solves; use the switch mode instead")
    best = None
    for mask in range(1 << len(base)):
        subset = frozenset(s for i, s in enumerate(base) if mask >> i & 1)
        union = is_union_uec(mdp, subset)
        if union is None:
            continue
        res = minimize_flow_information(mdp, subset, groups)
        if res.status != "optimal" or math.isinf(res.objective):
            continue
        if best is None or res.objective < best[0].objective:
            sol = OccupationSolution(
                x=_full_x(mdp, subset, res), objective=res.objective,
                reach_prob=res.reach_prob, status=STATUS_OPTIMAL,
                stay_states=tuple(sorted(subset, key=mdp.state_index.get)))
            best = (sol, union)
    if best is None:
        return max_reach_policy(mdp), math.inf
    sol, union = best
    policy = extract_policy(mdp, sol, sol.stay_states, stay_policy(mdp, union))
    return policy, sol.objective


# ---------------------------------------------------------------------------
# switch construction (observation-stationary optimum)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SwitchModel:
    """The modified model with committed copies of the stay states."""

    mdp: Mdp                      # the modified MDP
    original: Mdp
    stay_states: tuple[str, ...]  # original unobserved-MEC states
    duplicate_of: dict[str, str]  # original -> duplicate name
    switch_action: str


def build_switch_mdp(mdp: Mdp) -> SwitchModel:
    """Duplicate every unobserved-MEC state behind a probability-one
    ``switch`` action.  Duplicates keep exactly the actions whose mass stays
    inside the stay set; targets move to their duplicates.  A model without
    unobserved MECs is returned unchanged."""
    umecs = unobserved_mecs(mdp)
    stay = sorted({s for sub in umecs for s in sub.states},
                  key=mdp.state_index.get)
    if not stay:
        return SwitchModel(mdp, mdp, (), {}, "switch")
    stay_set = set(stay)
    suffix = "~stay"
    while any((s + suffix) in mdp.state_index for s in stay):
        suffix += "_"
    dup_of = {s: s + suffix for s in stay}
    switch = "switch"
    taken = {a for s in stay for a in mdp.actions[s]}
    while switch in taken:
        switch += "_"
    states = list(mdp.states) + [dup_of[s] for s in stay]
    transitions = {k: dict(v) for k, v in mdp.transitions.items()}
    for s in stay:
        transitions[(s, switch)] = {dup_of[s]: 1.0}
        for a in mdp.actions[s]:
            row = mdp.transitions[(s, a)]
            if abs(sum(p for q, p in row.items() if q in stay_set) - 1.0) <= 1e-12:
                transitions[(dup_of[s], a)] = {dup_of[q]: p
                                               for q, p in row.items()}
    modified = Mdp(
        states=states,
        transitions=transitions,
        initial=mdp.initial,
        observed=mdp.observed,
        targets=[dup_of[t] for t in sorted(mdp.targets,
                                           key=mdp.state_index.get)],
        threshold=mdp.threshold,
        meta=mdp.meta,
    )
    return SwitchModel(modified, mdp, tuple(stay), dup_of, switch)


@dataclass(frozen=True)
class SwitchPolicy:
    """Observation-stationary policy: a stationary base policy carrying
    per-state switch probabilities, plus the stay policy followed forever
    once the switch committed.  The `switched` bit itself is runtime state,
    threaded through :func:`act`."""

    base: StationaryPolicy
    stay: StationaryPolicy
    stay_states: frozenset
    switch_action: str = "switch"

    def switch_prob(self, s) -> float:
        return self.base.prob(s, self.switch_action)

    def to_json_dict(self) -> dict:
        policy = {}
        switch_probs = {}
        for s, row in self.base.probs.items():
            psw = row.get(self.switch_action, 0.0)
            if s in self.stay_states:
                switch_probs[s] = psw
            rest = {a: p for a, p in row.items() if a != self.switch_action}
            if psw < 1.0 - 1e-12:
                policy[s] = {a: p / (1.0 - psw) for a, p in rest.items()}
            else:
                policy[s] = self.stay.distribution(s)
        return {"policy": policy,
                "switch_probs": switch_probs,
                "stay_policy": self.stay.to_json_dict()}


def _sample(row: dict[str, float], rng) -> str:
    u = rng.random()
    acc = 0.0
    last = None
    for a, p in row.items():
        acc += p
        last = a
        if u <= acc:
            return a
    return last


def act(policy: SwitchPolicy, state, rng, switched=False):
    """One decision of the switch policy.  Returns ``(action, switched)``;
    the caller threads the flag through the trajectory."""
    if switched:
        return _sample(policy.stay.distribution(state), rng), True
    if state not in policy.stay_states:
        return _sample(policy.base.distribution(state), rng), False
    psw = policy.switch_prob(state)
    if rng.random() <= psw:
        return _sample(policy.stay.distribution(state), rng), True
    assert psw < 1.0, "renormalization requested at a sure-switch state"
    row = {a: p / (1.0 - psw)
           for a, p in policy.base.distribution(state).items()
           if a != policy.switch_action}
    return _sample(row, rng), False


def solve_switch(mdp: Mdp, groups=()):
    """Solve the flow program on the switch model and package the result.

    Returns ``(SwitchPolicy, objective)``; optimal among policies that are
    stationary at the observed states.  The objective never exceeds the
    exhaustive stationary search's.
    """
    model = build_switch_mdp(mdp)
    union_all = SubMdp(
        tuple(model.stay_states),
        {s: sub.actions[s] for sub in unobserved_mecs(mdp) for s in sub.states})
    stay = stay_policy(mdp, union_all) if model.stay_states else \
        StationaryPolicy.uniform(mdp)
    dup_states = frozenset(model.duplicate_of.values())
    res = minimize_flow_information(model.mdp, dup_states, groups)
    if res.status != "optimal" or math.isinf(res.objective):
        base = max_reach_policy(model.mdp)
        return SwitchPolicy(base, stay, frozenset(model.stay_states),
                            model.switch_action), math.inf
    sol = OccupationSolution(
        x=_full_x(model.mdp, dup_states, res), objective=res.objective,
        reach_prob=res.reach_prob, status=STATUS_OPTIMAL,
        stay_states=tuple(sorted(dup_states)))
    base = extract_policy(model.mdp, sol, dup_states,
                          StationaryPolicy.uniform(model.mdp))
    policy = SwitchPolicy(base, stay, frozenset(model.stay_states),
                          model.switch_action)
    return policy, res.objective


# ---------------------------------------------------------------------------
# front door
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthesisResult:
    status: str
    mode: str
    objective: float
    reach_prob: float
    policy: object
    stay_states: tuple[str, ...] = ()
    solution: OccupationSolution | None = None

    def to_json_dict(self) -> dict:
        if isinstance(self.policy, SwitchPolicy):
            doc = self.policy.to_json_dict()
        elif isinstance(self.policy, StationaryPolicy):
            doc = {"policy": self.policy.to_json_dict()}
        else:
            doc = {"policy": None}
        doc["objective"] = "inf" if math.isinf(self.objective) else self.objective
        doc["reach_prob"] = self.reach_prob
        doc["mode"] = self.mode
        doc["status"] = self.status
        return doc


def _policy_reach(mdp: Mdp, policy: StationaryPolicy) -> float:
    if not mdp.targets:
        return 0.0
    return reach_probability(induce_chain(mdp, policy), mdp.targets)


def synthesize(mdp: Mdp, mode="closed", groups=(), subset_cap=20) -> SynthesisResult:
    """Run feasibility, then the selected synthesis mode.

    ``closed`` refuses models with a non-closed unobserved MEC (the single
    solve would wrongly forbid leaving it); ``exhaustive`` and ``switch``
    handle those.  When every admissible policy leaks infinite information
    the status says so and a maximal-reach policy is returned, since any
    admissible policy is then minimum-information.
    """
    if not feasibility_check(mdp):
        return SynthesisResult(STATUS_INFEASIBLE, mode, math.inf, 0.0, None)
    if mode == "closed":
        if not all_unobserved_mecs_closed(mdp):
            raise ModelError(
                "closed mode requires every unobserved maximal end component "
                "to be closed; use mode=exhaustive or mode=switch")
        stay = frozenset(stay_state_set(mdp))
        sol = solve_occupation_program(mdp, stay, groups)
        if sol.status != STATUS_OPTIMAL:
            fallback = max_reach_policy(mdp)
            return SynthesisResult(sol.status, mode, math.inf,
                                   _policy_reach(mdp, fallback), fallback,
                                   sol.stay_states)
        union = is_union_uec(mdp, stay)
        policy = extract_policy(mdp, sol, stay, stay_policy(mdp, union))
        return SynthesisResult(STATUS_OPTIMAL, mode, sol.objective,
                               sol.reach_prob, policy, sol.stay_states, sol)
    if mode == "exhaustive":
        policy, objective = exhaustive_search(mdp, groups, subset_cap)
        if math.isinf(objective):
            return SynthesisResult(STATUS_INFINITE, mode, objective,
                                   _policy_reach(mdp, policy), policy)
        return SynthesisResult(STATUS_OPTIMAL, mode, objective,
                               _policy_reach(mdp, policy), policy)
    if mode == "switch":
        policy, objective = solve_switch(mdp, groups)
        reach = _switch_reach(mdp, policy)
        status = STATUS_INFINITE if math.isinf(objective) else STATUS_OPTIMAL
        return SynthesisResult(
            status, mode, objective, reach, policy,
            tuple(sorted(policy.stay_states, key=mdp.state_index.get)))
    raise ValueError(f"unknown synthesis mode {mode!r}")


def _switch_reach(mdp: Mdp, policy: SwitchPolicy) -> float:
    """Reach probability of a switch policy, evaluated on the switch model
    (committing at a target is what 'reaching' means there)."""
    model = build_switch_mdp(mdp)
    if not model.stay_states:
        return _policy_reach(mdp, policy.base)
    chain_rows = {}
    for s in model.mdp.states:
        row = policy.base.distribution(s)
        if s in model.duplicate_of.values():
            row = {a: 1.0 / len(model.mdp.actions[s])
                   for a in model.mdp.actions[s]}
        mixed: dict[str, float] = {}
        for a, pa in row.items():
            if pa <= 0.0 or (s, a) not in model.mdp.transitions:
                continue
            for q, p in model.mdp.transitions[(s, a)].items():
                mixed[q] = mixed.get(q, 0.0) + pa * p
        chain_rows[s] = mixed
    chain = MarkovChain(model.mdp.states, chain_rows, model.mdp.initial)
    return reach_probability(chain, model.mdp.targets)
