"""End-component analysis.

A sub-MDP ``(C, D)`` selects a state set ``C`` and, for each of its states,
a nonempty action subset whose supports stay inside ``C``.  An end component
is a sub-MDP whose induced digraph is strongly connected; it is *unobserved*
when ``C`` avoids every observed state.  The decomposition below is the
standard iterative SCC-pruning algorithm, run either on the full MDP or on
the MDP restricted to the unobserved states.
"""

from __future__ import annotations

from dataclasses import dataclass

from .graphs import strongly_connected_components
from .mdp import Mdp


@dataclass(frozen=True)
class SubMdp:
    """A state set together with per-state action subsets that never leave it."""

    states: tuple[str, ...]
    actions: dict[str, tuple[str, ...]]

    def __contains__(self, s):
        return s in self.actions

    @property
    def state_set(self) -> frozenset:
        return frozenset(self.states)


@dataclass(frozen=True)
class EndComponentReport:
    """Everything the `analyze` command surfaces about one model."""

    mecs: tuple[SubMdp, ...]
    unobserved_mecs: tuple[SubMdp, ...]
    stay_states: tuple[str, ...]
    all_unobserved_mecs_closed: bool

    def to_json_dict(self) -> dict:
        def enc(sub):
            return {"states": list(sub.states),
                    "actions": {s: list(a) for s, a in sub.actions.items()}}
        return {
            "mecs": [enc(m) for m in self.mecs],
            "unobserved_mecs": [enc(m) for m in self.unobserved_mecs],
            "stay_states": list(self.stay_states),
            "all_unobserved_mecs_closed": self.all_unobserved_mecs_closed,
        }


def _mec_decomposition(mdp: Mdp, states) -> list[SubMdp]:
    """Iterative SCC pruning over the sub-model spanned by `states`; actions
    whose support leaves the current candidate set are dropped as the
    candidates shrink.  Uses explicit worklists throughout so that very
    large models cannot overflow the call stack.
    """
    base_actions = {s: list(mdp.actions[s]) for s in states}
    index = mdp.state_index
    result = []
    worklist = [tuple(sorted(states, key=index.get))]
    while worklist:
        cand = worklist.pop()
        cset = set(cand)
        acts = {s: [a for a in base_actions[s]
                    if all(q in cset for q in mdp.transitions[(s, a)])]
                for s in cand}
        # drop states with no inside-staying action until stable
        while True:
            dead = [s for s in cand if not acts[s]]
            if not dead:
                break
            cset.difference_update(dead)
            cand = tuple(s for s in cand if s in cset)
            if not cand:
                break
            acts = {s: [a for a in acts[s]
                        if all(q in cset for q in mdp.transitions[(s, a)])]
                    for s in cand}
        if not cand:
            continue
        local = {s: k for k, s in enumerate(cand)}
        adj = [[] for _ in cand]
        for s in cand:
            row = set()
            for a in acts[s]:
                row.update(mdp.transitions[(s, a)])
            adj[local[s]] = sorted(local[q] for q in row)
        comps = strongly_connected_components(adj)
        if len(comps) == 1:
            comp = comps[0]
            # a singleton is an end component only with a self-sustaining action
            if len(comp) == 1 and not adj[comp[0]]:
                continue
            result.append(SubMdp(cand, {s: tuple(acts[s]) for s in cand}))
        else:
            for comp in comps:
                sub = tuple(cand[v] for v in comp)
                if len(sub) == 1:
                    s = sub[0]
                    self_acts = [a for a in acts[s]
                                 if set(mdp.transitions[(s, a)]) <= {s}]
                    if self_acts:
                        result.append(SubMdp(sub, {s: tuple(self_acts)}))
                    continue
                worklist.append(sub)
    result.sort(key=lambda sub: index[sub.states[0]])
    return result


def maximal_end_components(mdp: Mdp) -> list[SubMdp]:
    """The unique decomposition into maximal end components."""
    return _mec_decomposition(mdp, mdp.states)


def unobserved_mecs(mdp: Mdp) -> list[SubMdp]:
    """Maximal end components of the model restricted to unobserved states."""
    states = [s for s in mdp.states if s not in mdp.observed]
    return _mec_decomposition(mdp, states)


def stay_state_set(mdp: Mdp) -> frozenset:
    """Union of the state sets of all unobserved maximal end components:
    the states where an agent may settle forever without leaking."""
    return frozenset(s for sub in unobserved_mecs(mdp) for s in sub.states)


def is_closed(mdp: Mdp, states) -> bool:
    """True iff no action of any member state can leave `states`.

    Successors are taken over *all* enabled actions of the full MDP, not
    just the actions of some sub-MDP.
    """
    cset = set(states)
    if not cset:
        raise ValueError("closedness is defined for nonempty state sets")
    return all(set(mdp.successors(s)) <= cset for s in cset)


def all_unobserved_mecs_closed(mdp: Mdp) -> bool:
    """Whether every unobserved maximal end component is closed; the
    precondition for the single-solve synthesis mode."""
    return all(is_closed(mdp, sub.states) for sub in unobserved_mecs(mdp))


def is_union_uec(mdp: Mdp, states) -> SubMdp | None:
    """Check whether `states` is a union of unobserved end components.

    Returns the union sub-MDP carrying the maximal valid action subsets, or
    ``None`` when some member state has no self-sustaining action inside
    `states`.  The empty set is accepted as the trivial empty union.
    """
    cset = set(states)
    if not cset:
        return SubMdp((), {})
    if cset & mdp.observed:
        return None
    mecs = _mec_decomposition(mdp, sorted(cset, key=mdp.state_index.get))
    covered = {s for sub in mecs for s in sub.states}
    if covered != cset:
        return None
    actions: dict[str, tuple[str, ...]] = {}
    for sub in mecs:
        actions.update(sub.actions)
    ordered = tuple(sorted(cset, key=mdp.state_index.get))
    return SubMdp(ordered, actions)


def end_component_report(mdp: Mdp) -> EndComponentReport:
    mecs = tuple(maximal_end_components(mdp))
    umecs = tuple(unobserved_mecs(mdp))
    stay = tuple(sorted({s for sub in umecs for s in sub.states},
                        key=mdp.state_index.get))
    closed = all(is_closed(mdp, sub.states) for sub in umecs)
    return EndComponentReport(mecs, umecs, stay, closed)
