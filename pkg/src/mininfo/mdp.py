"""Core model types: MDPs, stationary policies, induced Markov chains.

The JSON interchange format consumed by every other module is defined here::

    { "states": ["s0", "s1", ...],
      "initial": "s0",
      "observed": ["s0", "s1"],
      "reach": { "targets": ["s2"], "threshold": 1.0 },
      "transitions": [ { "from": "s0", "action": "alpha", "to": {"s1": 1.0} }, ... ] }

Missing entries of a ``to`` map mean probability zero and each
``(from, action)`` pair may appear at most once.  Row sums that deviate from
one by at most ``RENORMALIZE_TOL`` are renormalized on load; larger
deviations are kept verbatim so that :func:`validate` reports them.

Extended nonnegative reals are represented as plain floats with
``math.inf``; products of zero and infinity are never formed here, the
explicit conventions live in :mod:`mininfo.information`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import InvalidPolicyError, ModelError, RecurrenceError
from .graphs import reachable_from, terminal_components

#: row-sum slack accepted (and silently renormalized) when loading JSON
RENORMALIZE_TOL = 1e-6
#: row-sum slack accepted by :func:`validate` on constructed models
ROW_SUM_TOL = 1e-9
#: above this size linear systems switch from dense LU to sparse solves
DENSE_LIMIT = 2000


@dataclass(frozen=True)
class Violation:
    """One violated model invariant; ``where`` names the offending state or
    state/action pair."""

    kind: str
    where: tuple
    detail: str

    def __str__(self):
        loc = ",".join(str(w) for w in self.where)
        return f"{self.kind} at ({loc}): {self.detail}"


class Mdp:
    """A finite MDP with an observation set and a reachability requirement.

    Parameters
    ----------
    states : sequence of str
        Ordered state identifiers.
    transitions : mapping (state, action) -> {state: probability}
        Sparse transition rows; the set of actions enabled at a state is the
        set of actions appearing for it, in insertion order.
    initial : str
        Initial state.
    observed : iterable of str
        States whose outgoing transitions the observer sees.
    targets : iterable of str
        Reachability target set (absorbing, unobserved).
    threshold : float
        Required probability of eventually reaching the targets.
    meta : dict, optional
        Free-form metadata (e.g. grid layout), carried through JSON.

    Instances are treated as immutable after construction and are safe to
    share across threads; all operations on them are pure functions.
    """

    def __init__(self, states, transitions, initial, observed=(),
                 targets=(), threshold=0.0, meta=None):
        self.states = tuple(states)
        self.state_index = {s: i for i, s in enumerate(self.states)}
        if len(self.state_index) != len(self.states):
            raise ModelError("duplicate state identifiers")
        self.initial = initial
        self.observed = frozenset(observed)
        self.targets = frozenset(targets)
        self.threshold = float(threshold)
        self.meta = dict(meta) if meta else {}

        actions: dict[str, list[str]] = {s: [] for s in self.states}
        rows: dict[tuple[str, str], dict[str, float]] = {}
        for (s, a), row in transitions.items():
            if s not in self.state_index:
                raise ModelError(f"transition from unknown state {s!r}")
            if (s, a) in rows:
                raise ModelError(f"duplicate transition row for ({s!r}, {a!r})")
            clean = {}
            for q, p in row.items():
                if q not in self.state_index:
                    raise ModelError(f"transition into unknown state {q!r}")
                p = float(p)
                if p != 0.0:
                    clean[q] = p
            rows[(s, a)] = clean
            actions[s].append(a)
        self.transitions = rows
        self.actions = {s: tuple(acts) for s, acts in actions.items()}
        self._succ = {
            s: tuple(sorted({q for a in self.actions[s]
                             for q in self.transitions[(s, a)]},
                            key=self.state_index.__getitem__))
            for s in self.states
        }

    # -- basic accessors -------------------------------------------------

    def enabled(self, s) -> tuple[str, ...]:
        return self.actions[s]

    def row(self, s, a) -> dict[str, float]:
        return self.transitions[(s, a)]

    def prob(self, s, a, q) -> float:
        return self.transitions[(s, a)].get(q, 0.0)

    def successors(self, s) -> tuple[str, ...]:
        """All states reachable from `s` in one step under any enabled action."""
        return self._succ[s]

    def is_absorbing(self, s) -> bool:
        """True when every enabled action loops on `s` with probability one."""
        for a in self.actions[s]:
            row = self.transitions[(s, a)]
            if set(row) != {s} or abs(row[s] - 1.0) > ROW_SUM_TOL:
                return False
        return bool(self.actions[s])

    def pairs(self):
        """All (state, action) pairs in state-major, enabled order."""
        for s in self.states:
            for a in self.actions[s]:
                yield (s, a)

    # -- JSON ------------------------------------------------------------

    @classmethod
    def from_json_dict(cls, data: dict) -> "Mdp":
        try:
            states = list(data["states"])
            initial = data["initial"]
            raw = data["transitions"]
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed MDP document: missing {exc}") from exc
        reach = data.get("reach") or {}
        transitions = {}
        for entry in raw:
            key = (entry["from"], entry["action"])
            if key in transitions:
                raise ModelError(f"duplicate transition row for {key}")
            row = {q: float(p) for q, p in entry["to"].items()}
            total = sum(row.values())
            if row and abs(total - 1.0) <= RENORMALIZE_TOL and total > 0:
                row = {q: p / total for q, p in row.items()}
            transitions[key] = row
        return cls(
            states=states,
            transitions=transitions,
            initial=initial,
            observed=data.get("observed", ()),
            targets=reach.get("targets", ()),
            threshold=reach.get("threshold", 0.0),
            meta=data.get("layout"),
        )

    def to_json_dict(self) -> dict:
        doc = {
            "states": list(self.states),
            "initial": self.initial,
            "observed": sorted(self.observed, key=self.state_index.get),
            "reach": {
                "targets": sorted(self.targets, key=self.state_index.get),
                "threshold": self.threshold,
            },
            "transitions": [
                {"from": s, "action": a, "to": dict(self.transitions[(s, a)])}
                for (s, a) in self.pairs()
            ],
        }
        if self.meta:
            doc["layout"] = self.meta
        return doc


@dataclass(frozen=True)
class StationaryPolicy:
    """A time-invariant map from states to distributions over actions."""

    probs: dict[str, dict[str, float]] = field(default_factory=dict)

    def prob(self, s, a) -> float:
        return self.probs.get(s, {}).get(a, 0.0)

    def distribution(self, s) -> dict[str, float]:
        return dict(self.probs.get(s, {}))

    def validate_for(self, mdp: Mdp) -> list[str]:
        problems = []
        for s in mdp.states:
            row = self.probs.get(s, {})
            enabled = set(mdp.actions[s])
            for a, p in row.items():
                if p < -ROW_SUM_TOL:
                    problems.append(f"negative probability at ({s},{a})")
                if p > 0 and a not in enabled:
                    problems.append(f"mass on disabled action at ({s},{a})")
            total = sum(row.get(a, 0.0) for a in enabled)
            if abs(total - 1.0) > ROW_SUM_TOL:
                problems.append(f"row at {s} sums to {total!r}")
        return problems

    @classmethod
    def uniform(cls, mdp: Mdp) -> "StationaryPolicy":
        return cls({s: {a: 1.0 / len(mdp.actions[s]) for a in mdp.actions[s]}
                    for s in mdp.states})

    def to_json_dict(self) -> dict:
        return {s: dict(row) for s, row in self.probs.items()}

    @classmethod
    def from_json_dict(cls, data: dict) -> "StationaryPolicy":
        return cls({s: {a: float(p) for a, p in row.items()}
                    for s, row in data.items()})


class MarkovChain:
    """The state process induced by a stationary policy on an MDP."""

    def __init__(self, states, rows, initial):
        self.states = tuple(states)
        self.state_index = {s: i for i, s in enumerate(self.states)}
        self.rows = rows
        self.initial = initial

    def row(self, s) -> dict[str, float]:
        return self.rows[s]

    def prob(self, s, q) -> float:
        return self.rows[s].get(q, 0.0)

    def support_adjacency(self) -> list[list[int]]:
        idx = self.state_index
        return [[idx[q] for q in self.rows[s] if self.rows[s][q] > 0.0]
                for s in self.states]

    def recurrent_classes(self) -> list[list[str]]:
        """Recurrent classes, identified graph-theoretically on the support
        (never numerically)."""
        comps = terminal_components(self.support_adjacency())
        return [[self.states[v] for v in comp] for comp in comps]

    def reachable_states(self) -> set[str]:
        adj = self.support_adjacency()
        seen = reachable_from(adj, [self.state_index[self.initial]])
        return {self.states[v] for v in seen}

    def is_absorbing(self, s) -> bool:
        row = self.rows[s]
        return set(row) == {s} and abs(row[s] - 1.0) <= ROW_SUM_TOL


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def validate(mdp: Mdp) -> list[Violation]:
    """Collect every violated structural invariant of `mdp`.

    An empty list means the model is valid.  Violations are data, not
    failures: loading a broken model succeeds and this function reports why
    it cannot be used.
    """
    out = []
    if mdp.initial not in mdp.state_index:
        out.append(Violation("unknown-initial", (mdp.initial,),
                             "initial state not a member of states"))
    for coll, kind in ((mdp.observed, "unknown-observed"),
                       (mdp.targets, "unknown-target")):
        for s in sorted(coll):
            if s not in mdp.state_index:
                out.append(Violation(kind, (s,), "not a member of states"))
    if not 0.0 <= mdp.threshold <= 1.0:
        out.append(Violation("bad-threshold", (),
                             f"threshold {mdp.threshold} outside [0, 1]"))
    for s in mdp.states:
        if not mdp.actions[s]:
            out.append(Violation("no-actions", (s,), "state has no enabled action"))
    for (s, a) in mdp.pairs():
        row = mdp.transitions[(s, a)]
        neg = [q for q, p in row.items() if p < 0]
        if neg:
            out.append(Violation("negative-probability", (s, a),
                                 f"negative mass toward {neg}"))
        total = sum(row.values())
        if abs(total - 1.0) > ROW_SUM_TOL:
            out.append(Violation("row-sum", (s, a),
                                 f"row sums to {total!r}"))
    for t in sorted(mdp.targets & set(mdp.state_index)):
        if not mdp.is_absorbing(t):
            out.append(Violation("non-absorbing-target", (t,),
                                 "reach targets must be absorbing"))
    overlap = sorted(mdp.observed & mdp.targets)
    for s in overlap:
        out.append(Violation("observed-target", (s,),
                             "reach targets must not be observed"))
    return out


def lint(mdp: Mdp) -> list[Violation]:
    """Non-fatal warnings: structures that are legal but score infinite
    information whenever they are visited."""
    out = []
    for w in sorted(mdp.observed & set(mdp.state_index),
                    key=mdp.state_index.get):
        if len(mdp.successors(w)) == 1:
            out.append(Violation(
                "single-successor-observed", (w,),
                "observed state with a single successor leaks infinite "
                "information whenever visited"))
    return out


def induce_chain(mdp: Mdp, policy: StationaryPolicy) -> MarkovChain:
    """Mix the action rows of `mdp` with `policy` into a Markov chain.

    Raises
    ------
    InvalidPolicyError
        If the policy puts mass on a disabled action or a policy row does
        not normalize.
    """
    problems = policy.validate_for(mdp)
    if problems:
        raise InvalidPolicyError("; ".join(problems))
    rows = {}
    for s in mdp.states:
        mixed: dict[str, float] = {}
        for a in mdp.actions[s]:
            pa = policy.prob(s, a)
            if pa == 0.0:
                continue
            for q, p in mdp.transitions[(s, a)].items():
                mixed[q] = mixed.get(q, 0.0) + pa * p
        rows[s] = mixed
    return MarkovChain(mdp.states, rows, mdp.initial)


def _linear_solve(matrix, rhs):
    """Dense LU below DENSE_LIMIT unknowns, sparse LU with iterative
    refinement above; refined to a 1e-10 residual either way."""
    n = matrix.shape[0]
    if n == 0:
        return np.zeros(0)
    if n <= DENSE_LIMIT:
        dense = matrix.toarray() if sps.issparse(matrix) else np.asarray(matrix)
        return np.linalg.solve(dense, rhs)
    mat = sps.csc_matrix(matrix)
    lu = spla.splu(mat)
    x = lu.solve(rhs)
    for _ in range(5):
        res = rhs - mat @ x
        if np.max(np.abs(res)) <= 1e-10 * max(1.0, np.max(np.abs(rhs))):
            break
        x = x + lu.solve(res)
    return x


def reach_probability(chain: MarkovChain, targets, source=None) -> float:
    """Probability of eventually reaching `targets` from `source`.

    States with no path to the targets are identified graph-theoretically
    first, then the standard linear system is solved over the remaining
    non-target states (which makes the system nonsingular).
    """
    targets = set(targets)
    if not targets:
        raise ValueError("targets must be nonempty")
    if source is None:
        source = chain.initial
    if source in targets:
        return 1.0
    idx = chain.state_index
    n = len(chain.states)
    # backward reachability: which states have a path into the targets
    radj: list[list[int]] = [[] for _ in range(n)]
    for s in chain.states:
        for q, p in chain.rows[s].items():
            if p > 0.0:
                radj[idx[q]].append(idx[s])
    can_reach = reachable_from(radj, [idx[t] for t in targets])
    src = idx[source]
    if src not in can_reach:
        return 0.0
    interior = [v for v in sorted(can_reach)
                if chain.states[v] not in targets]
    pos = {v: k for k, v in enumerate(interior)}
    m = len(interior)
    if m > DENSE_LIMIT:
        mat = sps.lil_matrix((m, m))
        mat.setdiag(1.0)
    else:
        mat = np.eye(m)
    rhs = np.zeros(m)
    for k, v in enumerate(interior):
        for q, p in chain.rows[chain.states[v]].items():
            j = idx[q]
            if q in targets:
                rhs[k] += p
            elif j in pos:
                mat[k, pos[j]] -= p
            # transitions into states that cannot reach the targets
            # contribute zero value
    sol = _linear_solve(mat, rhs)
    return float(min(1.0, max(0.0, sol[pos[src]])))


def residence_times(chain: MarkovChain, transient_set) -> dict[str, float]:
    """Expected number of visits to each state, starting from the chain's
    initial state.

    `transient_set` must contain exactly the transient states the caller
    wants solved for; recurrence is re-checked graph-theoretically and a
    misclassified state raises :class:`RecurrenceError`.  States outside
    the set map to ``inf`` when they are recurrent and reachable and to
    ``0.0`` when unreachable.
    """
    transient_set = set(transient_set)
    recurrent = {s for comp in chain.recurrent_classes() for s in comp}
    bad = sorted(transient_set & recurrent)
    if bad:
        raise RecurrenceError(
            f"states {bad} are recurrent; the residence system would be singular")
    reachable = chain.reachable_states()
    order = [s for s in chain.states if s in transient_set]
    pos = {s: k for k, s in enumerate(order)}
    m = len(order)
    use_sparse = m > DENSE_LIMIT
    if use_sparse:
        mat = sps.lil_matrix((m, m))
        for s in order:
            mat[pos[s], pos[s]] = 1.0
    else:
        mat = np.eye(m)
    rhs = np.zeros(m)
    if chain.initial in pos:
        rhs[pos[chain.initial]] = 1.0
    # (I - Q^T) x = e_init, Q restricted to the transient set
    for s in order:
        for q, p in chain.rows[s].items():
            if q in pos:
                mat[pos[q], pos[s]] -= p
    sol = _linear_solve(mat, rhs) if m else np.zeros(0)
    out: dict[str, float] = {}
    for s in chain.states:
        if s in pos:
            out[s] = float(max(0.0, sol[pos[s]]))
        elif s in recurrent and s in reachable:
            out[s] = math.inf
        else:
            out[s] = 0.0
    return out


def classify_transient(chain: MarkovChain) -> set[str]:
    """The states not belonging to any recurrent class of the chain."""
    recurrent = {s for comp in chain.recurrent_classes() for s in comp}
    return {s for s in chain.states if s not in recurrent}
