"""The observer's side: path sampling, sample-mean estimation of the
observed transition rows, mean-squared-error reports, and the
information-based lower bounds on estimation error.

Simulation is vectorized over paths and deterministic for a given seed:
paths are generated in fixed-size chunks whose generators are spawned from
one seed sequence, so the output is bit-identical regardless of how many
worker threads map the chunks.

The empirical MSE of the sample-mean estimator is reported against the
bounds but never asserted to exceed them: on correlated path data the
sample mean is neither unbiased nor efficient, so the bounds need not bind
it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .mdp import Mdp, MarkovChain, StationaryPolicy, induce_chain, \
    reach_probability, residence_times
from .information import SUPPORT_TOL, _chain_information, \
    expected_total_information
from .synthesis import SwitchPolicy

_CHUNK = 4096


@dataclass(frozen=True)
class PathSample:
    """One simulated trajectory; `truncated` marks a horizon cut before
    absorption."""

    states: tuple[str, ...]
    truncated: bool = False


@dataclass(frozen=True)
class StateEstimate:
    """Sample-mean estimate of one observed state's successor row."""

    state: str
    successor_order: tuple[str, ...]
    count: int
    estimate: tuple[float, ...] | None   # None when no sample was seen
    mse: float | None = None
    no_sample: bool = False


@dataclass(frozen=True)
class EstimationReport:
    per_state: dict[str, StateEstimate]
    n_paths: int = 0
    n_truncated: int = 0
    total_mse: float | None = None
    weighted_mse: float | None = None
    no_sample_rule: str = "uniform"

    def to_json_dict(self) -> dict:
        return {
            "paths": self.n_paths,
            "truncated_paths": self.n_truncated,
            "no_sample_rule": self.no_sample_rule,
            "total_mse": self.total_mse,
            "weighted_mse": self.weighted_mse,
            "states": {
                s: {
                    "count": e.count,
                    "successors": list(e.successor_order),
                    "estimate": list(e.estimate) if e.estimate else None,
                    "mse": e.mse,
                    "no_sample": e.no_sample,
                }
                for s, e in self.per_state.items()
            },
        }


@dataclass(frozen=True)
class StateBound:
    """Per-state lower bound on an unbiased estimator's MSE:
    reach(w)^2 / (x_w * info_w), zero (flagged) for unvisited states."""

    state: str
    bound: float
    reach_prob: float
    unvisited: bool = False


@dataclass(frozen=True)
class BoundReport:
    per_state: dict[str, StateBound]
    sum_bound: float
    aggregate_bound: float
    expected_total_information: float
    infinite_information: bool = False

    def to_json_dict(self) -> dict:
        return {
            "expected_total_information":
                "inf" if math.isinf(self.expected_total_information)
                else self.expected_total_information,
            "per_state_sum_bound": self.sum_bound,
            "aggregate_bound": self.aggregate_bound,
            "infinite_information": self.infinite_information,
            "states": {
                s: {"bound": b.bound, "reach_prob": b.reach_prob,
                    "unvisited": b.unvisited}
                for s, b in self.per_state.items()
            },
        }


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def _chain_tables(chain: MarkovChain):
    """Padded successor/cumulative-probability tables for vectorized draws."""
    n = len(chain.states)
    idx = chain.state_index
    width = max(1, max(len(chain.rows[s]) for s in chain.states))
    succ = np.zeros((n, width), dtype=np.int64)
    cum = np.ones((n, width))
    absorbing = np.zeros(n, dtype=bool)
    for s in chain.states:
        i = idx[s]
        row = chain.rows[s]
        items = sorted(row.items(), key=lambda kv: idx[kv[0]])
        probs = np.array([p for _, p in items])
        total = probs.sum()
        if total > 0:
            probs = probs / total
        c = np.cumsum(probs)
        for j, (q, _) in enumerate(items):
            succ[i, j] = idx[q]
            cum[i, j] = c[j]
        succ[i, len(items):] = succ[i, len(items) - 1] if items else i
        absorbing[i] = chain.is_absorbing(s)
    return succ, cum, absorbing


def _simulate_chunk(tables, start, count, horizon, rng):
    succ, cum, absorbing = tables
    cur = np.full(count, start, dtype=np.int64)
    seqs = [cur.copy()]
    active = ~absorbing[cur]
    for _ in range(horizon):
        if not active.any():
            break
        nxt = cur.copy()
        acts = np.nonzero(active)[0]
        u = rng.random(acts.size)
        rows = cur[acts]
        k = (u[:, None] > cum[rows]).sum(axis=1)
        nxt[acts] = succ[rows, k]
        seqs.append(nxt)
        cur = nxt
        active = active & ~absorbing[cur]
    return np.stack(seqs, axis=1), active  # active = truncated mask


def _simulate_chunk_switch(tables_base, tables_stay, p_switch, stay_mask,
                           start, count, horizon, rng):
    succ_b, cum_b, absorbing_b = tables_base
    succ_s, cum_s, absorbing_s = tables_stay
    cur = np.full(count, start, dtype=np.int64)
    switched = np.zeros(count, dtype=bool)
    seqs = [cur.copy()]

    def absorbed(states, flags):
        return np.where(flags, absorbing_s[states], absorbing_b[states]
                        & ~stay_mask[states])

    active = ~absorbed(cur, switched)
    for _ in range(horizon):
        if not active.any():
            break
        acts = np.nonzero(active)[0]
        rows = cur[acts]
        flags = switched[acts]
        # decide switching for unswitched paths sitting on stay states
        decide = ~flags & stay_mask[rows]
        if decide.any():
            u = rng.random(int(decide.sum()))
            newly = u <= p_switch[rows[decide]]
            flg = flags.copy()
            flg[decide] = newly
            flags = flg
            switched[acts] = flags
        nxt = cur.copy()
        u = rng.random(acts.size)
        take_stay = flags
        k_stay = (u[:, None] > cum_s[rows]).sum(axis=1)
        k_base = (u[:, None] > cum_b[rows]).sum(axis=1)
        chosen = np.where(take_stay, succ_s[rows, k_stay],
                          succ_b[rows, k_base])
        nxt[acts] = chosen
        seqs.append(nxt)
        cur = nxt
        active = active & ~absorbed(cur, switched)
    return np.stack(seqs, axis=1), active


def _switch_chains(mdp: Mdp, policy: SwitchPolicy):
    """Base chain (switch mass renormalized away) and stay chain on the
    original state space, plus the per-state switch probabilities."""
    base_rows = {}
    p_switch = {}
    for s in mdp.states:
        row = policy.base.distribution(s)
        psw = row.pop(policy.switch_action, 0.0)
        if s in policy.stay_states:
            p_switch[s] = psw
        if psw >= 1.0 - 1e-12:
            row = policy.stay.distribution(s)
        else:
            row = {a: p / (1.0 - psw) for a, p in row.items()}
        mixed: dict[str, float] = {}
        for a, pa in row.items():
            if pa <= 0.0:
                continue
            for q, p in mdp.transitions[(s, a)].items():
                mixed[q] = mixed.get(q, 0.0) + pa * p
        base_rows[s] = mixed
    stay_chain = induce_chain(mdp, policy.stay)
    return (MarkovChain(mdp.states, base_rows, mdp.initial), stay_chain,
            p_switch)


def simulate_paths(mdp: Mdp, policy, n: int, horizon: int | None = None,
                   seed: int = 0, threads: int = 1) -> list[PathSample]:
    """Sample `n` independent paths from the process `policy` induces on
    `mdp`, each cut at absorption or after `horizon` transitions
    (default ``10 * |S|``).  Deterministic for a given seed, independent of
    `threads`."""
    if n < 1:
        raise ValueError("need at least one path")
    if horizon is None:
        horizon = 10 * len(mdp.states)
    if horizon < 1:
        raise ValueError("horizon must be positive")
    idx = mdp.state_index
    start = idx[mdp.initial]
    if isinstance(policy, SwitchPolicy):
        base_chain, stay_chain, p_sw = _switch_chains(mdp, policy)
        tables_b = _chain_tables(base_chain)
        tables_s = _chain_tables(stay_chain)
        p_switch = np.zeros(len(mdp.states))
        stay_mask = np.zeros(len(mdp.states), dtype=bool)
        for s, p in p_sw.items():
            p_switch[idx[s]] = p
            stay_mask[idx[s]] = True

        def run(args):
            count, rng = args
            return _simulate_chunk_switch(tables_b, tables_s, p_switch,
                                          stay_mask, start, count, horizon,
                                          rng)
    else:
        chain = induce_chain(mdp, policy)
        tables = _chain_tables(chain)

        def run(args):
            count, rng = args
            return _simulate_chunk(tables, start, count, horizon, rng)

    counts = [_CHUNK] * (n // _CHUNK)
    if n % _CHUNK:
        counts.append(n % _CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(counts))
    jobs = [(c, np.random.Generator(np.random.Philox(ss)))
            for c, ss in zip(counts, seeds)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run, jobs))
    else:
        chunks = [run(j) for j in jobs]

    names = mdp.states
    absorbing_idx = {idx[s] for s in mdp.states}
    paths = []
    for seqs, truncated in chunks:
        for row, trunc in zip(seqs, truncated):
            # trim the tail of repeated absorbing states to the first visit
            states = [names[v] for v in row]
            end = len(states)
            while end >= 2 and states[end - 1] == states[end - 2] and not trunc:
                end -= 1
            paths.append(PathSample(tuple(states[:end]), bool(trunc)))
    return paths


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

def estimate(paths, mdp: Mdp) -> EstimationReport:
    """Sample-mean estimates of the successor rows at observed states,
    counting one sample per observed departure."""
    paths = list(paths)
    observed = sorted(mdp.observed, key=mdp.state_index.get)
    succ_of = {w: mdp.successors(w) for w in observed}
    pos = {w: {q: i for i, q in enumerate(succ_of[w])} for w in observed}
    counts = {w: np.zeros(len(succ_of[w])) for w in observed}
    n_trunc = 0
    for path in paths:
        if path.truncated:
            n_trunc += 1
        seq = path.states
        for s, q in zip(seq, seq[1:]):
            if s in counts:
                counts[s][pos[s][q]] += 1
    per_state = {}
    for w in observed:
        total = int(counts[w].sum())
        if total == 0:
            per_state[w] = StateEstimate(w, succ_of[w], 0, None,
                                         no_sample=True)
        else:
            est = tuple((counts[w] / total).tolist())
            per_state[w] = StateEstimate(w, succ_of[w], total, est)
    return EstimationReport(per_state, n_paths=len(paths),
                            n_truncated=n_trunc)


def mse_report(report: EstimationReport, mdp: Mdp, policy,
               no_sample: str = "uniform") -> EstimationReport:
    """Fill in per-state MSE against the true induced rows plus plain and
    observation-weighted totals.

    States without samples either contribute the MSE of the uniform guess
    over their successors (``no_sample="uniform"``, the maximum-entropy
    prior) or are left out of the totals (``"exclude"``).
    """
    if no_sample not in ("uniform", "exclude"):
        raise ValueError("no_sample must be 'uniform' or 'exclude'")
    chain = _induced_state_chain(mdp, policy)
    per_state = {}
    total = 0.0
    weighted = 0.0
    grand = sum(e.count for e in report.per_state.values())
    for w, entry in report.per_state.items():
        succ = entry.successor_order
        truth = np.array([chain.prob(w, q) for q in succ])
        if entry.no_sample:
            if no_sample == "exclude":
                per_state[w] = entry
                continue
            guess = np.full(len(succ), 1.0 / len(succ))
        else:
            guess = np.array(entry.estimate)
        mse = float(np.sum((guess - truth) ** 2))
        per_state[w] = replace(entry, mse=mse)
        total += mse
        if grand > 0:
            weighted += (entry.count / grand) * mse
    return replace(report, per_state=per_state, total_mse=total,
                   weighted_mse=weighted, no_sample_rule=no_sample)


def _induced_state_chain(mdp: Mdp, policy) -> MarkovChain:
    """The chain the observer watches: for a switch policy this is the
    base behavior before committing (the stay policy only runs inside
    unobserved components, which the observer never sees)."""
    if isinstance(policy, SwitchPolicy):
        base_chain, _stay, _p = _switch_chains(mdp, policy)
        return base_chain
    return induce_chain(mdp, policy)


# ---------------------------------------------------------------------------
# information bounds
# ---------------------------------------------------------------------------

def cramer_rao_bounds(mdp: Mdp, policy: StationaryPolicy) -> BoundReport:
    """Lower bounds on the MSE of unbiased estimators of the observed rows.

    Per state: ``reach(w)^2 / (x_w info_w)``; their sum is the tighter
    aggregate.  The coarser aggregate is
    ``min_w reach(w)^2 |W|^2 / E[total information]``, which collapses to
    ``|W|^2 / E`` when every observed state is surely visited.  States with
    no chance of a visit get bound zero with an `unvisited` flag.
    """
    chain = induce_chain(mdp, policy)
    expected = expected_total_information(mdp, policy)
    observed = sorted(mdp.observed, key=mdp.state_index.get)
    transient = {s for s in chain.states
                 if s not in {t for comp in chain.recurrent_classes()
                              for t in comp}}
    x = residence_times(chain, transient)
    per_state = {}
    reach_probs = {}
    for w in observed:
        reach_w = (1.0 if w == mdp.initial
                   else reach_probability(chain, {w}))
        reach_probs[w] = reach_w
        if reach_w <= 0.0 or x.get(w, 0.0) <= 0.0:
            per_state[w] = StateBound(w, 0.0, reach_w, unvisited=True)
            continue
        info = _chain_information(chain, mdp, w)
        denom = x[w] * info if not math.isinf(info) else math.inf
        bound = 0.0 if math.isinf(denom) else reach_w ** 2 / denom
        per_state[w] = StateBound(w, bound, reach_w)
    sum_bound = sum(b.bound for b in per_state.values())
    if observed and not math.isinf(expected) and expected > 0:
        min_reach = min(reach_probs.values())
        aggregate = min_reach ** 2 * len(observed) ** 2 / expected
    else:
        aggregate = 0.0
    return BoundReport(per_state, sum_bound, aggregate, expected,
                       infinite_information=math.isinf(expected))
