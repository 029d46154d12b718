"""The information objective.

For an observed state with successor distribution ``p`` the *transition
information* is ``1 / sum_q p_q (1 - p_q)`` — the reciprocal of the trace of
the categorical covariance.  It is infinite for a deterministic transition
(the observer learns the row from one sample) and minimized by the uniform
distribution, where it equals ``k / (k - 1)``.

Over expected state-action residence times ``x`` the per-state expected
information takes the form

    g(y) = T^3 / (T^2 - sum_q y_q^2),    y = P x,  T = sum_q y_q,

with ``P`` the matrix of per-action successor distributions.  ``g`` is the
perspective of a convex function, hence convex and positively homogeneous of
degree one.  Extended values at the boundary:

* ``T = 0``      -> 0       (the state is never visited, nothing leaks);
* one ``y_q``    -> inf     (deterministic transition, observed at least once);
* ``T = inf``    -> inf     (visited forever, the row is learned exactly).

Support decisions use the absolute tolerance ``SUPPORT_TOL`` on entries of
``y`` because exact zero tests are brittle after linear algebra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (DomainError, InvalidDistributionError, InvalidPathError)
from .mdp import Mdp, MarkovChain, StationaryPolicy, induce_chain, \
    residence_times

SUPPORT_TOL = 1e-12


def transition_information(dist) -> float:
    """Information leaked by one observed transition with successor
    distribution `dist`; ``inf`` when the distribution is deterministic.

    Raises
    ------
    InvalidDistributionError
        On negative entries or a row that does not sum to one.
    """
    p = np.asarray(dist, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise InvalidDistributionError("distribution must be a nonempty vector")
    if np.any(p < -1e-12):
        raise InvalidDistributionError(f"negative entries in {p.tolist()}")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-9:
        raise InvalidDistributionError(f"distribution sums to {total!r}")
    denom = float(np.sum(p * (1.0 - p)))
    if denom <= SUPPORT_TOL:
        return math.inf
    return 1.0 / denom


@dataclass(frozen=True)
class InfoTerm:
    """One observed state's contribution, parameterized by the residence
    times of its actions.

    ``matrix`` has one row per successor (in `successor_order`) and one
    column per action of the state; each column is that action's successor
    distribution, so columns sum to one.
    """

    state: str
    successor_order: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=float))


def build_info_term(mdp: Mdp, state: str) -> InfoTerm:
    succ = mdp.successors(state)
    acts = mdp.actions[state]
    mat = np.zeros((len(succ), len(acts)))
    for j, a in enumerate(acts):
        for q, p in mdp.transitions[(state, a)].items():
            mat[succ.index(q), j] = p
    return InfoTerm(state, succ, mat)


# -- the scalar kernel g and its derivatives ---------------------------------

def g_value(y) -> float:
    """Extended-value evaluation of ``g`` at ``y >= 0``."""
    y = np.asarray(y, dtype=float)
    if np.any(np.isnan(y)):
        raise DomainError("NaN in residence vector")
    if np.any(np.isinf(y)):
        return math.inf
    total = float(y.sum())
    positive = int(np.count_nonzero(y > SUPPORT_TOL))
    if positive == 0 or total <= 0.0:
        return 0.0
    if positive == 1:
        return math.inf
    denom = total * total - float(y @ y)
    if denom <= 0.0:
        return math.inf
    return total ** 3 / denom


def g_grad_hess(y):
    """Gradient and Hessian of ``g`` at a strictly interior point.

    With ``T = sum y`` and ``D = T^2 - sum y^2``::

        dg/dy_q   = 3 T^2 / D - 2 T^3 (T - y_q) / D^2
        d2g/dqdr  = 6T/D - 6T^2 (T-y_q)/D^2 - 6T^2 (T-y_r)/D^2
                    - 2T^3 [q != r]/D^2 + 8T^3 (T-y_q)(T-y_r)/D^3
    """
    y = np.asarray(y, dtype=float)
    total = float(y.sum())
    if total <= 0.0 or int(np.count_nonzero(y > SUPPORT_TOL)) < 2:
        raise DomainError("gradient requested at an extended-value point")
    denom = total * total - float(y @ y)
    if denom <= 0.0:
        raise DomainError("gradient requested at an extended-value point")
    t2, t3 = total * total, total ** 3
    rem = total - y
    grad = 3.0 * t2 / denom - 2.0 * t3 * rem / denom ** 2
    off = np.ones((y.size, y.size)) - np.eye(y.size)
    hess = (6.0 * total / denom
            - 6.0 * t2 * (rem[:, None] + rem[None, :]) / denom ** 2
            - 2.0 * t3 * off / denom ** 2
            + 8.0 * t3 * np.outer(rem, rem) / denom ** 3)
    return grad, hess


def info_term_value(term: InfoTerm, x) -> float:
    """Expected information of the term's state given per-action residence
    times `x`; equals residence times transition information wherever both
    are finite."""
    x = np.asarray(x, dtype=float)
    if np.any(x < -SUPPORT_TOL):
        raise DomainError(f"negative residence times {x.tolist()}")
    if np.any(np.isinf(x)):
        return math.inf
    return g_value(term.matrix @ np.maximum(x, 0.0))


def info_term_gradient(term: InfoTerm, x) -> np.ndarray:
    """Analytic gradient of :func:`info_term_value` in the finite region."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("gradient requested at negative residence times")
    y = term.matrix @ x
    grad_y, _ = g_grad_hess(y)
    return term.matrix.T @ grad_y


def info_term_hessian(term: InfoTerm, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = term.matrix @ x
    _, hess_y = g_grad_hess(y)
    return term.matrix.T @ hess_y @ term.matrix


# -- whole-model quantities ---------------------------------------------------

def _chain_information(chain: MarkovChain, mdp: Mdp, state: str) -> float:
    """Transition information of `state` in the induced chain, over the
    successor set of the full MDP."""
    row = chain.rows[state]
    succ = mdp.successors(state)
    dist = np.array([row.get(q, 0.0) for q in succ])
    denom = float(np.sum(dist * (1.0 - dist)))
    if denom <= SUPPORT_TOL:
        return math.inf
    return 1.0 / denom


def expected_total_information(mdp: Mdp, policy: StationaryPolicy) -> float:
    """Expected sum of per-visit transition information over a random path.

    Equals ``sum_w x_w * info_w`` over observed states; infinite as soon as
    some observed state is reachable and recurrent, or reachable with a
    deterministic induced transition.
    """
    chain = induce_chain(mdp, policy)
    recurrent = {s for comp in chain.recurrent_classes() for s in comp}
    reachable = chain.reachable_states()
    for w in mdp.observed:
        if w in recurrent and w in reachable:
            return math.inf
    transient = {s for s in chain.states if s not in recurrent}
    x = residence_times(chain, transient)
    total = 0.0
    for w in sorted(mdp.observed, key=mdp.state_index.get):
        xw = x[w]
        if xw == 0.0:
            continue
        info = _chain_information(chain, mdp, w)
        if math.isinf(info) or math.isinf(xw):
            return math.inf
        total += xw * info
    return total


def path_total_information(mdp: Mdp, policy: StationaryPolicy, path) -> float:
    """Total information of one path: the policy-induced transition
    information summed over its observed visits.

    Finite paths are scored on every visit up to and including their last
    state.  Raises :class:`InvalidPathError` when the path starts away from
    the initial state or uses a zero-probability transition.
    """
    path = list(path)
    if not path:
        return 0.0
    if path[0] != mdp.initial:
        raise InvalidPathError(f"path starts at {path[0]!r}, not the initial state")
    chain = induce_chain(mdp, policy)
    for s, q in zip(path, path[1:]):
        if chain.prob(s, q) <= 0.0:
            raise InvalidPathError(f"impossible transition {s!r} -> {q!r}")
    total = 0.0
    cache: dict[str, float] = {}
    for s in path:
        if s not in mdp.observed:
            continue
        if s not in cache:
            cache[s] = _chain_information(chain, mdp, s)
        if math.isinf(cache[s]):
            return math.inf
        total += cache[s]
    return total


def ext_sum(values) -> float:
    """Sum of extended nonnegative reals; short-circuits to ``inf`` and
    refuses NaN."""
    total = 0.0
    for v in values:
        if math.isnan(v):
            raise DomainError("NaN in extended-real sum")
        if math.isinf(v):
            return math.inf
        total += v
    return total
