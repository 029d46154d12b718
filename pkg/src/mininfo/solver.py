"""Interior-point solver for the expected-information flow program.

The decision variables are expected state-action residence times ``x(s, a)``
for states outside the designated *stay set* (states where the agent may
remain forever without leaking).  The feasible region is the flow polytope

    x >= 0,
    out(s) - in(s) = [s = s0]          for every kept state s,
    inflow(targets) + [s0 in targets] >= threshold,

and the objective is a sum of convex, positively homogeneous terms
``g(P_w x_w)`` over observed states plus optional grouped penalty terms.

Solution method: a primal log-barrier on ``x >= 0`` (and on the reach
inequality when it has interior), minimized per barrier weight by damped
Newton steps on the equality-constrained KKT system (infeasible-start, so a
strictly positive but not flow-feasible warm start is fine).  The barrier
subproblem also carries a ``mu * kappa * sum(x)`` drift term: the polytope
is unbounded along residence flows of unobserved end components outside the
stay set, the objective is constant along those rays, and the drift pins
them at O(1) instead of letting the log terms push them to infinity.  Both
the barrier weight and the drift vanish as ``mu`` shrinks.

Support preprocessing removes variables that are zero in every usable
solution (states that cannot carry initial-state flow into the stay set)
and states whose visits force an infinite objective (observed states with a
single achievable successor, penalty groups with a single live member).
After convergence, observed states with residence below ``TINY_RESIDENCE``
are tentatively forced to zero and the program re-solved on the reduced
support; the better objective is kept.  This realizes the lower
semicontinuous closure of the objective at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

from .errors import NumericalFailureError
from .mdp import Mdp
from .information import SUPPORT_TOL

#: observed-state residence below which the support refinement forces zero
TINY_RESIDENCE = 1e-7
#: slack inside which the reach inequality is treated as an equality
REACH_ACTIVE_TOL = 1e-7
#: feasibility slack on the reach threshold
REACH_FEAS_TOL = 1e-9

BARRIER_MU0 = 1.0
BARRIER_MU_MIN = 1e-9
BARRIER_SHRINK = 10.0
BARRIER_DRIFT = 1.0
ARMIJO_C = 1e-4
MAX_NEWTON = 60


@dataclass(frozen=True)
class PenaltyGroup:
    """A grouped information penalty over the total residence times of
    `states`, scaled by `weight` (the exit-information construction)."""

    label: str
    states: tuple[str, ...]
    weight: float = 1.0


@dataclass
class _TermBlock:
    """Same-shape information terms, batched for vectorized evaluation.

    ``y = mats[i] @ x[var_idx[i]]`` per term; weights scale the objective.
    """

    labels: list[str]
    var_idx: np.ndarray   # (N, m) int
    mats: np.ndarray      # (N, k, m)
    weights: np.ndarray   # (N,)

    def y_of(self, x):
        return np.einsum("nkm,nm->nk", self.mats, x[self.var_idx])

    def interior_value(self, x):
        y = self.y_of(x)
        total = y.sum(axis=1)
        denom = total * total - np.einsum("nk,nk->n", y, y)
        return float(np.sum(self.weights * total ** 3 / denom))

    def true_value(self, x):
        """Extended-value objective contribution (boundary rules applied)."""
        y = self.y_of(x)
        total = y.sum(axis=1)
        npos = (y > SUPPORT_TOL).sum(axis=1)
        out = 0.0
        for i in range(y.shape[0]):
            if self.weights[i] == 0.0 or total[i] <= 0.0 or npos[i] == 0:
                continue
            if npos[i] == 1:
                return math.inf
            denom = total[i] * total[i] - float(y[i] @ y[i])
            if denom <= 0.0:
                return math.inf
            out += self.weights[i] * total[i] ** 3 / denom
        return out

    def add_grad(self, x, grad):
        y = self.y_of(x)
        total = y.sum(axis=1)
        denom = total * total - np.einsum("nk,nk->n", y, y)
        t2 = total * total
        rem = total[:, None] - y
        gy = 3.0 * t2[:, None] / denom[:, None] \
            - 2.0 * (t2 * total)[:, None] * rem / (denom ** 2)[:, None]
        gx = np.einsum("nkm,nk->nm", self.mats, gy) * self.weights[:, None]
        np.add.at(grad, self.var_idx, gx)

    def hess_entries(self, x):
        """COO entries of the weighted Hessian contribution."""
        y = self.y_of(x)
        total = y.sum(axis=1)
        denom = total * total - np.einsum("nk,nk->n", y, y)
        t2 = total * total
        t3 = t2 * total
        rem = total[:, None] - y                      # (N, k)
        k = y.shape[1]
        off = 1.0 - np.eye(k)
        hy = (6.0 * (total / denom)[:, None, None]
              - 6.0 * (t2 / denom ** 2)[:, None, None]
              * (rem[:, :, None] + rem[:, None, :])
              - 2.0 * (t3 / denom ** 2)[:, None, None] * off[None, :, :]
              + 8.0 * (t3 / denom ** 3)[:, None, None]
              * (rem[:, :, None] * rem[:, None, :]))
        hx = np.einsum("nqa,nqr,nrb->nab", self.mats, hy, self.mats)
        hx *= self.weights[:, None, None]
        m = self.var_idx.shape[1]
        rows = np.repeat(self.var_idx, m, axis=1).ravel()
        cols = np.tile(self.var_idx, (1, m)).ravel()
        return rows, cols, hx.ravel()


@dataclass
class FlowProblem:
    """The assembled program over the kept support."""

    mdp: Mdp
    stay: frozenset
    forbidden: frozenset
    pairs: list[tuple[str, str]]
    var_of: dict[tuple[str, str], int]
    a_eq: sps.csr_matrix
    b_eq: np.ndarray
    row_states: list[str]
    reach_c: np.ndarray
    reach_base: float
    blocks: list[_TermBlock] = field(default_factory=list)
    state_vars: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n(self):
        return len(self.pairs)

    def reach_value(self, x) -> float:
        return float(self.reach_c @ x + self.reach_base)

    def true_objective(self, x) -> float:
        total = 0.0
        for block in self.blocks:
            v = block.true_value(x)
            if math.isinf(v):
                return math.inf
            total += v
        return total

    def state_residence(self, x) -> dict[str, float]:
        return {s: float(x[idx].sum()) for s, idx in self.state_vars.items()}


@dataclass
class FlowResult:
    status: str                    # "optimal" or "empty"
    objective: float = math.inf
    reach_prob: float = 0.0
    x: dict = field(default_factory=dict)
    residence: dict = field(default_factory=dict)
    forbidden: frozenset = frozenset()
    message: str = ""


# ---------------------------------------------------------------------------
# support restriction
# ---------------------------------------------------------------------------

def _kept_support(mdp: Mdp, stay: frozenset, forbidden: frozenset):
    """Fixpoint of: keep only states reachable from the initial state that
    can push flow into the stay set, using only actions whose support stays
    inside the kept region plus the stay set and avoids forbidden states.

    Returns ``{state: [actions]}`` or ``None`` when the initial state does
    not survive (the polytope is empty).
    """
    keep = {s for s in mdp.states if s not in stay and s not in forbidden}
    acts = {s: list(mdp.actions[s]) for s in keep}
    idx = mdp.state_index
    while True:
        allowed = keep | stay
        changed = False
        for s in list(keep):
            good = [a for a in acts[s]
                    if all(q in allowed for q in mdp.transitions[(s, a)])]
            if len(good) != len(acts[s]):
                acts[s] = good
                changed = True
            if not good:
                keep.discard(s)
                changed = True
        if mdp.initial not in keep:
            return None
        # union-support adjacency over kept pairs
        fwd_adj = {s: set() for s in keep}
        rev_adj = {s: set() for s in keep}
        touches_stay = set()
        for s in keep:
            for a in acts[s]:
                for q in mdp.transitions[(s, a)]:
                    if q in stay:
                        touches_stay.add(s)
                    elif q in keep:
                        fwd_adj[s].add(q)
                        rev_adj[q].add(s)
        # backward: states that can reach the stay set
        can = set(touches_stay)
        frontier = list(touches_stay)
        while frontier:
            q = frontier.pop()
            for s in rev_adj[q]:
                if s not in can:
                    can.add(s)
                    frontier.append(s)
        # forward: states reachable from the initial state
        seen = {mdp.initial} if mdp.initial in keep else set()
        frontier = list(seen)
        while frontier:
            s = frontier.pop()
            for q in fwd_adj[s]:
                if q not in seen:
                    seen.add(q)
                    frontier.append(q)
        new_keep = can & seen
        if new_keep != keep:
            keep = new_keep
            acts = {s: acts[s] for s in keep}
            changed = True
        if mdp.initial not in keep:
            return None
        if not changed:
            return {s: acts[s] for s in sorted(keep, key=idx.get)}


def _effective_successors(mdp, acts, state):
    eff = set()
    for a in acts[state]:
        eff.update(mdp.transitions[(state, a)])
    return eff


def restrict_support(mdp: Mdp, stay: frozenset, groups, forbidden=frozenset()):
    """Iterate the kept-support fixpoint with the infinite-visit exclusions:
    observed kept states with fewer than two achievable successors and
    penalty groups reduced to a single live member force their states to
    zero residence."""
    forbidden = set(forbidden)
    while True:
        acts = _kept_support(mdp, stay, frozenset(forbidden))
        if acts is None:
            return None, frozenset(forbidden)
        newly = set()
        for w in mdp.observed:
            if w in acts and len(_effective_successors(mdp, acts, w)) < 2:
                newly.add(w)
        for grp in groups:
            if grp.weight <= 0.0:
                continue
            live = [s for s in grp.states if s in acts]
            if len(live) == 1:
                newly.add(live[0])
        if not newly:
            return acts, frozenset(forbidden)
        forbidden |= newly


# ---------------------------------------------------------------------------
# problem assembly
# ---------------------------------------------------------------------------

def build_flow_problem(mdp: Mdp, stay, groups=(), forbidden=frozenset()):
    """Assemble the program, or return ``None`` when the polytope is empty."""
    stay = frozenset(stay)
    acts, forbidden = restrict_support(mdp, stay, groups, forbidden)
    if acts is None:
        return None
    pairs = [(s, a) for s in acts for a in acts[s]]
    var_of = {pa: j for j, pa in enumerate(pairs)}
    row_states = list(acts)
    row_of = {s: i for i, s in enumerate(row_states)}
    rows, cols, vals = [], [], []
    reach_c = np.zeros(len(pairs))
    for j, (s, a) in enumerate(pairs):
        rows.append(row_of[s])
        cols.append(j)
        vals.append(1.0)
        for q, p in mdp.transitions[(s, a)].items():
            if q in row_of:
                rows.append(row_of[q])
                cols.append(j)
                vals.append(-p)
            if q in mdp.targets:
                reach_c[j] += p
    a_eq = sps.csr_matrix((vals, (rows, cols)),
                          shape=(len(row_states), len(pairs)))
    b_eq = np.zeros(len(row_states))
    b_eq[row_of[mdp.initial]] = 1.0
    problem = FlowProblem(
        mdp=mdp, stay=stay, forbidden=forbidden, pairs=pairs, var_of=var_of,
        a_eq=a_eq, b_eq=b_eq, row_states=row_states, reach_c=reach_c,
        reach_base=1.0 if mdp.initial in mdp.targets else 0.0,
    )
    problem.state_vars = {
        s: np.array([var_of[(s, a)] for a in acts[s]], dtype=int)
        for s in row_states
    }
    _attach_terms(problem, mdp, acts, groups)
    return problem


def _attach_terms(problem, mdp, acts, groups):
    shaped: dict[tuple[int, int], list] = {}
    for w in sorted(mdp.observed, key=mdp.state_index.get):
        if w not in acts:
            continue
        succ = sorted(_effective_successors(mdp, acts, w),
                      key=mdp.state_index.get)
        mat = np.zeros((len(succ), len(acts[w])))
        spos = {q: i for i, q in enumerate(succ)}
        for j, a in enumerate(acts[w]):
            for q, p in mdp.transitions[(w, a)].items():
                mat[spos[q], j] = p
        key = mat.shape
        shaped.setdefault(key, []).append(
            (w, problem.state_vars[w], mat, 1.0))
    for grp in groups:
        if grp.weight <= 0.0:
            continue
        live = [s for s in grp.states if s in acts]
        if len(live) < 2:
            continue
        var_idx = np.concatenate([problem.state_vars[s] for s in live])
        mat = np.zeros((len(live), var_idx.size))
        col = 0
        for i, s in enumerate(live):
            width = problem.state_vars[s].size
            mat[i, col:col + width] = 1.0
            col += width
        shaped.setdefault(mat.shape, []).append(
            (grp.label, var_idx, mat, float(grp.weight)))
    for (k, m), items in sorted(shaped.items()):
        problem.blocks.append(_TermBlock(
            labels=[it[0] for it in items],
            var_idx=np.stack([it[1] for it in items]),
            mats=np.stack([it[2] for it in items]),
            weights=np.array([it[3] for it in items]),
        ))


def uniform_occupation(problem: FlowProblem) -> np.ndarray:
    """Residence times of the uniform policy over the kept support: a
    strictly positive point satisfying the flow equalities."""
    mdp = problem.mdp
    states = problem.row_states
    pos = {s: i for i, s in enumerate(states)}
    m = len(states)
    dense = m <= 2000
    if dense:
        mat = np.eye(m)
    else:
        mat = sps.lil_matrix((m, m))
        mat.setdiag(1.0)
    # (I - Q^T) x = e_init with Q the uniform-policy chain on kept states
    for (s, a) in problem.pairs:
        share = 1.0 / problem.state_vars[s].size
        for q, p in mdp.transitions[(s, a)].items():
            if q in pos:
                mat[pos[q], pos[s]] -= share * p
    rhs = np.zeros(m)
    rhs[pos[mdp.initial]] = 1.0
    xs = np.linalg.solve(mat, rhs) if dense else \
        spla.spsolve(sps.csc_matrix(mat), rhs)
    x = np.empty(problem.n)
    for s in states:
        idx = problem.state_vars[s]
        x[idx] = max(xs[pos[s]], 0.0) / idx.size
    return np.maximum(x, 1e-8)


# ---------------------------------------------------------------------------
# reach-constraint classification
# ---------------------------------------------------------------------------

def _reach_bounds(problem: FlowProblem):
    """(r_min, r_max) of the reach expression over the polytope, by LP."""
    opts = {"presolve": True}
    kw = dict(A_eq=problem.a_eq, b_eq=problem.b_eq,
              bounds=(0, None), method="highs", options=opts)
    hi = linprog(c=-problem.reach_c, **kw)
    lo = linprog(c=problem.reach_c, **kw)
    if hi.status != 0 or lo.status != 0:
        return None
    return (float(lo.fun) + problem.reach_base,
            float(-hi.fun) + problem.reach_base)


def classify_reach(problem: FlowProblem, threshold: float):
    """Decide how the reach requirement enters the barrier problem.

    Returns ``(mode, level)`` with mode one of ``"off"`` (never binding),
    ``"ineq"`` (log-barrier), ``"eq"`` (only attainable with equality) or
    ``"empty"`` (unattainable).
    """
    if threshold <= problem.reach_base + REACH_FEAS_TOL:
        return "off", 0.0
    if not problem.reach_c.any():
        return "empty", 0.0
    bounds = _reach_bounds(problem)
    if bounds is None:
        return "empty", 0.0
    r_min, r_max = bounds
    if r_max < threshold - REACH_FEAS_TOL:
        return "empty", 0.0
    if r_min >= threshold - REACH_FEAS_TOL:
        return "off", 0.0
    if r_max - threshold <= REACH_ACTIVE_TOL:
        return "eq", min(threshold, r_max)
    return "ineq", threshold


# ---------------------------------------------------------------------------
# barrier Newton
# ---------------------------------------------------------------------------

def _phi_grad_hess_parts(problem, x, mu, mode, level):
    """Gradient of the barrier objective and COO pieces of its Hessian."""
    grad = np.full(problem.n, mu * BARRIER_DRIFT) - mu / x
    for block in problem.blocks:
        block.add_grad(x, grad)
    rows = [np.arange(problem.n)]
    cols = [np.arange(problem.n)]
    vals = [mu / (x * x)]
    for block in problem.blocks:
        r, c, v = block.hess_entries(x)
        rows.append(r)
        cols.append(c)
        vals.append(v)
    if mode == "ineq":
        slack = problem.reach_value(x) - level
        grad -= mu * problem.reach_c / slack
        nz = np.nonzero(problem.reach_c)[0]
        cnz = problem.reach_c[nz]
        rows.append(np.repeat(nz, nz.size))
        cols.append(np.tile(nz, nz.size))
        vals.append((mu / slack ** 2) * np.outer(cnz, cnz).ravel())
    hess = sps.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(problem.n, problem.n))
    return grad, hess


def _newton_center(problem, a_eq, b_eq, x, lam, mu, mode, level):
    """Damped infeasible-start Newton for one barrier weight."""
    n = problem.n

    def residual(xv, lv):
        grad, hess = _phi_grad_hess_parts(problem, xv, mu, mode, level)
        rd = grad + a_eq.T @ lv
        rp = a_eq @ xv - b_eq
        return rd, rp, grad, hess

    rd, rp, grad, hess = residual(x, lam)
    for _ in range(MAX_NEWTON):
        norm0 = math.sqrt(float(rd @ rd + rp @ rp))
        if (np.max(np.abs(rp), initial=0.0) <= 1e-11
                and np.max(np.abs(rd), initial=0.0)
                <= 1e-9 * max(1.0, float(np.max(np.abs(grad), initial=0.0)))):
            break
        kkt = sps.bmat([[hess, a_eq.T], [a_eq, None]], format="csc")
        rhs = -np.concatenate([rd, rp])
        try:
            sol = spla.splu(kkt).solve(rhs)
        except RuntimeError:
            reg = sps.identity(kkt.shape[0], format="csc") * 1e-10
            sol = spla.splu((kkt + reg).tocsc()).solve(rhs)
        dx, dlam = sol[:n], sol[n:]
        # stay strictly inside x > 0 (and the reach slack in "ineq" mode)
        alpha = 1.0
        neg = dx < 0
        if np.any(neg):
            alpha = min(alpha, 0.99 * float(np.min(-x[neg] / dx[neg])))
        if mode == "ineq":
            cdx = float(problem.reach_c @ dx)
            if cdx < 0:
                slack = problem.reach_value(x) - level
                alpha = min(alpha, 0.99 * slack / (-cdx))
        if alpha <= 0.0:
            break
        accepted = False
        while alpha > 1e-14:
            xt = x + alpha * dx
            lt = lam + alpha * dlam
            rdt, rpt, gt, ht = residual(xt, lt)
            nt = float(rdt @ rdt + rpt @ rpt)
            if math.isfinite(nt) and math.sqrt(nt) <= (1 - ARMIJO_C * alpha) * norm0:
                x, lam, rd, rp, grad, hess = xt, lt, rdt, rpt, gt, ht
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
    return x, lam, float(np.max(np.abs(rp), initial=0.0))


def solve_flow(problem: FlowProblem, threshold: float):
    """Run the barrier method.  Returns ``None`` when the reach requirement
    is unattainable over this polytope; raises
    :class:`NumericalFailureError` when Newton cannot restore flow
    feasibility."""
    mode, level = classify_reach(problem, threshold)
    if mode == "empty":
        return None
    a_eq, b_eq = problem.a_eq, problem.b_eq
    if mode == "eq":
        a_eq = sps.vstack([a_eq, sps.csr_matrix(problem.reach_c)],
                          format="csr")
        b_eq = np.concatenate([b_eq, [level - problem.reach_base]])
    x = uniform_occupation(problem)
    if mode == "ineq" and problem.reach_value(x) <= level + REACH_ACTIVE_TOL:
        # blend toward the max-reach vertex to start strictly feasible
        hi = linprog(c=-problem.reach_c, A_eq=problem.a_eq, b_eq=problem.b_eq,
                     bounds=(0, None), method="highs")
        x_hi = np.asarray(hi.x)
        r0, r1 = problem.reach_value(x), problem.reach_value(x_hi)
        want = level + 0.5 * (r1 - level)
        t = min(1.0 - 1e-9, max(0.0, (want - r0) / max(r1 - r0, 1e-300)))
        x = (1.0 - t) * x + t * np.maximum(x_hi, 0.0)
        x = np.maximum(x, 1e-12)
    lam = np.zeros(a_eq.shape[0])
    mu = BARRIER_MU0
    feas = math.inf
    while True:
        x, lam, feas = _newton_center(problem, a_eq, b_eq, x, lam, mu,
                                      mode, level)
        if mu <= BARRIER_MU_MIN:
            break
        mu /= BARRIER_SHRINK
    if feas > 1e-8:
        raise NumericalFailureError(
            f"barrier method left a flow residual of {feas:.3e}", best_x=x)
    return x


# ---------------------------------------------------------------------------
# top level: solve + support refinement
# ---------------------------------------------------------------------------

def minimize_flow_information(mdp: Mdp, stay, groups=(),
                              forbidden=frozenset()) -> FlowResult:
    """Minimize total expected information over the flow polytope for the
    given stay set, including the boundary support refinement."""
    stay = frozenset(stay)
    threshold = mdp.threshold
    if mdp.initial in stay:
        reach = 1.0 if mdp.initial in mdp.targets else 0.0
        if reach >= threshold - REACH_FEAS_TOL:
            return FlowResult("optimal", 0.0, reach, {}, {}, frozenset())
        return FlowResult("empty", message="initial state settles outside the targets")

    best: FlowResult | None = None
    forbidden = frozenset(forbidden)
    while True:
        problem = build_flow_problem(mdp, stay, groups, forbidden)
        if problem is None:
            break
        try:
            x = solve_flow(problem, threshold)
        except NumericalFailureError:
            if best is not None:
                return best
            raise
        if x is None:
            break
        residence = problem.state_residence(x)
        result = FlowResult(
            status="optimal",
            objective=problem.true_objective(x),
            reach_prob=problem.reach_value(x),
            x={pa: float(v) for pa, v in zip(problem.pairs, x)},
            residence=residence,
            forbidden=problem.forbidden,
        )
        if best is not None and result.objective >= best.objective - 1e-12:
            return best
        best = result
        tiny = {w for w in mdp.observed
                if w in residence and residence[w] < TINY_RESIDENCE}
        tiny -= problem.forbidden
        if not tiny:
            return best
        forbidden = problem.forbidden | tiny
    if best is not None:
        return best
    return FlowResult("empty", message="the flow polytope is empty under "
                                       "the reach requirement")
