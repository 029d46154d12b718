"""Command-line front end.

Subcommands: ``validate``, ``analyze``, ``synthesize``, ``simulate``,
``bounds``, ``grid``.  Machine output (JSON, CSV) goes to stdout or the
``--out`` file; progress and log lines go to stderr.  Exit codes: 0
success, 2 input error, 3 no admissible policy, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from . import adversary, components, synthesis, worlds
from .errors import MininfoError, ModelError, NumericalFailureError
from .mdp import Mdp, StationaryPolicy, induce_chain, lint, validate
from .synthesis import SwitchPolicy

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4


def _log(msg):
    print(msg, file=sys.stderr)


def _emit(text: str, out_path):
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(doc, out_path):
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", out_path)


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read {path}: {exc}") from exc


def _load_mdp(path) -> Mdp:
    mdp = Mdp.from_json_dict(_load_json(path))
    problems = validate(mdp)
    if problems:
        details = "; ".join(str(p) for p in problems)
        raise ModelError(f"invalid model {path}: {details}")
    return mdp


def _load_policy(path, mdp: Mdp):
    """Accept either a bare policy map or a synthesis output document
    (optionally carrying switch probabilities and a stay policy)."""
    doc = _load_json(path)
    if "policy" in doc:
        base = StationaryPolicy.from_json_dict(doc["policy"])
        switch_probs = doc.get("switch_probs") or {}
        if switch_probs and doc.get("stay_policy"):
            stay = StationaryPolicy.from_json_dict(doc["stay_policy"])
            rows = {}
            for s in mdp.states:
                row = base.distribution(s)
                psw = float(switch_probs.get(s, 0.0))
                row = {a: p * (1.0 - psw) for a, p in row.items()}
                if psw > 0.0:
                    row["switch"] = psw
                rows[s] = row
            return SwitchPolicy(StationaryPolicy(rows), stay,
                                frozenset(switch_probs), "switch")
        return base
    return StationaryPolicy.from_json_dict(doc)


def _check_policy(mdp: Mdp, policy) -> None:
    base = policy.base if isinstance(policy, SwitchPolicy) else policy
    problems = []
    for s in mdp.states:
        row = base.distribution(s)
        if not row:
            problems.append(f"no distribution for state {s}")
            continue
        extra = "switch" if isinstance(policy, SwitchPolicy) else None
        for a, p in row.items():
            if p > 0 and a not in mdp.actions[s] and a != extra:
                problems.append(f"mass on unknown action ({s},{a})")
    if problems:
        raise ModelError("policy does not match the model: "
                         + "; ".join(problems[:5]))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    mdp = Mdp.from_json_dict(_load_json(args.mdp))
    problems = validate(mdp)
    warnings = lint(mdp)
    doc = {"valid": not problems,
           "violations": [str(p) for p in problems],
           "warnings": [str(w) for w in warnings]}
    _dump(doc, args.out)
    return EXIT_OK if not problems else EXIT_INPUT


def cmd_analyze(args) -> int:
    mdp = _load_mdp(args.mdp)
    report = components.end_component_report(mdp)
    _dump(report.to_json_dict(), args.out)
    return EXIT_OK


def cmd_synthesize(args) -> int:
    mdp = _load_mdp(args.mdp)
    groups = ()
    result = synthesis.synthesize(mdp, mode=args.mode, groups=groups,
                                  subset_cap=args.subset_cap)
    if result.status == synthesis.STATUS_INFEASIBLE:
        _log("no admissible policy: the reach requirement is unattainable")
        return EXIT_INFEASIBLE
    obj = "inf" if math.isinf(result.objective) else f"{result.objective:.6f}"
    _log(f"status={result.status} mode={result.mode} objective={obj} "
         f"reach_prob={result.reach_prob:.6f}")
    _dump(result.to_json_dict(), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    mdp = _load_mdp(args.mdp)
    policy = _load_policy(args.policy, mdp)
    _check_policy(mdp, policy)
    if args.paths < 1:
        raise ModelError("--paths must be at least 1")
    paths = adversary.simulate_paths(mdp, policy, n=args.paths,
                                     horizon=args.horizon, seed=args.seed,
                                     threads=args.threads)
    report = adversary.estimate(paths, mdp)
    report = adversary.mse_report(report, mdp, policy,
                                  no_sample=args.no_sample)
    doc = report.to_json_dict()
    base = policy.base if isinstance(policy, SwitchPolicy) else policy
    bounds = None
    try:
        bounds = adversary.cramer_rao_bounds(mdp, _plain_policy(mdp, policy))
        doc["bounds"] = bounds.to_json_dict()
    except MininfoError as exc:
        _log(f"bounds skipped: {exc}")
    del base
    _dump(doc, args.out)
    if args.csv:
        _emit(_report_csv(report, bounds), args.csv)
    return EXIT_OK


def _plain_policy(mdp, policy):
    """Bounds are defined for stationary behavior at observed states; for a
    switch policy that is its renormalized base on the original model."""
    if not isinstance(policy, SwitchPolicy):
        return policy
    rows = {}
    for s in mdp.states:
        row = policy.base.distribution(s)
        psw = row.pop(policy.switch_action, 0.0)
        if psw >= 1.0 - 1e-12:
            rows[s] = policy.stay.distribution(s)
        else:
            rows[s] = {a: p / (1.0 - psw) for a, p in row.items()}
    return StationaryPolicy(rows)


def _report_csv(report, bounds) -> str:
    lines = ["state,count,mse,bound"]
    for s, entry in report.per_state.items():
        mse = "" if entry.mse is None else repr(entry.mse)
        bound = ""
        if bounds is not None and s in bounds.per_state:
            bound = repr(bounds.per_state[s].bound)
        lines.append(f"{s},{entry.count},{mse},{bound}")
    return "\n".join(lines) + "\n"


def cmd_bounds(args) -> int:
    mdp = _load_mdp(args.mdp)
    policy = _load_policy(args.policy, mdp)
    _check_policy(mdp, policy)
    report = adversary.cramer_rao_bounds(mdp, _plain_policy(mdp, policy))
    _dump(report.to_json_dict(), args.out)
    return EXIT_OK


def cmd_grid(args) -> int:
    spec = worlds.GridSpec.from_json_dict(_load_json(args.spec))
    mdp = worlds.build_grid_mdp(spec)
    _dump(mdp.to_json_dict(), args.out)
    if not args.synthesize:
        return EXIT_OK
    groups = ()
    if spec.exit_groups:
        groups = worlds.exit_information_terms(spec, mdp)
    result = synthesis.synthesize(mdp, mode=args.mode, groups=groups)
    if result.status == synthesis.STATUS_INFEASIBLE:
        _log("no admissible policy for the generated world")
        return EXIT_INFEASIBLE
    obj = "inf" if math.isinf(result.objective) else f"{result.objective:.6f}"
    _log(f"status={result.status} objective={obj} "
         f"reach_prob={result.reach_prob:.6f}")
    if args.policy_out:
        _dump(result.to_json_dict(), args.policy_out)
    if args.heatmap:
        residence = _result_residence(mdp, result)
        _emit(worlds.export_heatmap(mdp, residence), args.heatmap)
    return EXIT_OK


def _result_residence(mdp, result):
    if result.solution is not None:
        per_state = {}
        for (s, _a), v in result.solution.x.items():
            per_state[s] = per_state.get(s, 0.0) + v
        return per_state
    if isinstance(result.policy, StationaryPolicy):
        from .mdp import classify_transient, residence_times
        chain = induce_chain(mdp, result.policy)
        return residence_times(chain, classify_transient(chain))
    return {}


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mininfo",
        description="Minimum-information reachability policies for MDPs")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mdp_arg=True):
        if mdp_arg:
            p.add_argument("--mdp", required=True, help="MDP JSON file")
        p.add_argument("--out", help="write JSON here instead of stdout")

    p = sub.add_parser("validate", help="check model invariants")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("analyze", help="end-component report")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synthesize", help="compute a minimum-information policy")
    common(p)
    p.add_argument("--mode", choices=("closed", "exhaustive", "switch"),
                   default="closed")
    p.add_argument("--subset-cap", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-6,
                   help="objective tolerance (informational)")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="observer estimation experiment")
    common(p)
    p.add_argument("--policy", required=True, help="policy JSON file")
    p.add_argument("--paths", type=int, default=10000)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--no-sample", choices=("uniform", "exclude"),
                   default="uniform",
                   help="MSE rule for observed states without samples")
    p.add_argument("--csv", help="also write a per-state CSV here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bounds", help="estimation-error lower bounds")
    common(p)
    p.add_argument("--policy", required=True)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("grid", help="generate a grid-world MDP")
    p.add_argument("--spec", required=True, help="grid spec JSON file")
    p.add_argument("--out", help="write the MDP JSON here")
    p.add_argument("--synthesize", action="store_true")
    p.add_argument("--mode", choices=("closed", "exhaustive", "switch"),
                   default="switch")
    p.add_argument("--policy-out", help="policy JSON output path")
    p.add_argument("--heatmap", help="residence-time CSV output path")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalFailureError as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except MininfoError as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
