"""Grid-world generators and heatmap export.

Two movement models share one generator:

* stochastic (``slip > 0``): four actions everywhere; the intended
  direction gets ``1 - slip`` and each other direction ``slip / 3``.
  Mass toward a blocked direction (grid edge or wall) is redistributed
  proportionally over the remaining open directions.
* deterministic (``slip == 0``): an action toward a blocked direction is
  simply not enabled; enabled actions move with probability one.

Tiles are addressed as ``(col, row)`` with row 0 at the top.  Walls block
*edges* between adjacent tiles.  Absorbing tiles and the goal carry a
single ``stay`` action.  Observed states default to everything except the
goal, the absorbing tiles, the bridge tiles and any extra unobserved
tiles.

``four_region_spec`` reconstructs the four-quadrant bridge world used in
the experiments.  The published geometry is pictorial only, so this layout
is a labeled reconstruction, not ground truth.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

from .errors import GridSpecError, UnsupportedModelError
from .mdp import Mdp
from .solver import PenaltyGroup

_DIRS = (("up", (0, -1)), ("down", (0, 1)),
         ("left", (-1, 0)), ("right", (1, 0)))


@dataclass(frozen=True)
class ExitGroup:
    """One region's exit-information penalty: the residence times of its
    bridge tiles enter a grouped information term with this weight."""

    label: str
    bridges: tuple[tuple[int, int], ...]
    weight: float = 1.0
    region: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    slip: float
    initial: tuple[int, int]
    goal: tuple[int, int]
    walls: frozenset = frozenset()           # frozenset of tile-edge pairs
    bridges: frozenset = frozenset()
    unobserved_tiles: frozenset = frozenset()
    absorbing_tiles: frozenset = frozenset()
    exit_groups: tuple[ExitGroup, ...] = ()
    reach_threshold: float = 1.0
    label: str = "grid"

    @classmethod
    def from_json_dict(cls, data: dict) -> "GridSpec":
        def tiles(key):
            return frozenset(tuple(t) for t in data.get(key, ()))
        walls = frozenset(
            frozenset((tuple(a), tuple(b))) for a, b in data.get("walls", ()))
        groups = tuple(
            ExitGroup(label=g.get("id", f"group{i}"),
                      bridges=tuple(tuple(t) for t in g["bridges"]),
                      weight=float(g.get("weight", 1.0)),
                      region=tuple(tuple(t) for t in g.get("region", ())))
            for i, g in enumerate(data.get("exit_groups", ())))
        try:
            return cls(
                width=int(data["width"]), height=int(data["height"]),
                slip=float(data.get("slip", 0.0)),
                initial=tuple(data["initial"]), goal=tuple(data["goal"]),
                walls=walls, bridges=tiles("bridges"),
                unobserved_tiles=tiles("unobserved"),
                absorbing_tiles=tiles("absorbing"),
                exit_groups=groups,
                reach_threshold=float(data.get("reach_threshold", 1.0)),
                label=data.get("label", "grid"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GridSpecError(f"malformed grid spec: {exc}") from exc

    def to_json_dict(self) -> dict:
        return {
            "label": self.label,
            "width": self.width, "height": self.height, "slip": self.slip,
            "initial": list(self.initial), "goal": list(self.goal),
            "walls": sorted([sorted(list(t) for t in e) for e in self.walls]),
            "bridges": sorted(list(t) for t in self.bridges),
            "unobserved": sorted(list(t) for t in self.unobserved_tiles),
            "absorbing": sorted(list(t) for t in self.absorbing_tiles),
            "reach_threshold": self.reach_threshold,
            "exit_groups": [
                {"id": g.label, "bridges": [list(t) for t in g.bridges],
                 "weight": g.weight,
                 **({"region": [list(t) for t in g.region]} if g.region else {})}
                for g in self.exit_groups
            ],
        }


def tile_state(tile) -> str:
    return f"t{tile[0]}_{tile[1]}"


def _check_spec(spec: GridSpec):
    def inside(t):
        return 0 <= t[0] < spec.width and 0 <= t[1] < spec.height
    if not inside(spec.initial):
        raise GridSpecError(f"initial tile {spec.initial} outside the grid")
    if not inside(spec.goal):
        raise GridSpecError(f"goal tile {spec.goal} outside the grid")
    if spec.goal in spec.absorbing_tiles:
        raise GridSpecError("goal coincides with an absorbing obstacle")
    if not 0.0 <= spec.slip < 1.0:
        raise GridSpecError(f"slip {spec.slip} outside [0, 1)")
    for t in spec.bridges | spec.unobserved_tiles | spec.absorbing_tiles:
        if not inside(t):
            raise GridSpecError(f"tile {t} outside the grid")
    for group in spec.exit_groups:
        region = set(group.region)
        for b in group.bridges:
            if b not in spec.bridges:
                raise GridSpecError(
                    f"exit group {group.label!r} lists {b} which is not a bridge")
            if region and b not in region and not any(
                    abs(b[0] - t[0]) + abs(b[1] - t[1]) == 1 for t in region):
                raise GridSpecError(
                    f"bridge {b} of group {group.label!r} is not adjacent "
                    f"to its region")


def build_grid_mdp(spec: GridSpec) -> Mdp:
    """One state per tile; movement per the module rules; the goal and the
    obstacle tiles absorb.  Grid metadata is attached for heatmap export."""
    _check_spec(spec)
    tiles = [(c, r) for r in range(spec.height) for c in range(spec.width)]
    walls = {frozenset(e) for e in spec.walls}

    def open_dir(t, delta):
        nt = (t[0] + delta[0], t[1] + delta[1])
        if not (0 <= nt[0] < spec.width and 0 <= nt[1] < spec.height):
            return None
        if frozenset((t, nt)) in walls:
            return None
        return nt

    transitions = {}
    for t in tiles:
        s = tile_state(t)
        if t == spec.goal or t in spec.absorbing_tiles:
            transitions[(s, "stay")] = {s: 1.0}
            continue
        neighbors = {name: open_dir(t, d) for name, d in _DIRS}
        if all(v is None for v in neighbors.values()):
            raise GridSpecError(f"tile {t} is walled in")
        if spec.slip == 0.0:
            for name, nt in neighbors.items():
                if nt is not None:
                    transitions[(s, name)] = {tile_state(nt): 1.0}
        else:
            for name, _d in _DIRS:
                masses = {}
                for other, nt in neighbors.items():
                    if nt is None:
                        continue
                    m = (1.0 - spec.slip) if other == name else spec.slip / 3.0
                    masses[tile_state(nt)] = masses.get(tile_state(nt), 0.0) + m
                total = sum(masses.values())
                transitions[(s, name)] = {q: m / total
                                          for q, m in masses.items()}
    goal_state = tile_state(spec.goal)
    hidden = ({spec.goal} | spec.absorbing_tiles | spec.bridges
              | spec.unobserved_tiles)
    observed = [tile_state(t) for t in tiles if t not in hidden]
    meta = {"grid": {"width": spec.width, "height": spec.height,
                     "tiles": {tile_state(t): list(t) for t in tiles}}}
    return Mdp(
        states=[tile_state(t) for t in tiles],
        transitions=transitions,
        initial=tile_state(spec.initial),
        observed=observed,
        targets=[goal_state],
        threshold=spec.reach_threshold,
        meta=meta,
    )


def exit_information_terms(spec: GridSpec, mdp: Mdp) -> list[PenaltyGroup]:
    """Grouped penalty terms over the residence times of each region's
    bridge tiles, ready to add to the synthesis objective."""
    if not spec.exit_groups:
        raise GridSpecError("the spec declares no exit groups")
    _check_spec(spec)
    groups = []
    for g in spec.exit_groups:
        states = tuple(tile_state(b) for b in g.bridges)
        for s in states:
            if s not in mdp.state_index:
                raise GridSpecError(f"bridge state {s} missing from the model")
        groups.append(PenaltyGroup(label=g.label, states=states,
                                   weight=g.weight))
    return groups


def export_heatmap(mdp: Mdp, values: dict) -> str:
    """CSV (``col,row,value``) of a per-state quantity over the grid.

    Missing states are written as zero so the grid stays complete; models
    without grid metadata are rejected.
    """
    grid = mdp.meta.get("grid") if mdp.meta else None
    if not grid:
        raise UnsupportedModelError("model carries no grid layout metadata")
    out = io.StringIO()
    out.write("col,row,value\n")
    tiles = grid["tiles"]
    order = sorted(tiles.items(), key=lambda kv: (kv[1][1], kv[1][0]))
    for state, (c, r) in order:
        v = float(values.get(state, 0.0))
        out.write(f"{c},{r},{v!r}\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# reconstructions of the experiment worlds (parameterized, not ground truth)
# ---------------------------------------------------------------------------

def four_region_spec(region: int = 20, slip: float = 0.2,
                     unobserved_regions: tuple[str, ...] = (),
                     exit_weight: float | None = None) -> GridSpec:
    """Four `region x region` quadrants split by wall seams with two bridge
    crossings per seam segment; start at the top-left corner, goal at the
    bottom of the center seam, reach threshold one.

    `unobserved_regions` hides whole quadrants (any of ``"tl" "tr" "bl"
    "br"``); `exit_weight` enables one exit-information group per quadrant.
    """
    n = region
    side = 2 * n
    q1, q3 = n // 4, (3 * n) // 4                    # crossing offsets
    vert = [(n - 1 + dx, r) for r in (q1, q3, n + q1, n + q3) for dx in (0, 1)]
    horiz = [(c, n - 1 + dy) for c in (q1, q3, n + q1, n + q3) for dy in (0, 1)]
    crossings_v = {r for _c, r in vert}
    crossings_h = {c for c, _r in horiz}
    walls = set()
    for r in range(side):
        if r not in crossings_v:
            walls.add(frozenset(((n - 1, r), (n, r))))
    for c in range(side):
        if c not in crossings_h:
            walls.add(frozenset(((c, n - 1), (c, n))))
    bridges = frozenset((c, r) for c, r in vert + horiz)
    goal = (n - 1, side - 1)
    # open the seam next to the goal so both bottom quadrants reach it
    walls.discard(frozenset(((n - 1, side - 1), (n, side - 1))))
    quadrant = {
        "tl": [(c, r) for c in range(n) for r in range(n)],
        "tr": [(c, r) for c in range(n, side) for r in range(n)],
        "bl": [(c, r) for c in range(n) for r in range(n, side)],
        "br": [(c, r) for c in range(n, side) for r in range(n, side)],
    }
    unobserved = frozenset(
        t for name in unobserved_regions for t in quadrant[name])
    groups = ()
    if exit_weight is not None:
        on = {
            "tl": [b for b in bridges if b[0] < n and b[1] < n],
            "tr": [b for b in bridges if b[0] >= n and b[1] < n],
            "bl": [b for b in bridges if b[0] < n and b[1] >= n],
            "br": [b for b in bridges if b[0] >= n and b[1] >= n],
        }
        groups = tuple(
            ExitGroup(label=name, bridges=tuple(sorted(on[name])),
                      weight=exit_weight, region=tuple(sorted(quadrant[name])))
            for name in ("tl", "tr", "bl", "br"))
    return GridSpec(
        width=side, height=side, slip=slip, initial=(0, 0), goal=goal,
        walls=frozenset(walls), bridges=bridges,
        unobserved_tiles=unobserved, exit_groups=groups,
        reach_threshold=1.0, label="four-region reconstruction",
    )


def obstacle_grid_spec(size: int = 11,
                       obstacles: tuple[tuple[int, int], ...] = (),
                       slip: float = 0.0) -> GridSpec:
    """A square grid with absorbing obstacle tiles, start at the top-left
    corner and the goal at the bottom-right corner (reconstruction of the
    deterministic comparison world)."""
    return GridSpec(
        width=size, height=size, slip=slip,
        initial=(0, 0), goal=(size - 1, size - 1),
        absorbing_tiles=frozenset(obstacles),
        reach_threshold=1.0, label="obstacle grid reconstruction",
    )
