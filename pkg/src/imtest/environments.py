"""Built-in benchmark MDPs: Minigrid-style gridworlds, an obstacle corridor,
and seeded random MDPs for oracle tests.

Layout text format, one character per cell::

    #  wall        .  floor      L  lava       ~  slippery
    G  goal        >  <  ^  v   one-way cells (arrow = allowed direction)

The layout border must be wall.  Orientation 0..3 is east, south, west, north
(y grows downwards).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .mdp import BAD, GOAL, STAY, Mdp

DIRS = ((1, 0), (0, 1), (-1, 0), (0, -1))
ORIENTATION_NAMES = "ESWN"
ONEWAY = {">": 0, "v": 1, "<": 2, "^": 3}
CELL_KINDS = set("#.L~G") | set(ONEWAY)

GRID_ACTIONS = ("forward", "left", "right", STAY)
FORWARD, LEFT, RIGHT, STAY_ACTION = range(4)

# forward on a slippery tile: front, side-left, side-right, front-left, front-right
SLIP = ((Fraction(3, 9), 0, 0), (Fraction(1, 9), -1, 0), (Fraction(1, 9), 1, 0),
        (Fraction(2, 9), -1, 1), (Fraction(2, 9), 1, 1))


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class GridLayout:
    rows: tuple[str, ...]
    allow_no_goal: bool = False

    def __post_init__(self):
        if not self.rows or not self.rows[0]:
            raise LayoutError("empty layout")
        if len({len(r) for r in self.rows}) != 1:
            raise LayoutError("layout rows differ in length")
        for y, row in enumerate(self.rows):
            bad = set(row) - CELL_KINDS
            if bad:
                raise LayoutError(f"row {y}: unknown cell characters {''.join(sorted(bad))!r}")
        if set(self.rows[0]) != {"#"} or set(self.rows[-1]) != {"#"} or any(
                r[0] != "#" or r[-1] != "#" for r in self.rows):
            raise LayoutError("layout border must be wall")
        if not self.allow_no_goal and not any("G" in r for r in self.rows):
            raise LayoutError("layout has no goal cell")

    @classmethod
    def parse(cls, text: str, allow_no_goal: bool = False) -> GridLayout:
        rows = tuple(line.rstrip() for line in text.splitlines() if line.strip() and not line.startswith(";"))
        return cls(rows, allow_no_goal)

    @classmethod
    def load(cls, path: str | Path, **kw) -> GridLayout:
        return cls.parse(Path(path).read_text(), **kw)

    @property
    def width(self) -> int:
        return len(self.rows[0])

    @property
    def height(self) -> int:
        return len(self.rows)

    def kind(self, x: int, y: int) -> str:
        if not (0 <= x < self.width and 0 <= y < self.height):
            return "#"
        return self.rows[y][x]


def builtin_layout(name: str) -> GridLayout:
    """Shipped layouts: ``slippery7x7``, ``oneway5x5``."""
    try:
        text = resources.files("imtest").joinpath("layouts").joinpath(f"{name}.txt").read_text()
    except FileNotFoundError:
        raise LayoutError(f"unknown builtin layout {name!r}") from None
    return GridLayout.parse(text)


def _against(move: tuple[int, int], arrow: int) -> bool:
    ax, ay = DIRS[arrow]
    return move[0] * ax + move[1] * ay < 0


def _blocked_by_oneway(layout: GridLayout, x: int, y: int, nx: int, ny: int) -> bool:
    move = (nx - x, ny - y)
    for cx, cy in ((x, y), (nx, ny)):
        c = layout.kind(cx, cy)
        if c in ONEWAY and _against(move, ONEWAY[c]):
            return True
    return False


def _build_grid(layout: GridLayout):
    cells = [(x, y) for y in range(layout.height) for x in range(layout.width) if layout.kind(x, y) != "#"]
    index = {}
    for x, y in cells:
        for o in range(4):
            index[(x, y, o)] = len(index)
    n = len(index)
    positions = np.zeros((n, 3), dtype=int)
    names, labels, transitions = [], {}, {}
    for (x, y, o), s in index.items():
        positions[s] = (x, y, o)
        names.append(f"{x}_{y}_{ORIENTATION_NAMES[o]}")
        kind = layout.kind(x, y)
        if kind == "L":
            labels[s] = {BAD}
        if kind == "G":
            labels[s] = {GOAL}
        if kind in "LG":
            transitions[(s, STAY_ACTION)] = [(s, 1.0)]
            continue
        transitions[(s, LEFT)] = [(index[(x, y, (o + 3) % 4)], 1.0)]
        transitions[(s, RIGHT)] = [(index[(x, y, (o + 1) % 4)], 1.0)]
        transitions[(s, STAY_ACTION)] = [(s, 1.0)]
        fwd = _forward(layout, index, x, y, o)
        if fwd is not None:
            transitions[(s, FORWARD)] = fwd
    render = {"kind": "grid", "width": layout.width, "height": layout.height,
              "rows": layout.rows, "positions": positions}
    mdp = Mdp.from_transitions(n, GRID_ACTIONS, transitions, labels=labels, state_names=names,
                               features=positions.astype(float), render=render)
    return mdp, mdp.features, render


def _forward(layout: GridLayout, index, x, y, o):
    dx, dy = DIRS[o]
    lx, ly = DIRS[(o + 3) % 4]
    if _blocked_by_oneway(layout, x, y, x + dx, y + dy) and layout.kind(x + dx, y + dy) != "#":
        return None
    outcomes = SLIP if layout.kind(x, y) == "~" else ((Fraction(1), 0, 0),)
    mass: dict[int, Fraction] = {}
    for p, side, front in outcomes:
        # side: -1 left, +1 right, 0 straight; front: 1 if the tile ahead row, 0 beside
        if side == 0:
            nx, ny = x + dx, y + dy
        else:
            nx = x + side * -lx + front * dx
            ny = y + side * -ly + front * dy
        if layout.kind(nx, ny) == "#" or _blocked_by_oneway(layout, x, y, nx, ny):
            nx, ny = x, y
        t = index[(nx, ny, o)]
        mass[t] = mass.get(t, Fraction(0)) + p
    return [(t, float(p)) for t, p in sorted(mass.items())]


def build_slippery_gridworld(layout: GridLayout):
    """Gridworld where moving forward from ``~`` tiles slips.

    Returns ``(mdp, features, render_metadata)``.  Lava cells are absorbing and
    labeled ``bad``; goal cells are absorbing and labeled ``goal``.
    """
    return _build_grid(layout)


def build_oneway_gridworld(layout: GridLayout):
    """Gridworld where moving against a one-way arrow is not an available action."""
    return _build_grid(layout)


def grid_state(mdp: Mdp, x: int, y: int, o: int) -> int:
    return mdp.state_index(f"{x}_{y}_{ORIENTATION_NAMES[o]}")


# -- corridor -----------------------------------------------------------------------

CORRIDOR_ACTIONS = ("straight", "tilt_left", "tilt_right", "faster", "slower", STAY)


def build_corridor_obstacles(length: int, obstacles, tilt_count: int = 3, velocity_count: int = 1,
                             width: int = 10, drift: float = 0.1):
    """Downhill corridor with obstacles, a small stand-in for a skiing game.

    A state is ``(x, y, tilt, velocity)``.  Each step may first adjust tilt or
    velocity by one, then moves ``velocity + 1`` rows down and ``tilt - center``
    columns sideways (clipped at the corridor walls).  With probability
    ``drift`` the skier is pushed one extra column left or right.  Only the
    landing cell is checked against obstacles.  The last row is an absorbing
    finish line.
    """
    if length < 2 or width < 1 or tilt_count < 1 or velocity_count < 1:
        raise ValueError("corridor needs length >= 2 and positive width, tilt and velocity counts")
    if not 0 <= drift <= 1:
        raise ValueError("drift must be a probability")
    blocked = {(int(x), int(y)) for x, y in obstacles}
    center = (tilt_count - 1) // 2
    index = {}
    for y in range(length):
        for x in range(width):
            for t in range(tilt_count):
                for v in range(velocity_count):
                    index[(x, y, t, v)] = len(index)
    n = len(index)
    feats = np.zeros((n, 4))
    names, labels, transitions = [], {}, {}
    adjust = {0: (0, 0), 1: (-1, 0), 2: (1, 0), 3: (0, 1), 4: (0, -1)}
    for (x, y, t, v), s in index.items():
        feats[s] = (x, y, t, v)
        names.append(f"{x}_{y}_{t}_{v}")
        if (x, y) in blocked:
            labels[s] = {BAD}
        elif y == length - 1:
            labels[s] = {GOAL}
        if (x, y) in blocked or y == length - 1:
            transitions[(s, 5)] = [(s, 1.0)]
            continue
        for a, (dt, dv) in adjust.items():
            nt, nv = t + dt, v + dv
            if not (0 <= nt < tilt_count and 0 <= nv < velocity_count):
                continue
            ny = min(y + nv + 1, length - 1)
            row: dict[int, float] = {}
            for extra, p in ((0, 1.0 - drift), (-1, drift / 2), (1, drift / 2)):
                if p == 0:
                    continue
                nx = min(max(x + nt - center + extra, 0), width - 1)
                k = index[(nx, ny, nt, nv)]
                row[k] = row.get(k, 0.0) + p
            transitions[(s, a)] = sorted(row.items())
    render = {"kind": "corridor", "width": width, "length": length, "obstacles": sorted(blocked)}
    mdp = Mdp.from_transitions(n, CORRIDOR_ACTIONS, transitions, labels=labels, state_names=names,
                               features=feats, render=render)
    return mdp, mdp.features, render


def corridor_state(mdp: Mdp, x: int, y: int, tilt: int = 0, velocity: int = 0) -> int:
    return mdp.state_index(f"{x}_{y}_{tilt}_{velocity}")


# -- random fixtures ----------------------------------------------------------------------


def random_mdp(seed: int, num_states: int, num_actions: int, branching: int, bad_fraction: float = 0.25) -> Mdp:
    """Seeded random MDP; every action is available in every non-bad state."""
    if num_states < 1 or num_actions < 1 or branching < 1:
        raise ValueError("num_states, num_actions and branching must be positive")
    if branching > num_states:
        raise ValueError("branching cannot exceed num_states")
    rng = np.random.default_rng(seed)
    n_bad = int(round(bad_fraction * num_states))
    bad = set(rng.choice(num_states, size=n_bad, replace=False).tolist())
    transitions = {}
    for s in range(num_states):
        for a in range(num_actions):
            succ = rng.choice(num_states, size=branching, replace=False)
            w = rng.random(branching) + 1e-3
            p = w / w.sum()
            transitions[(s, a)] = list(zip(succ.tolist(), p.tolist()))
    actions = [f"a{i}" for i in range(num_actions)]
    return Mdp.from_transitions(num_states, actions, transitions, labels={s: {BAD} for s in bad},
                                state_names=[f"s{i}" for i in range(num_states)])


# -- reference policies -------------------------------------------------------------------------


def constant_policy(mdp: Mdp, action: str) -> dict[int, int]:
    """Pick ``action`` wherever available, otherwise the first enabled action."""
    a = mdp.action_index(action)
    return {s: (a if mdp.is_enabled(s, a) else mdp.enabled_actions(s)[0]) for s in range(mdp.num_states)}


def cautious_grid_policy(mdp: Mdp) -> dict[int, int]:
    """Move forward unless that could end in lava; otherwise turn right."""
    bad = mdp.label_mask(BAD)
    policy = {}
    for s in range(mdp.num_states):
        enabled = mdp.enabled_actions(s)
        if len(enabled) == 1:
            policy[s] = enabled[0]
            continue
        if FORWARD in enabled:
            succ, probs = mdp.successors(s, FORWARD)
            if not np.any(bad[succ[probs > 0]]):
                policy[s] = FORWARD
                continue
        policy[s] = RIGHT
    return policy
