import functools
from fractions import Fraction

import numpy as np
import pytest

from imtest.checker import RewardSpec, SafetySpec, expected_reward, prob_reach_avoid, qualitative_sets
from imtest.environments import (
    DIRS,
    FORWARD,
    SLIP,
    GridLayout,
    LayoutError,
    build_corridor_obstacles,
    build_oneway_gridworld,
    build_slippery_gridworld,
    builtin_layout,
    corridor_state,
    grid_state,
    random_mdp,
)
from imtest.mdp import validate_mdp
from oracles import enumerate_avoid, tree_avoid

PLAIN = "#####\n#...#\n#..G#\n#####\n"


def test_builtin_slippery_has_196_states():
    mdp, feats, render = build_slippery_gridworld(builtin_layout("slippery7x7"))
    assert mdp.num_states == 196
    assert validate_mdp(mdp) == []
    assert feats.shape == (196, 3)
    assert render["kind"] == "grid"


def test_builtin_oneway_is_valid():
    mdp, _, _ = build_oneway_gridworld(builtin_layout("oneway5x5"))
    assert mdp.num_states == 84
    assert validate_mdp(mdp) == []


def test_unknown_builtin():
    with pytest.raises(LayoutError):
        builtin_layout("nope")


def test_state_index_bijection():
    layout = builtin_layout("slippery7x7")
    mdp = build_slippery_gridworld(layout)[0]
    seen = set()
    for y, row in enumerate(layout.rows):
        for x, c in enumerate(row):
            if c == "#":
                continue
            for o in range(4):
                s = grid_state(mdp, x, y, o)
                assert tuple(mdp.features[s]) == (x, y, o)
                seen.add(s)
    assert seen == set(range(mdp.num_states))


def test_slip_masses_sum_to_one():
    assert sum(p for p, _, _ in SLIP) == Fraction(1)
    mdp = build_slippery_gridworld(builtin_layout("slippery7x7"))[0]
    for s in range(mdp.num_states):
        for a in mdp.enabled_actions(s):
            assert abs(mdp.successors(s, a)[1].sum() - 1) < 1e-12


def test_slippery_forward_distribution():
    layout = GridLayout.parse("#######\n#.....#\n#..~..#\n#.....#\n#....G#\n#######\n")
    mdp = build_slippery_gridworld(layout)[0]
    s = grid_state(mdp, 3, 2, 0)  # on the slippery tile, facing east
    succ, probs = mdp.successors(s, FORWARD)
    got = {tuple(mdp.features[t][:2].astype(int)): p for t, p in zip(succ, probs)}
    # east is front; north is left; south is right
    assert got == pytest.approx({(4, 2): 3 / 9, (3, 1): 1 / 9, (3, 3): 1 / 9, (4, 1): 2 / 9, (4, 3): 2 / 9})


def test_blocked_slip_folds_into_staying():
    layout = GridLayout.parse("#####\n#~..#\n#..G#\n#####\n")
    mdp = build_slippery_gridworld(layout)[0]
    s = grid_state(mdp, 1, 1, 0)  # facing east, wall to the north (left)
    succ, probs = mdp.successors(s, FORWARD)
    got = dict(zip(succ.tolist(), probs.tolist()))
    assert got[s] == pytest.approx(1 / 9 + 2 / 9)


def test_no_slippery_tiles_deterministic():
    mdp = build_slippery_gridworld(GridLayout.parse(PLAIN))[0]
    for s in range(mdp.num_states):
        for a in mdp.enabled_actions(s):
            assert len(mdp.successors(s, a)[0]) == 1


def test_facing_lava_goes_bad():
    mdp = build_slippery_gridworld(GridLayout.parse("#####\n#.L.#\n#..G#\n#####\n"))[0]
    succ, probs = mdp.successors(grid_state(mdp, 1, 1, 0), FORWARD)
    assert len(succ) == 1 and probs[0] == 1.0 and mdp.has_label(int(succ[0]), "bad")
    lava = grid_state(mdp, 2, 1, 0)
    assert mdp.enabled_actions(lava) == [3]


def test_goal_absorbing():
    mdp = build_slippery_gridworld(GridLayout.parse(PLAIN))[0]
    g = grid_state(mdp, 3, 2, 1)
    assert mdp.has_label(g, "goal")
    assert len(mdp.enabled_actions(g)) == 1
    assert mdp.successors(g, mdp.enabled_actions(g)[0])[0].tolist() == [g]


def test_builders_agree_on_plain_layouts():
    layout = GridLayout.parse("#####\n#...#\n#...#\n#..G#\n#####\n")
    a, b = build_slippery_gridworld(layout)[0], build_oneway_gridworld(layout)[0]
    assert a.num_states == b.num_states == 36
    assert a.same_as(b)


def test_oneway_disables_forward_against_arrow():
    mdp = build_oneway_gridworld(GridLayout.parse("######\n#.>.G#\n######\n"))[0]
    west_on_east_neighbour = grid_state(mdp, 3, 1, 2)
    assert FORWARD not in mdp.enabled_actions(west_on_east_neighbour)
    assert FORWARD in mdp.enabled_actions(grid_state(mdp, 1, 1, 0))
    assert FORWARD not in mdp.enabled_actions(grid_state(mdp, 2, 1, 2))
    assert not any(mdp.has_label(s, "bad") for s in range(mdp.num_states))


def test_oneway_goal_reachable():
    mdp = build_oneway_gridworld(GridLayout.parse("######\n#....#\n#.>v.#\n#..<G#\n#....#\n######\n"))[0]
    spec = RewardSpec.for_label(mdp, "goal", 1.0, horizon=20)
    assert expected_reward(mdp, spec, "max").values[grid_state(mdp, 1, 1, 3)] > 0


@pytest.mark.parametrize("name", ["ragged.txt", "unknown_char.txt", "no_goal.txt", "open_border.txt"])
def test_malformed_layouts(data_dir, name):
    with pytest.raises(LayoutError):
        GridLayout.load(data_dir / "malformed" / name)


def test_no_goal_flag():
    assert GridLayout.parse("####\n#..#\n####\n", allow_no_goal=True).width == 4


def test_corridor_size_and_validity():
    mdp, feats, render = build_corridor_obstacles(20, [(2, 6), (5, 9), (7, 13)], tilt_count=5, velocity_count=2, width=10)
    assert mdp.num_states == 2000
    assert validate_mdp(mdp) == []
    assert tuple(feats[corridor_state(mdp, 3, 4, 1, 1)]) == (3, 4, 1, 1)
    assert render["kind"] == "corridor"


def test_corridor_without_obstacles_all_safe():
    mdp = build_corridor_obstacles(8, [], tilt_count=3, velocity_count=2, width=5)[0]
    assert qualitative_sets(mdp, SafetySpec("bad")).prob1_max.all()


def test_obstacle_below_straight_only_state():
    mdp = build_corridor_obstacles(6, [(2, 3)], tilt_count=1, velocity_count=1, width=5, drift=0.0)[0]
    s = corridor_state(mdp, 2, 2)
    q = qualitative_sets(mdp, SafetySpec("bad"))
    assert q.prob0_max[s] and q.prob0_min[s]


def test_corridor_matches_tree_recursion():
    mdp = build_corridor_obstacles(20, [(2, 6), (5, 9), (7, 13)], tilt_count=3, velocity_count=1, width=10)[0]
    bad = mdp.label_mask("bad")
    rows = {s: {a: mdp.successors(s, a) for a in mdp.enabled_actions(s)} for s in range(mdp.num_states)}

    @functools.lru_cache(maxsize=None)
    def go(s, k, maximize):
        if bad[s]:
            return 0.0
        if k == 0:
            return 1.0
        vals = [sum(p * go(int(t), k - 1, maximize) for t, p in zip(*rows[s][a])) for a in rows[s]]
        return max(vals) if maximize else min(vals)

    for n in (3, 10):
        spec = SafetySpec("bad", n)
        for maximize, mode in ((True, "max"), (False, "min")):
            want = np.array([go(s, n, maximize) for s in range(mdp.num_states)])
            assert np.allclose(prob_reach_avoid(mdp, spec, mode).values, want, atol=1e-9)
    # plain (uncached) recursion on a handful of states near the obstacles
    naive = tree_avoid(mdp, 3, True)
    checked = prob_reach_avoid(mdp, SafetySpec("bad", 3), "max").values
    for s in [corridor_state(mdp, x, 4, t) for x in (1, 2, 3) for t in range(3)]:
        assert checked[s] == pytest.approx(naive[s], abs=1e-9)


def test_random_mdp_deterministic():
    assert random_mdp(1, 6, 2, 3).same_as(random_mdp(1, 6, 2, 3))
    assert not random_mdp(1, 6, 2, 3).same_as(random_mdp(2, 6, 2, 3))


def test_random_mdp_no_bad():
    m = random_mdp(4, 6, 3, 2, bad_fraction=0)
    assert np.all(prob_reach_avoid(m, SafetySpec("bad"), "min").values == 1)


def test_random_mdp_enumeration_full_size():
    m = random_mdp(9, 8, 3, 3)
    best, worst = enumerate_avoid(m)
    assert np.allclose(prob_reach_avoid(m, SafetySpec("bad"), "max").values, best, atol=1e-6)
    assert np.allclose(prob_reach_avoid(m, SafetySpec("bad"), "min").values, worst, atol=1e-6)


def test_random_mdp_bad_parameters():
    with pytest.raises(ValueError):
        random_mdp(0, 3, 2, 4)


def test_dirs_are_clockwise():
    assert DIRS == ((1, 0), (0, 1), (-1, 0), (0, -1))
