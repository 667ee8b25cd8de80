import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nveaudit.world import (
    AbstractDiff,
    AbstractState,
    CellGrid,
    ConcreteDiff,
    ConcreteState,
    ConcretizationError,
    Position,
    RegionId,
    WorldError,
    abstract_diff,
    abstract_rules_ok,
    abstract_state,
    apply_abstract,
    apply_diff,
    concrete_rules_ok,
    concretize_diff,
    concretize_state,
    gamma_contains,
    tunnel_grid,
)

STEPS = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))


def brute_free_cells(grid, r):
    # independent oracle: scan every cell, no cached region index
    out = []
    for y in range(grid.height):
        for x in range(grid.width):
            if x // grid.block == r.rx and y // grid.block == r.ry and grid.cells[y * grid.width + x] == 0:
                out.append(Position(x, y))
    return out


def test_tunnel_layout(grid):
    assert (grid.width, grid.height, grid.block) == (8, 4, 4)
    assert sorted(brute_free_cells(grid, RegionId(0, 0))) == sorted(
        [Position(1, 1), Position(2, 1), Position(1, 2), Position(2, 2)]
    )
    assert grid.free_cells(RegionId(1, 0)) == (Position(5, 1), Position(6, 1), Position(5, 2), Position(6, 2))
    assert grid.to_ascii().splitlines()[1] == "#..##..#"


def test_grid_invariants():
    with pytest.raises(WorldError):
        CellGrid.from_ascii(["...", "..."], 2)  # width not divisible
    with pytest.raises(WorldError):
        CellGrid.from_ascii(["..", ".."], 4)  # block larger than grid
    with pytest.raises(WorldError):
        CellGrid.from_ascii(["..", ".x"], 1)


def test_abstract_state_example(grid):
    s = ConcreteState(grid, {1: Position(2, 1), 2: Position(5, 1)})
    assert abstract_state(s).avatars == {1: RegionId(0, 0), 2: RegionId(1, 0)}


def test_abstract_diff_unknown_client(grid):
    s = ConcreteState(grid, {1: Position(2, 1)})
    with pytest.raises(WorldError):
        abstract_diff(s, ConcreteDiff({7: Position(1, 1)}))


def test_empty_diffs_rejected():
    with pytest.raises(WorldError):
        ConcreteDiff({})
    with pytest.raises(WorldError):
        AbstractDiff({})


def test_apply_diff_bumps_cycle_and_keeps_others(grid):
    s = ConcreteState(grid, {1: Position(2, 1), 2: Position(5, 1)}, cycle=4)
    s2 = apply_diff(s, ConcreteDiff({1: Position(2, 2)}))
    assert s2.cycle == 5 and s2.avatars == {1: Position(2, 2), 2: Position(5, 1)}
    with pytest.raises(WorldError):
        apply_diff(s, ConcreteDiff({1: Position(9, 0)}))


def test_concretize_state_empty_region():
    g = CellGrid.from_ascii(["##..", "##.."], 2)
    with pytest.raises(ConcretizationError):
        concretize_state(AbstractState({1: RegionId(0, 0)}), g, 0)


def test_concretize_diff_other_avatar_nearest(grid):
    # bob last seen at (2,1) is reported in region (1,0): nearest free cell by
    # Manhattan distance, brute-forced here, is (5,1).
    s = ConcreteState(grid, {1: Position(1, 1), 2: Position(2, 1)})
    d = concretize_diff(s, AbstractDiff({2: RegionId(1, 0)}), self_id=1)
    oracle = min(brute_free_cells(grid, RegionId(1, 0)), key=lambda p: (abs(p.x - 2) + abs(p.y - 1), p.y, p.x))
    assert oracle == Position(5, 1)
    assert d.moves == {2: Position(5, 1)}


def test_concretize_diff_row_major_tie_break():
    g = CellGrid.from_ascii(["....", ".#..", "....", "...."], 2)
    s = ConcreteState(g, {1: Position(3, 3), 2: Position(2, 2)})
    # (1,0) and (0,1) are both 3 steps from (2,2); row-major order picks (1,0)
    d = concretize_diff(s, AbstractDiff({2: RegionId(0, 0)}), self_id=1)
    assert d.moves[2] == Position(1, 0)
    s = ConcreteState(g, {1: Position(3, 3), 2: Position(3, 0)})
    d = concretize_diff(s, AbstractDiff({2: RegionId(0, 1)}), self_id=1)
    assert d.moves[2] == Position(1, 2)


def test_concretize_diff_own_intended_and_fallback(grid):
    s = ConcreteState(grid, {1: Position(1, 1)})
    d = concretize_diff(s, AbstractDiff({1: RegionId(0, 0)}), 1, intended=Position(2, 1))
    assert d.moves == {1: Position(2, 1)}
    # intended outside the authorized region falls back to a legal step
    d = concretize_diff(s, AbstractDiff({1: RegionId(0, 0)}), 1, intended=Position(5, 1))
    assert d.moves == {1: Position(1, 1)}
    assert concrete_rules_ok(s, d, 1)


def test_concretize_diff_own_unreachable(grid):
    s = ConcreteState(grid, {1: Position(2, 1)})
    with pytest.raises(ConcretizationError):
        concretize_diff(s, AbstractDiff({1: RegionId(1, 0)}), 1)


def test_rules(grid):
    s = ConcreteState(grid, {1: Position(1, 1), 2: Position(1, 1)})
    assert concrete_rules_ok(s, ConcreteDiff({1: Position(2, 1)}), 1)
    assert concrete_rules_ok(s, ConcreteDiff({1: Position(1, 2), 2: Position(1, 2)}), 1)  # overlap fine
    assert not concrete_rules_ok(s, ConcreteDiff({1: Position(2, 2)}), 1)  # diagonal
    assert not concrete_rules_ok(s, ConcreteDiff({1: Position(1, 0)}), 1)  # wall
    assert not concrete_rules_ok(s, ConcreteDiff({2: Position(0, 0)}), 1)  # other onto wall
    a = abstract_state(s)
    assert abstract_rules_ok(a, AbstractDiff({1: RegionId(1, 0)}), 1, grid)
    assert abstract_rules_ok(a, AbstractDiff({1: RegionId(0, 0)}), 1, grid)
    assert not abstract_rules_ok(a, AbstractDiff({1: RegionId(2, 0)}), 1, grid)
    assert not abstract_rules_ok(a, AbstractDiff({2: RegionId(0, 0)}), 1, grid)
    assert not abstract_rules_ok(a, AbstractDiff({1: RegionId(0, 0), 2: RegionId(0, 0)}), 1, grid)


def test_abstract_rule_needs_a_free_cell():
    g = CellGrid.from_ascii(["..##", "..##"], 2)
    a = AbstractState({1: RegionId(0, 0)})
    assert not abstract_rules_ok(a, AbstractDiff({1: RegionId(1, 0)}), 1, g)


def test_semantic_gap_witness(grid):
    s = ConcreteState(grid, {1: Position(2, 1)})
    jump = ConcreteDiff({1: Position(5, 1)})
    delta = AbstractDiff({1: RegionId(1, 0)})
    assert abstract_rules_ok(abstract_state(s), delta, 1, grid)
    assert gamma_contains(s, delta, jump)
    assert not concrete_rules_ok(s, jump, 1)


def test_gamma_contains_requires_same_clients(grid):
    s = ConcreteState(grid, {1: Position(1, 1), 2: Position(5, 1)})
    delta = AbstractDiff({1: RegionId(0, 0)})
    assert not gamma_contains(s, delta, ConcreteDiff({1: Position(1, 2), 2: Position(5, 1)}))
    assert not gamma_contains(s, delta, ConcreteDiff({1: Position(9, 9)}))


# -- exhaustive two-avatar laws on small grids -----------------------------------

SMALL = [
    tunnel_grid(),
    CellGrid.from_ascii(["#..#....", "....##..", ".#......", "....#..#"], 2),
    CellGrid.from_ascii(["......", ".#..#.", "......"], 3),
]


@pytest.mark.parametrize("g", SMALL)
def test_two_avatar_homomorphism_exhaustive(g):
    cells = list(g.positions())
    bad = 0
    for p1, p2 in itertools.product(cells, repeat=2):
        s = ConcreteState(g, {1: p1, 2: p2})
        a = abstract_state(s)
        for (dx, dy), q2 in itertools.product(STEPS, [p2, cells[(cells.index(p2) + 5) % len(cells)]]):
            q1 = Position(p1.x + dx, p1.y + dy)
            if not g.in_bounds(q1):
                continue
            d = ConcreteDiff({1: q1, 2: q2})
            delta = abstract_diff(s, d)
            if abstract_state(apply_diff(s, d)) != apply_abstract(a, delta):
                bad += 1
            if not gamma_contains(s, delta, d):
                bad += 1
    assert bad == 0


@pytest.mark.parametrize("g", SMALL)
def test_alpha_gamma_identity_all_abstract_states(g):
    regions = [r for r in g.regions() if g.free_cells(r)]
    for r1, r2 in itertools.product(regions, repeat=2):
        a = AbstractState({1: r1, 2: r2}, cycle=3)
        for seed in range(4):
            assert abstract_state(concretize_state(a, g, seed)) == a


# -- randomized laws on larger grids ----------------------------------------------

@st.composite
def worlds(draw):
    block = draw(st.integers(1, 4))
    w = block * draw(st.integers(1, 5))
    h = block * draw(st.integers(1, 5))
    cells = draw(st.lists(st.sampled_from([0, 0, 0, 1]), min_size=w * h, max_size=w * h))
    g = CellGrid(w, h, tuple(cells), block)
    n = draw(st.integers(1, 4))
    pos = st.builds(Position, st.integers(0, w - 1), st.integers(0, h - 1))
    avatars = {c: draw(pos) for c in range(1, n + 1)}
    moved = draw(st.lists(st.integers(1, n), min_size=1, unique=True))
    diff = {c: draw(pos) for c in moved}
    return ConcreteState(g, avatars, draw(st.integers(0, 1000))), ConcreteDiff(diff)


@settings(max_examples=300, deadline=None)
@given(worlds())
def test_laws_random_grids(world):
    s, d = world
    a = abstract_state(s)
    delta = abstract_diff(s, d)
    assert abstract_state(apply_diff(s, d)) == apply_abstract(a, delta)
    assert gamma_contains(s, delta, d)
    if all(s.grid.free_cells(r) for r in a.avatars.values()):
        assert abstract_state(concretize_state(a, s.grid, 0)) == a
    # every diff concretize_diff produces for other avatars lies in gamma and obeys rules
    self_id = min(s.avatars)
    others = {c: r for c, r in delta.moves.items() if c != self_id and s.grid.free_cells(r)}
    if others:
        cd = concretize_diff(s, AbstractDiff(others), self_id)
        assert gamma_contains(s, AbstractDiff(others), cd)
        assert concrete_rules_ok(s, cd, self_id)
