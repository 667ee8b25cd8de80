"""Toy NVE semantics: a walled cell grid and its coarse region abstraction.

The concrete world is a grid of Free/Wall cells with avatars on it.  The
abstract world only knows which ``block x block`` region each avatar is in.
``abstract_*`` maps concrete values to abstract ones; ``concretize_*`` goes the
other way.  Together they form a Galois connection:

    abstract_state(concretize_state(a)) == a
    abstract_state(apply_diff(S, d)) == apply_abstract(abstract_state(S), abstract_diff(S, d))

The abstract movement rule ignores walls on purpose.  That loss of information
is what lets a cheating client move through a wall that the server cannot see.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Optional


class WorldError(ValueError):
    """Malformed input to a world operation."""


class ConcretizationError(WorldError):
    """No concrete value exists for the requested abstract value."""


class Cell(IntEnum):
    FREE = 0
    WALL = 1


class Position(NamedTuple):
    x: int
    y: int


class RegionId(NamedTuple):
    rx: int
    ry: int


def manhattan(a: Position, b: Position) -> int:
    return abs(a.x - b.x) + abs(a.y - b.y)


def _row_major(p: Position):
    return (p.y, p.x)


@dataclass(frozen=True)
class CellGrid:
    width: int
    height: int
    cells: tuple
    block: int

    def __post_init__(self):
        if self.block < 1:
            raise WorldError(f"block size must be >= 1, got {self.block}")
        if self.width < self.block or self.height < self.block:
            raise WorldError("grid must be at least one block wide and high")
        if self.width % self.block or self.height % self.block:
            raise WorldError(
                f"{self.width}x{self.height} grid is not divisible by block {self.block}"
            )
        if len(self.cells) != self.width * self.height:
            raise WorldError("cell count does not match width * height")
        object.__setattr__(self, "cells", tuple(Cell(c) for c in self.cells))

    @classmethod
    def from_ascii(cls, rows: str | Iterable[str], block: int) -> "CellGrid":
        """Parse a map where ``#`` is a wall and ``.`` is free, one row per line."""
        if isinstance(rows, str):
            rows = rows.splitlines()
        rows = [r.strip() for r in rows if r.strip()]
        if not rows:
            raise WorldError("empty map")
        width = len(rows[0])
        cells = []
        for y, row in enumerate(rows):
            if len(row) != width:
                raise WorldError(f"map row {y} has length {len(row)}, expected {width}")
            for ch in row:
                if ch == ".":
                    cells.append(Cell.FREE)
                elif ch == "#":
                    cells.append(Cell.WALL)
                else:
                    raise WorldError(f"unexpected map character {ch!r} in row {y}")
        return cls(width, len(rows), tuple(cells), block)

    def to_ascii(self) -> str:
        chars = {Cell.FREE: ".", Cell.WALL: "#"}
        return "\n".join(
            "".join(chars[self.cells[y * self.width + x]] for x in range(self.width))
            for y in range(self.height)
        )

    @property
    def regions_x(self) -> int:
        return self.width // self.block

    @property
    def regions_y(self) -> int:
        return self.height // self.block

    def in_bounds(self, p: Position) -> bool:
        return 0 <= p.x < self.width and 0 <= p.y < self.height

    def has_region(self, r: RegionId) -> bool:
        return 0 <= r.rx < self.regions_x and 0 <= r.ry < self.regions_y

    def cell(self, p: Position) -> Cell:
        if not self.in_bounds(p):
            raise WorldError(f"position {tuple(p)} out of bounds")
        return self.cells[p.y * self.width + p.x]

    def is_free(self, p: Position) -> bool:
        return self.in_bounds(p) and self.cell(p) is Cell.FREE

    def positions(self) -> Iterable[Position]:
        for y in range(self.height):
            for x in range(self.width):
                yield Position(x, y)

    def regions(self) -> Iterable[RegionId]:
        for ry in range(self.regions_y):
            for rx in range(self.regions_x):
                yield RegionId(rx, ry)

    @cached_property
    def _free_by_region(self) -> dict:
        table = {r: [] for r in self.regions()}
        for p in self.positions():
            if self.cell(p) is Cell.FREE:
                table[RegionId(p.x // self.block, p.y // self.block)].append(p)
        return {r: tuple(ps) for r, ps in table.items()}

    def free_cells(self, r: RegionId) -> tuple:
        """Free cells of region ``r`` in row-major order."""
        if not self.has_region(r):
            raise WorldError(f"region {tuple(r)} out of range")
        return self._free_by_region[r]

    def neighbors(self, p: Position) -> list:
        """Free cells one step away, in a fixed order (E, W, S, N)."""
        out = []
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            q = Position(p.x + dx, p.y + dy)
            if self.is_free(q):
                out.append(q)
        return out

    def next_step(self, start: Position, goal: Position) -> Position:
        """First cell on a shortest free path from ``start`` to ``goal``.

        Returns ``start`` when ``goal`` is unreachable or already reached.
        """
        if start == goal or not self.is_free(goal):
            return start
        parent = {start: None}
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            if cur == goal:
                break
            for nxt in self.neighbors(cur):
                if nxt not in parent:
                    parent[nxt] = cur
                    queue.append(nxt)
        if goal not in parent:
            return start
        step = goal
        while parent[step] != start:
            step = parent[step]
        return step


@dataclass(frozen=True)
class ConcreteState:
    grid: CellGrid
    avatars: Mapping[int, Position]
    cycle: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "avatars", {c: Position(*p) for c, p in sorted(self.avatars.items())}
        )


@dataclass(frozen=True)
class AbstractState:
    avatars: Mapping[int, RegionId]
    cycle: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "avatars", {c: RegionId(*r) for c, r in sorted(self.avatars.items())}
        )


@dataclass(frozen=True)
class ConcreteDiff:
    """Absolute target positions, one per moved avatar."""

    moves: Mapping[int, Position]

    def __post_init__(self):
        if not self.moves:
            raise WorldError("a diff must move at least one avatar")
        object.__setattr__(
            self, "moves", {c: Position(*p) for c, p in sorted(self.moves.items())}
        )


@dataclass(frozen=True)
class AbstractDiff:
    moves: Mapping[int, RegionId]

    def __post_init__(self):
        if not self.moves:
            raise WorldError("an abstract diff must move at least one avatar")
        object.__setattr__(
            self, "moves", {c: RegionId(*r) for c, r in sorted(self.moves.items())}
        )


def region_of(grid: CellGrid, p: Position) -> RegionId:
    if not grid.in_bounds(p):
        raise WorldError(f"position {tuple(p)} out of bounds")
    return RegionId(p.x // grid.block, p.y // grid.block)


def abstract_state(s: ConcreteState) -> AbstractState:
    return AbstractState({c: region_of(s.grid, p) for c, p in s.avatars.items()}, s.cycle)


def _check_known(known: Mapping, moves: Mapping) -> None:
    unknown = [c for c in moves if c not in known]
    if unknown:
        raise WorldError(f"unknown client id(s) {unknown}")


def abstract_diff(s: ConcreteState, d: ConcreteDiff) -> AbstractDiff:
    _check_known(s.avatars, d.moves)
    return AbstractDiff({c: region_of(s.grid, p) for c, p in d.moves.items()})


def apply_diff(s: ConcreteState, d: ConcreteDiff) -> ConcreteState:
    """``s`` with every listed avatar moved to its target.  No rule checking."""
    _check_known(s.avatars, d.moves)
    for p in d.moves.values():
        if not s.grid.in_bounds(p):
            raise WorldError(f"target {tuple(p)} out of bounds")
    avatars = dict(s.avatars)
    avatars.update(d.moves)
    return ConcreteState(s.grid, avatars, s.cycle + 1)


def apply_abstract(a: AbstractState, d: AbstractDiff) -> AbstractState:
    _check_known(a.avatars, d.moves)
    avatars = dict(a.avatars)
    avatars.update(d.moves)
    return AbstractState(avatars, a.cycle + 1)


def concretize_state(a: AbstractState, grid: CellGrid, seed=None) -> ConcreteState:
    """Place each avatar on a random Free cell of its region."""
    rng = random.Random(seed)
    avatars = {}
    for c, r in a.avatars.items():
        free = grid.free_cells(r)
        if not free:
            raise ConcretizationError(f"region {tuple(r)} has no free cell")
        avatars[c] = rng.choice(free)
    return ConcreteState(grid, avatars, a.cycle)


def gamma_contains(s: ConcreteState, d_abs: AbstractDiff, d: ConcreteDiff) -> bool:
    """Is ``d`` a concretization of ``d_abs`` relative to ``s``?"""
    if set(d_abs.moves) != set(d.moves):
        return False
    try:
        return abstract_diff(s, d) == d_abs
    except WorldError:
        return False


def _own_step_ok(grid: CellGrid, cur: Position, target: Position) -> bool:
    return grid.is_free(target) and manhattan(cur, target) <= 1


def concretize_diff(
    s: ConcreteState,
    d_abs: AbstractDiff,
    self_id: int,
    intended: Optional[Position] = None,
) -> ConcreteDiff:
    """Choose a rule-compliant concrete diff whose abstraction is ``d_abs``.

    The own avatar keeps ``intended`` when it lies in the authorized region and
    is a legal step; otherwise it takes the nearest legal cell of that region.
    Other avatars go to the Free cell of their region nearest to where they were
    last seen.  Ties are broken in row-major order.
    """
    _check_known(s.avatars, d_abs.moves)
    grid = s.grid
    moves = {}
    for c, r in d_abs.moves.items():
        prev = s.avatars[c]
        free = grid.free_cells(r)
        if c == self_id:
            if (
                intended is not None
                and grid.in_bounds(intended)
                and region_of(grid, intended) == r
                and _own_step_ok(grid, prev, intended)
            ):
                moves[c] = Position(*intended)
                continue
            free = [p for p in free if manhattan(p, prev) <= 1]
        if not free:
            raise ConcretizationError(
                f"no rule-compliant cell for client {c} in region {tuple(r)}"
            )
        moves[c] = min(free, key=lambda p: (manhattan(p, prev), _row_major(p)))
    return ConcreteDiff(moves)


def concrete_rules_ok(s: ConcreteState, d: ConcreteDiff, self_id: int) -> bool:
    grid = s.grid
    for c, target in d.moves.items():
        if c not in s.avatars or not grid.is_free(target):
            return False
        if c == self_id and manhattan(s.avatars[c], target) > 1:
            return False
    return True


def abstract_rules_ok(
    a: AbstractState, d: AbstractDiff, requester: int, grid: CellGrid
) -> bool:
    # Walls are invisible here; a region is enterable iff it has any free cell.
    if set(d.moves) != {requester} or requester not in a.avatars:
        return False
    cur = a.avatars[requester]
    target = d.moves[requester]
    if not grid.has_region(target):
        return False
    if abs(cur.rx - target.rx) + abs(cur.ry - target.ry) > 1:
        return False
    return bool(grid.free_cells(target))


TUNNEL_MAP = """\
########
#..##..#
#..##..#
########
"""


def tunnel_grid() -> CellGrid:
    """Two 4x4 rooms sealed off from each other by a double wall."""
    return CellGrid.from_ascii(TUNNEL_MAP, 4)
