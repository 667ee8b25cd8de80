"""
Abstraction and concretization
==============================

alpha maps a grid state to the block each avatar is in; gamma picks a
concrete state back.  Going up and down again never changes the abstract view.
"""

from nveaudit.selftest import galois_violations
from nveaudit.world import (
    AbstractDiff,
    ConcreteState,
    Position,
    RegionId,
    abstract_state,
    concretize_diff,
    concretize_state,
    tunnel_grid,
)

grid = tunnel_grid()
s = ConcreteState(grid, {1: Position(2, 1), 2: Position(6, 2)})
a = abstract_state(s)
print("alpha(S) =", a.avatars)
for seed in range(3):
    print("gamma sample:", concretize_state(a, grid, seed).avatars)

# another avatar reported in a new block lands on the nearest free cell
d = concretize_diff(s, AbstractDiff({2: RegionId(0, 0)}), self_id=1)
print("bob placed at", d.moves[2])

print("law violations over all one-avatar states:", galois_violations(grid))
