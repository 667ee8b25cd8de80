"""
The tunnel attack
=================

Alice walks through the wall between two rooms.  The state server only tracks
which 4x4 block each avatar is in, so the jump looks like an ordinary move to
the neighbouring block and is accepted.  The audit server catches it later by
replaying alice's committed history.
"""

from nveaudit import CheatKind, CheatProfile, run, tunnel_scenario
from nveaudit.world import (
    ConcreteDiff,
    ConcreteState,
    Position,
    abstract_diff,
    abstract_rules_ok,
    abstract_state,
    concrete_rules_ok,
)

sc = tunnel_scenario()
print(sc.grid.to_ascii())

# the semantic gap in one line: abstractly fine, concretely illegal
s = ConcreteState(sc.grid, {1: Position(2, 1)})
jump = ConcreteDiff({1: Position(5, 1)})
print("abstract rule ok:", abstract_rules_ok(abstract_state(s), abstract_diff(s, jump), 1, sc.grid))
print("concrete rule ok:", concrete_rules_ok(s, jump, 1))

###############################################################################
# Now run the whole protocol with alice cheating in cycle 37.

metrics = run(tunnel_scenario(CheatProfile(CheatKind.WALLHACK, 37)))
for rep in metrics.reports_for("alice")[:5]:
    print(rep.t0, rep.verdict.value, rep.reason_keys())

###############################################################################
# Every other attack profile is caught by a different audit step.

for cheat in [
    CheatProfile(CheatKind.OUT_OF_GAMMA, 37),
    CheatProfile(CheatKind.REWRITE_HISTORY, 38, 35),
    CheatProfile(CheatKind.FORGE_SERVER_MSG, 36),
    CheatProfile(CheatKind.FAKE_STATE_COMMIT, 30),
]:
    first = run(tunnel_scenario(cheat)).first_reject("alice")
    print(f"{cheat.kind.value:>10}: rejected at t0={first.t0} {first.reason_keys()}")
