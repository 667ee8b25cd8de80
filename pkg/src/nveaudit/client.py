"""Client side of the integrity protocol.

A client keeps its concrete state, commits to every applied diff (and to its
full state at each audit-cycle boundary), and retains a sliding window of
evidence to answer audits from.  Optional cheat profiles turn it into one of
the adversaries the audit is meant to catch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, NamedTuple, Optional

from .audit_server import window_start
from .codec import DecodeError, encode_diff, encode_state, split_init_payload, split_update_payload, update_payload
from .mac import AuthorizedMessage, mac_tag
from .records import AuditEvidence
from .world import (
    AbstractDiff,
    ConcreteDiff,
    ConcreteState,
    Position,
    RegionId,
    WorldError,
    abstract_diff,
    apply_diff,
    concrete_rules_ok,
    concretize_diff,
    manhattan,
    region_of,
)


class ClientError(RuntimeError):
    pass


class WindowPruned(ClientError):
    """The requested audit window is no longer in the buffer."""


class CheatKind(str, Enum):
    NONE = "none"
    WALLHACK = "wallhack"
    REWRITE_HISTORY = "rewrite"
    FORGE_SERVER_MSG = "forge"
    FAKE_STATE_COMMIT = "fakeq"
    OUT_OF_GAMMA = "outofgamma"


@dataclass(frozen=True)
class CheatProfile:
    kind: CheatKind = CheatKind.NONE
    cycle: int = 0
    altered: Optional[int] = None  # REWRITE_HISTORY: the cycle whose diff is replaced

    def __post_init__(self):
        if self.kind is CheatKind.REWRITE_HISTORY and (self.altered is None or self.altered >= self.cycle):
            raise ValueError("history rewrite must alter a cycle before the rewrite cycle")

    def at(self, kind: CheatKind, cycle: int) -> bool:
        return self.kind is kind and self.cycle == cycle


HONEST = CheatProfile()


@dataclass(frozen=True)
class BehaviorScript:
    """What the player wants to do.

    ``moves`` lists one intended target per cycle (then the avatar stays put);
    ``waypoints`` are visited in a loop along shortest free paths.
    """

    moves: tuple = ()
    waypoints: tuple = ()


class Commitment(NamedTuple):
    kind: str  # "diff" or "state"
    cycle: int
    tag: bytes


@dataclass
class SlidingWindowBuffer:
    full_states: dict = field(default_factory=dict)
    diffs: dict = field(default_factory=dict)
    server_msgs: dict = field(default_factory=dict)
    lossy: set = field(default_factory=set)
    m0: Optional[AuthorizedMessage] = None

    def prune(self, t: int, l: int) -> None:
        """Drop everything older than the last two completed audit cycles."""
        horizon = t - 2 * l
        for c in [c for c in self.full_states if c < horizon]:
            del self.full_states[c]
        for c in [c for c in self.diffs if c <= horizon]:
            del self.diffs[c]
            self.server_msgs.pop(c, None)
            self.lossy.discard(c)

    def state_at(self, cycle: int) -> ConcreteState:
        """Rebuild S_cycle from the nearest earlier full state."""
        base = max((c for c in self.full_states if c <= cycle), default=None)
        if base is None:
            raise WindowPruned(f"no full state at or before cycle {cycle}")
        s = self.full_states[base]
        for i in range(base + 1, cycle + 1):
            if i not in self.diffs:
                raise WindowPruned(f"diff for cycle {i} is gone")
            s = apply_diff(s, self.diffs[i])
        return s


class Client:
    def __init__(
        self,
        client_id: int,
        l: int,
        key: bytes,
        script: BehaviorScript = BehaviorScript(),
        cheat: CheatProfile = HONEST,
    ):
        self.id = client_id
        self.l = l
        self.key = key
        self.script = script
        self.cheat = cheat
        self.state: Optional[ConcreteState] = None
        self.t = 0
        self.buffer = SlidingWindowBuffer()
        self.log: list = []
        self._waypoint = 0
        self._intended: Optional[Position] = None
        self._requested: Optional[AbstractDiff] = None
        self._scheming = False

    @property
    def joined(self) -> bool:
        return self.state is not None

    @property
    def position(self) -> Position:
        return self.state.avatars[self.id]

    # -- Initialize -------------------------------------------------------

    def do_init(self, m0: Optional[AuthorizedMessage]) -> Optional[Commitment]:
        """Adopt the server-issued initial state and commit to it.

        M_0 is kept opaque: the client holds no state-server key.
        """
        if m0 is None:
            self.log.append((0, "init rejected"))
            return None
        s0, _nonce = split_init_payload(m0.payload)
        if self.id not in s0.avatars:
            raise ClientError("initial state does not contain this client")
        self.state = s0
        self.t = s0.cycle
        self.buffer.m0 = m0
        self.buffer.full_states[self.t] = s0
        return Commitment("state", self.t, self._state_tag(s0))

    # -- StatusUpdate -----------------------------------------------------

    def _scripted_target(self) -> Position:
        pos = self.position
        grid = self.state.grid
        if self.script.moves:
            if self.t < len(self.script.moves):
                return Position(*self.script.moves[self.t])
            return pos
        if self.script.waypoints:
            wps = self.script.waypoints
            if pos == Position(*wps[self._waypoint]):
                self._waypoint = (self._waypoint + 1) % len(wps)
            return grid.next_step(pos, Position(*wps[self._waypoint]))
        return pos

    def _adjacent_region(self) -> Optional[RegionId]:
        grid = self.state.grid
        here = region_of(grid, self.position)
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            r = RegionId(here.rx + dx, here.ry + dy)
            if grid.has_region(r) and grid.free_cells(r):
                return r
        return None

    def request_update(self) -> AbstractDiff:
        """Steps 1-2: pick the next move and abstract it for the state server."""
        if not self.joined:
            raise ClientError("client has not joined")
        c = self.t + 1
        pos = self.position
        target = self._scripted_target()
        self._scheming = False
        if not concrete_rules_ok(self.state, ConcreteDiff({self.id: target}), self.id):
            target = pos
        cheat = self.cheat
        if cheat.cycle == c and cheat.kind in (
            CheatKind.WALLHACK, CheatKind.OUT_OF_GAMMA, CheatKind.FORGE_SERVER_MSG,
        ):
            region = self._adjacent_region()
            if region is None:
                self.log.append((c, f"{cheat.kind.value}: no adjacent region to exploit"))
            else:
                self._requested = AbstractDiff({self.id: region})
                self._intended = None
                self._scheming = True
                if cheat.kind is CheatKind.WALLHACK:
                    far = [p for p in self.state.grid.free_cells(region) if manhattan(p, pos) >= 2]
                    if far:
                        self._intended = min(far, key=lambda p: (manhattan(p, pos), p.y, p.x))
                return self._requested
        self._intended = target
        self._requested = abstract_diff(self.state, ConcreteDiff({self.id: target}))
        return self._requested

    def _concretize(self, authorized: AbstractDiff, c: int) -> ConcreteDiff:
        if self._scheming:
            # The own entry is decided by the cheat; place the others honestly.
            others = {k: v for k, v in authorized.moves.items() if k != self.id}
            moves = {self.id: self.position}
            if others:
                moves.update(concretize_diff(self.state, AbstractDiff(others), self.id).moves)
            return ConcreteDiff(moves)
        try:
            return concretize_diff(self.state, authorized, self.id, self._intended)
        except WorldError as e:
            # Keep whatever can be placed; the own avatar stays put.
            self.log.append((c, f"concretization conflict: {e}"))
            moves = {self.id: self.position}
            for other, region in authorized.moves.items():
                if other == self.id or other not in self.state.avatars:
                    continue
                try:
                    single = AbstractDiff({other: region})
                    moves.update(concretize_diff(self.state, single, self.id).moves)
                except WorldError:
                    pass
            return ConcreteDiff(moves)

    def complete_update(self, reply: Optional[AuthorizedMessage]) -> list:
        """Steps 5-9: apply the authorized update, commit, and roll the window."""
        if not self.joined:
            raise ClientError("client has not joined")
        c = self.t + 1
        stored = reply
        if reply is None:
            diff = ConcreteDiff({self.id: self.position})
            self.buffer.lossy.add(c)
            self.log.append((c, "lossy cycle: no server response"))
        else:
            try:
                authorized, nonce = split_update_payload(reply.payload)
            except DecodeError as e:
                raise ClientError(f"undecodable server update: {e}") from e
            diff = self._concretize(authorized, c)
            diff, stored = self._cheat_on_update(c, authorized, nonce, diff, reply)

        self.state = apply_diff(self.state, diff)
        self.buffer.diffs[c] = diff
        if stored is not None:
            self.buffer.server_msgs[c] = stored
        commitments = [Commitment("diff", c, mac_tag(self.key, encode_diff(diff)))]
        self.t = c

        if self.t % self.l == 0:
            self.buffer.prune(self.t, self.l)
            self.buffer.full_states[self.t] = self.state
            commitments.append(Commitment("state", self.t, self._state_tag(self.state)))

        if self.cheat.at(CheatKind.REWRITE_HISTORY, c):
            self._rewrite_history(self.cheat.altered)
        return commitments

    def do_cycle(self, exchange: Callable[[AbstractDiff], Optional[AuthorizedMessage]]) -> list:
        """One full client cycle against a synchronous ``exchange`` with the server."""
        return self.complete_update(exchange(self.request_update()))

    # -- Audit ------------------------------------------------------------

    def answer_audit(self, t0: int) -> AuditEvidence:
        ta = window_start(t0, self.l)
        if t0 > self.t:
            raise ClientError(f"audit for future cycle {t0} (client is at {self.t})")
        buf = self.buffer
        if ta not in buf.full_states:
            raise WindowPruned(f"full state {ta} is no longer buffered")
        cycles = range(ta + 1, t0 + 1)
        missing = [i for i in cycles if i not in buf.diffs]
        if missing:
            raise WindowPruned(f"diffs {missing[0]}..{missing[-1]} are no longer buffered")
        return AuditEvidence(
            t0=t0,
            state=buf.full_states[ta],
            diffs={i: buf.diffs[i] for i in cycles},
            messages={i: buf.server_msgs[i] for i in cycles if i in buf.server_msgs},
            m0=buf.m0 if ta == 0 else None,
            lossy=frozenset(i for i in cycles if i in buf.lossy),
        )

    # -- adversarial behavior ----------------------------------------------

    def _state_tag(self, s: ConcreteState) -> bytes:
        if self.cheat.at(CheatKind.FAKE_STATE_COMMIT, s.cycle):
            s = self._fabricated(s)
            self.log.append((s.cycle, "fakeq: committed to a fabricated state"))
        return mac_tag(self.key, encode_state(s))

    def _fabricated(self, s: ConcreteState) -> ConcreteState:
        pos = s.avatars[self.id]
        for p in s.grid.positions():
            if s.grid.is_free(p) and p != pos:
                avatars = dict(s.avatars)
                avatars[self.id] = p
                return replace(s, avatars=avatars)
        return replace(s, cycle=s.cycle + 1)

    def _cheat_on_update(self, c, authorized, nonce, diff, reply):
        cheat = self.cheat
        if cheat.cycle != c or not self._scheming:
            return diff, reply
        grid = self.state.grid
        pos = self.position
        granted = authorized.moves.get(self.id)
        moves = dict(diff.moves)

        if cheat.kind is CheatKind.WALLHACK:
            if self._intended is not None and granted == region_of(grid, self._intended):
                moves[self.id] = self._intended
                self.log.append((c, f"wallhack: jumped {tuple(pos)} -> {tuple(self._intended)}"))
            return ConcreteDiff(moves), reply

        if cheat.kind is CheatKind.OUT_OF_GAMMA:
            for p in [pos] + grid.neighbors(pos):
                if region_of(grid, p) != granted:
                    moves[self.id] = p
                    self.log.append((c, f"outofgamma: stayed out of authorized region {tuple(granted)}"))
                    break
            return ConcreteDiff(moves), reply

        # FORGE_SERVER_MSG: ignore the granted region and cover it up with a
        # doctored copy of the server's message.
        moves[self.id] = pos
        forged_moves = dict(authorized.moves)
        forged_moves[self.id] = region_of(grid, pos)
        forged_nonce = nonce if forged_moves != authorized.moves else nonce + 1
        payload = update_payload(AbstractDiff(forged_moves), forged_nonce)
        self.log.append((c, "forge: stored a doctored server message"))
        return ConcreteDiff(moves), AuthorizedMessage(payload, reply.tag)

    def _rewrite_history(self, altered: int) -> None:
        buf = self.buffer
        if altered not in buf.diffs:
            self.log.append((self.t, f"rewrite: diff {altered} no longer buffered"))
            return
        before = buf.state_at(altered - 1)
        grid = before.grid
        original = buf.diffs[altered]
        following = buf.diffs.get(altered + 1)
        nxt = following.moves.get(self.id) if following else None
        replacement = None

        own = original.moves.get(self.id)
        if own is not None:
            prev = before.avatars[self.id]
            for p in grid.free_cells(region_of(grid, own)):
                if p != own and manhattan(p, prev) <= 1 and (nxt is None or manhattan(p, nxt) <= 1):
                    replacement = {**original.moves, self.id: p}
                    break
        if replacement is None:
            for other, p0 in original.moves.items():
                if other == self.id:
                    continue
                alternatives = [p for p in grid.free_cells(region_of(grid, p0)) if p != p0]
                if alternatives:
                    replacement = {**original.moves, other: alternatives[0]}
                    break
        if replacement is None:
            self.log.append((self.t, f"rewrite: no plausible alternative for cycle {altered}"))
            return

        buf.diffs[altered] = ConcreteDiff(replacement)
        base = max(c for c in buf.full_states if c < altered)
        s = buf.full_states[base]
        for i in range(base + 1, self.t + 1):
            s = apply_diff(s, buf.diffs[i])
            if i in buf.full_states:
                buf.full_states[i] = s
        self.state = s
        self.log.append((self.t, f"rewrite: replaced diff {altered} without recommitting"))
