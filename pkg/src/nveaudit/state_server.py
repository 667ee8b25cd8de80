"""Authoritative holder of the abstract world state.

The state server only ever sees region-level requests.  It admits a request
iff the abstract movement rule allows it, and answers every request with an
authorized update that also carries whatever other clients did since the
requester was last told.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .codec import init_payload, update_payload
from .mac import AuthorizedMessage, auth_msg
from .world import (
    AbstractDiff,
    AbstractState,
    CellGrid,
    RegionId,
    abstract_rules_ok,
    apply_abstract,
    concretize_state,
)

NONCE_LIMIT = 2**63


@dataclass
class Session:
    nonce: int
    joined_cycle: int
    unreported: dict = field(default_factory=dict)


class StateServer:
    def __init__(self, grid: CellGrid, key: bytes, seed=0):
        self.grid = grid
        self.key = key
        self.astate = AbstractState({})
        self.sessions: dict[int, Session] = {}
        self.cycle = 0
        self.issued: list = []  # (client, delta') in issue order
        self._rng = random.Random(f"state-server:{seed}")

    def handle_init(self, client: int, spawn: RegionId, seed=None) -> Optional[AuthorizedMessage]:
        return self.handle_inits([(client, spawn)], seed)[client]

    def handle_inits(self, requests: Iterable, seed=None) -> dict:
        """Admit a batch of joining clients, then give each the joint state.

        Every joiner in the batch is placed before any initial state is cut, so
        all of them start out seeing each other.  Duplicate joins get ``None``.
        """
        replies = {}
        admitted = []
        for client, spawn in requests:
            spawn = RegionId(*spawn)
            if client in self.sessions or client in replies or not self.grid.has_region(spawn):
                replies[client] = None
                continue
            if not self.grid.free_cells(spawn):
                replies[client] = None
                continue
            nonce = self._rng.randrange(NONCE_LIMIT // 2)
            self.sessions[client] = Session(nonce, self.cycle)
            avatars = dict(self.astate.avatars)
            avatars[client] = spawn
            self.astate = replace(self.astate, avatars=avatars)
            admitted.append(client)
            replies[client] = None
        for client in admitted:
            view = AbstractState(self.astate.avatars, 0)
            s0 = concretize_state(view, self.grid, f"init:{seed}:{client}")
            replies[client] = auth_msg(self.key, init_payload(s0, self.sessions[client].nonce), client)
        return replies

    def handle_update(self, client: int, request: AbstractDiff) -> Optional[AuthorizedMessage]:
        """Admit or refuse ``request`` and return the authorized update M_t."""
        session = self.sessions.get(client)
        if session is None:
            return None
        current = self.astate.avatars[client]
        if abstract_rules_ok(self.astate, request, client, self.grid):
            target = request.moves[client]
        else:
            target = current
        moves = dict(session.unreported)
        moves[client] = target
        session.unreported = {}
        reply = AbstractDiff(moves)
        if target != current:
            for other, s in self.sessions.items():
                if other != client:
                    s.unreported[client] = target
        self.astate = apply_abstract(self.astate, reply)
        session.nonce += 1
        self.issued.append((client, reply))
        return auth_msg(self.key, update_payload(reply, session.nonce), client)

    def close_session(self, client: int) -> None:
        self.sessions.pop(client, None)
        avatars = dict(self.astate.avatars)
        avatars.pop(client, None)
        self.astate = replace(self.astate, avatars=avatars)
        for s in self.sessions.values():
            s.unreported.pop(client, None)
