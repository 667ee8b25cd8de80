"""Quick property checks runnable without pytest (``nveaudit selftest``)."""

from __future__ import annotations

import random

from .audit_server import window_start
from .client import Client
from .codec import decode_diff, encode_diff
from .mac import auth_msg, auth_verify, generate_key, mac_tag, mac_verify
from .state_server import StateServer
from .world import (
    ConcreteDiff,
    ConcreteState,
    Position,
    abstract_diff,
    abstract_rules_ok,
    abstract_state,
    apply_abstract,
    apply_diff,
    concrete_rules_ok,
    concretize_state,
    gamma_contains,
    tunnel_grid,
)


def galois_violations(grid=None) -> int:
    """Count law violations over every one-avatar state and every one-step diff."""
    grid = grid or tunnel_grid()
    bad = 0
    for p in grid.positions():
        s = ConcreteState(grid, {1: p})
        a = abstract_state(s)
        if grid.free_cells(a.avatars[1]):
            for seed in range(3):
                if abstract_state(concretize_state(a, grid, seed)) != a:
                    bad += 1
        for dx, dy in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)):
            q = Position(p.x + dx, p.y + dy)
            if not grid.in_bounds(q):
                continue
            d = ConcreteDiff({1: q})
            delta = abstract_diff(s, d)
            if abstract_state(apply_diff(s, d)) != apply_abstract(a, delta):
                bad += 1
            if not gamma_contains(s, delta, d):
                bad += 1
            for alt in grid.positions():
                d2 = ConcreteDiff({1: alt})
                if gamma_contains(s, delta, d2) and abstract_state(apply_diff(s, d2)) != apply_abstract(a, delta):
                    bad += 1
    return bad


def _semantic_gap_witness() -> bool:
    grid = tunnel_grid()
    s = ConcreteState(grid, {1: Position(2, 1)})
    jump = ConcreteDiff({1: Position(5, 1)})
    delta = abstract_diff(s, jump)
    return (
        abstract_rules_ok(abstract_state(s), delta, 1, grid)
        and gamma_contains(s, delta, jump)
        and not concrete_rules_ok(s, jump, 1)
    )


def _window_table() -> bool:
    if [window_start(20, 10), window_start(71, 10), window_start(80, 10)] != [0, 50, 60]:
        return False
    for l in (2, 5, 10):
        for t0 in range(2 * l, 10 * l + 1):
            if not 2 * l <= t0 - window_start(t0, l) <= 3 * l - 1:
                return False
    return True


def _buffer_shape() -> bool:
    grid = tunnel_grid()
    rng = random.Random(0)
    server = StateServer(grid, generate_key(rng))
    client = Client(1, 10, generate_key(rng))
    client.do_init(server.handle_init(1, (0, 0), 0))
    seen = {}
    for _ in range(80):
        client.do_cycle(lambda delta: server.handle_update(1, delta))
        if client.t in (71, 72, 80):
            seen[client.t] = (sorted(client.buffer.full_states), sorted(client.buffer.diffs))
    return (
        seen[71] == ([50, 60, 70], list(range(51, 72)))
        and seen[72] == ([50, 60, 70], list(range(51, 73)))
        and seen[80] == ([60, 70, 80], list(range(61, 81)))
    )


def _mac_tamper(samples: int = 2000) -> bool:
    rng = random.Random(1)
    k = generate_key(rng)
    for _ in range(samples):
        m = rng.randbytes(rng.randint(1, 64))
        t = mac_tag(k, m)
        if not mac_verify(k, m, t) or len(t) != 16:
            return False
        i = rng.randrange(len(m))
        mutated = m[:i] + bytes([m[i] ^ rng.randint(1, 255)]) + m[i + 1:]
        if mac_verify(k, mutated, t):
            return False
    msg = auth_msg(k, b"payload", 7)
    return auth_verify(k, msg, 7) and not auth_verify(k, msg, 8)


def _codec_roundtrip(samples: int = 500) -> bool:
    rng = random.Random(2)
    for _ in range(samples):
        moves = {rng.randrange(2**64): Position(rng.randrange(2**32), rng.randrange(2**32))
                 for _ in range(rng.randint(1, 5))}
        d = ConcreteDiff(moves)
        if decode_diff(encode_diff(d)) != d:
            return False
    return True


CHECKS = {
    "galois-laws": lambda: galois_violations() == 0,
    "semantic-gap-witness": _semantic_gap_witness,
    "window-start-table": _window_table,
    "buffer-shape": _buffer_shape,
    "mac-tamper-evidence": _mac_tamper,
    "codec-roundtrip": _codec_roundtrip,
}


def run_selftest() -> list:
    return [(name, bool(check())) for name, check in CHECKS.items()]
