"""Cycle-clocked message fabric with unreliable and deadline-reliable delivery.

Unreliable envelopes may be dropped or delayed by a whole number of cycles.
Reliable envelopes carry a deadline cycle ``d`` and are always delivered
before cycle ``d`` begins.  Delivery order at an endpoint is
(scheduled cycle, send order).
"""

from __future__ import annotations

import heapq
import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

import numpy as np

from .codec import Kind, WireMessage, encode_message, mac_bytes


class FabricError(RuntimeError):
    """Misconfiguration or a broken delivery contract."""


@dataclass(frozen=True)
class Envelope:
    message: WireMessage
    src: int
    dst: int
    sent_cycle: int
    deadline: Optional[int] = None  # None means unreliable

    def __post_init__(self):
        if self.deadline is not None and self.deadline < self.sent_cycle:
            raise FabricError("reliable deadline precedes the send cycle")

    @property
    def reliable(self) -> bool:
        return self.deadline is not None


@dataclass(frozen=True)
class LateDelivery:
    """Fault injection: deliver a matching reliable envelope past its deadline."""

    sender: int
    kind: Kind
    cycle: int
    lateness: int = 1


@dataclass(frozen=True)
class FabricConfig:
    drop_probability: float = 0.0
    max_delay: int = 0
    seed: int = 0
    late: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not 0.0 <= self.drop_probability <= 1.0:
            raise FabricError("drop_probability must lie in [0, 1]")
        if self.max_delay < 0:
            raise FabricError("max_delay must be >= 0")


class TrafficRecord(NamedTuple):
    cycle: int
    src: int
    dst: int
    kind: Kind
    frame_bytes: int
    mac_bytes: int
    dropped: bool


class Fabric:
    def __init__(self, config: FabricConfig, endpoints: Iterable[int]):
        self.config = config
        self.endpoints = set(endpoints)
        self.clock = 0
        self.traffic: list[TrafficRecord] = []
        self._rng = np.random.default_rng(config.seed)
        self._seq = itertools.count()
        self._queue: list = []
        self._late = {(f.sender, Kind(f.kind), f.cycle): f.lateness for f in config.late}

    def _schedule(self, env: Envelope) -> Optional[int]:
        if env.reliable:
            lateness = self._late.get((env.src, env.message.kind, env.message.cycle))
            if lateness is not None:
                return env.deadline - 1 + lateness
            return env.sent_cycle
        if self._rng.random() < self.config.drop_probability:
            return None
        delay = int(self._rng.integers(0, self.config.max_delay + 1)) if self.config.max_delay else 0
        return env.sent_cycle + delay

    def send(self, env: Envelope) -> Optional[int]:
        """Queue ``env``; returns the cycle it will arrive in, or None if dropped."""
        if env.src not in self.endpoints or env.dst not in self.endpoints:
            raise FabricError(f"unknown endpoint in {env.src} -> {env.dst}")
        if env.sent_cycle < self.clock:
            raise FabricError("cannot send into the past")
        at = self._schedule(env)
        frame = encode_message(env.message)
        self.traffic.append(
            TrafficRecord(
                env.sent_cycle, env.src, env.dst, env.message.kind,
                len(frame), mac_bytes(env.message), at is None,
            )
        )
        if at is not None:
            heapq.heappush(self._queue, (at, next(self._seq), env))
        return at

    def _pop_due(self, endpoint: Optional[int] = None) -> list:
        due, keep = [], []
        while self._queue and self._queue[0][0] <= self.clock:
            item = heapq.heappop(self._queue)
            if endpoint is None or item[2].dst == endpoint:
                due.append(item)
            else:
                keep.append(item)
        for item in keep:
            heapq.heappush(self._queue, item)
        return [env for _, _, env in due]

    def advance_cycle(self) -> dict:
        """Tick the clock; return everything now due, grouped by endpoint."""
        self.clock += 1
        out = defaultdict(list)
        for env in self._pop_due():
            out[env.dst].append(env)
        return dict(out)

    def collect(self, endpoint: int) -> list:
        """Envelopes for ``endpoint`` due at or before the current cycle."""
        return self._pop_due(endpoint)

    def pending(self) -> int:
        return len(self._queue)

    def byte_accounting(self) -> dict:
        """Cumulative frame bytes sent, per sending endpoint and message kind."""
        out: dict = {}
        for rec in self.traffic:
            per = out.setdefault(rec.src, {})
            per[rec.kind.name] = per.get(rec.kind.name, 0) + rec.frame_bytes
        return out
