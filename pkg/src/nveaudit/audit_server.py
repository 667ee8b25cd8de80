"""Trusted auditor: commitment intake, audit scheduling and client replay."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from .codec import DecodeError, encode_diff, encode_state, split_init_payload, split_update_payload
from .mac import auth_verify, mac_verify
from .records import AuditEvidence, AuditReport, Check, Reason
from .world import WorldError, apply_diff, concrete_rules_ok, gamma_contains


class AuditTooEarly(ValueError):
    """Audits need at least two completed audit cycles of history."""


def window_start(t0: int, l: int) -> int:
    """First cycle of the audited window: ``floor(t0/l - 2) * l``."""
    if l < 1:
        raise ValueError("audit cycle length must be >= 1")
    if t0 < 2 * l:
        raise AuditTooEarly(f"audit at cycle {t0} needs t0 >= {2 * l}")
    return (t0 // l - 2) * l


class Strategy(str, Enum):
    EVERY_BOUNDARY = "every"
    RANDOM_BOUNDARY = "random"
    ON_DEMAND = "ondemand"


@dataclass(frozen=True)
class AuditStrategy:
    kind: Strategy = Strategy.EVERY_BOUNDARY
    q: float = 1.0
    triggers: tuple = ()  # (cycle, client or None) pairs for ON_DEMAND
    seed: int = 0

    @classmethod
    def every(cls) -> "AuditStrategy":
        return cls(Strategy.EVERY_BOUNDARY)

    @classmethod
    def random(cls, q: float, seed: int = 0) -> "AuditStrategy":
        if not 0.0 <= q <= 1.0:
            raise ValueError("audit probability must lie in [0, 1]")
        return cls(Strategy.RANDOM_BOUNDARY, q=q, seed=seed)

    @classmethod
    def on_demand(cls, triggers) -> "AuditStrategy":
        norm = []
        for t in triggers:
            norm.append((t, None) if isinstance(t, int) else (t[0], t[1]))
        return cls(Strategy.ON_DEMAND, triggers=tuple(norm))


def schedule_audits(strategy: AuditStrategy, boundary: int, clients: Iterable[int]) -> list:
    """Clients to audit at ``boundary``; a pure function of strategy seed and cycle."""
    clients = sorted(clients)
    if strategy.kind is Strategy.EVERY_BOUNDARY:
        return clients
    if strategy.kind is Strategy.RANDOM_BOUNDARY:
        rng = np.random.default_rng(np.random.SeedSequence([strategy.seed, boundary]))
        draws = rng.random(len(clients))
        return [c for c, u in zip(clients, draws) if u < strategy.q]
    wanted = {who for cycle, who in strategy.triggers if cycle == boundary}
    if None in wanted:
        return clients
    return [c for c in clients if c in wanted]


@dataclass
class CommitmentLog:
    diffs: dict = field(default_factory=dict)   # cycle -> (tag, arrival)
    states: dict = field(default_factory=dict)  # boundary -> (tag, arrival)
    first_cycle: int = 0
    last_cycle: Optional[int] = None


class AuditServer:
    def __init__(self, l: int, state_server_key: bytes, allow_lossy: bool = False):
        if l < 2:
            raise ValueError("audit cycle length must be >= 2")
        self.l = l
        self.state_server_key = state_server_key
        self.allow_lossy = allow_lossy
        self.client_keys: dict[int, bytes] = {}
        self.logs: dict[int, CommitmentLog] = {}
        self.flags: dict[int, dict] = {}
        self.reports: list[AuditReport] = []
        self.observations: list = []

    def register(self, client: int, key: bytes, first_cycle: int = 0) -> None:
        self.client_keys[client] = key
        self.logs[client] = CommitmentLog(first_cycle=first_cycle)
        self.flags[client] = {}

    def retire(self, client: int, last_cycle: int) -> None:
        self.logs[client].last_cycle = last_cycle

    def _flag(self, client: int, reason: Reason) -> Reason:
        self.flags[client].setdefault(reason.key, reason)
        return reason

    def record_commitment(
        self, client: int, kind: str, cycle: int, tag: bytes, arrival: int
    ) -> Optional[Reason]:
        """Store D_t (``kind='diff'``) or Q_t (``kind='state'``).

        Returns the flag raised, if any.  Late commitments are still stored.
        """
        log = self.logs[client]
        slots = log.diffs if kind == "diff" else log.states
        previous = slots.get(cycle)
        if previous is not None:
            if previous[0] != tag:
                return self._flag(client, Reason(Check.EQUIVOCATION, cycle, f"two {kind} commitments"))
            return None
        if kind == "diff" and tag in (t for t, _ in log.diffs.values()):
            self.observations.append((client, cycle, "diff commitment repeats an earlier tag"))
        slots[cycle] = (tag, arrival)
        if kind == "diff" and arrival != cycle:
            return self._flag(client, Reason(Check.DEADLINE, cycle, f"D arrived in cycle {arrival}"))
        if kind == "state" and arrival >= cycle + self.l:
            return self._flag(client, Reason(Check.DEADLINE, cycle, f"Q arrived in cycle {arrival}"))
        return None

    def close_cycle(self, cycle: int) -> list:
        """Flag every commitment whose deadline passed with the end of ``cycle``."""
        raised = []
        for client, log in self.logs.items():
            if cycle < log.first_cycle or (log.last_cycle is not None and cycle > log.last_cycle):
                continue
            if cycle > log.first_cycle and cycle not in log.diffs:
                raised.append(self._flag(client, Reason(Check.DEADLINE, cycle, "D missing")))
            boundary = cycle - self.l + 1
            if boundary >= log.first_cycle and boundary % self.l == 0 and boundary not in log.states:
                raised.append(self._flag(client, Reason(Check.DEADLINE, boundary, "Q missing")))
        return raised

    def run_audit(self, client: int, t0: int, evidence: AuditEvidence) -> AuditReport:
        """Replay the client's window and check it against its commitments."""
        l = self.l
        ta = window_start(t0, l)
        key = self.client_keys[client]
        log = self.logs[client]
        reasons = list(self.flags[client].values())

        def fail(check, cycle, detail=""):
            reasons.append(Reason(check, cycle, detail))

        state = evidence.state
        if state is None:
            fail(Check.MAC_Q, ta, "window start state missing")
            return self._finish(client, t0, ta, reasons)

        replayed = state
        mid_state = None
        for i in range(ta + 1, t0 + 1):
            diff = evidence.diffs.get(i)
            if diff is None:
                fail(Check.MAC_D, i, "diff missing from evidence")
                break
            msg = evidence.messages.get(i)
            lossy = msg is None and i in evidence.lossy and self.allow_lossy
            if msg is None and not lossy:
                fail(Check.MAC_M, i, "server message missing from evidence")
            elif msg is not None:
                try:
                    authorized, _nonce = split_update_payload(msg.payload)
                except DecodeError as e:
                    fail(Check.GAMMA, i, f"unparseable server message: {e}")
                else:
                    if not gamma_contains(replayed, authorized, diff):
                        fail(Check.GAMMA, i, "diff is not a concretization of the authorized update")
                if not auth_verify(self.state_server_key, msg, client):
                    fail(Check.MAC_M, i, "server message MAC invalid")
            if not concrete_rules_ok(replayed, diff, client):
                fail(Check.RULES, i, "diff breaks the concrete rules")
            commitment = log.diffs.get(i)
            if commitment is None:
                fail(Check.DEADLINE, i, "D never arrived")
            elif not mac_verify(key, encode_diff(diff), commitment[0]):
                fail(Check.MAC_D, i, "diff does not match its commitment")
            try:
                replayed = apply_diff(replayed, diff)
            except WorldError as e:
                fail(Check.RULES, i, f"diff cannot be applied: {e}")
                break
            if i == ta + l:
                mid_state = replayed

        for boundary, s in ((ta, state), (ta + l, mid_state)):
            commitment = log.states.get(boundary)
            if commitment is None:
                fail(Check.DEADLINE, boundary, "Q never arrived")
            elif s is None or not mac_verify(key, encode_state(s), commitment[0]):
                fail(Check.MAC_Q, boundary, "state does not match its commitment")

        if ta == 0:
            self._check_initial(client, state, evidence.m0, fail)
        return self._finish(client, t0, ta, reasons)

    def _check_initial(self, client, state, m0, fail) -> None:
        if m0 is None:
            fail(Check.MAC_M0, 0, "initial authorization missing")
            return
        try:
            s0, _nonce = split_init_payload(m0.payload)
        except DecodeError as e:
            fail(Check.MAC_M0, 0, f"unparseable initial message: {e}")
            return
        if s0 != state or not auth_verify(self.state_server_key, m0, client):
            fail(Check.MAC_M0, 0, "initial state was not authorized by the state server")

    def _finish(self, client, t0, ta, reasons) -> AuditReport:
        seen = set()
        unique = []
        for r in reasons:
            if r.key not in seen:
                seen.add(r.key)
                unique.append(r)
        report = AuditReport(client, t0, ta, tuple(unique))
        self.reports.append(report)
        return report
