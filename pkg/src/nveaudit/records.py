"""Audit evidence and audit verdicts exchanged between client and auditor."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, NamedTuple, Optional

from .mac import AuthorizedMessage
from .world import ConcreteDiff, ConcreteState


class Check(str, Enum):
    GAMMA = "Step5-gamma"
    RULES = "Step5-rules"
    MAC_M = "Step6a-MAC-M"
    MAC_D = "Step6b-MAC-D"
    MAC_Q = "Step7-MAC-Q"
    MAC_M0 = "Step7-MAC-M0"
    DEADLINE = "Deadline"
    EQUIVOCATION = "Equivocation"


CHECK_CODES = {check: i for i, check in enumerate(Check)}


class Reason(NamedTuple):
    check: Check
    cycle: int
    detail: str = ""

    @property
    def key(self):
        return (self.check, self.cycle)


class Verdict(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class AuditReport:
    client: int
    t0: int
    ta: int
    reasons: tuple = ()

    @property
    def verdict(self) -> Verdict:
        return Verdict.REJECT if self.reasons else Verdict.ACCEPT

    @property
    def accepted(self) -> bool:
        return not self.reasons

    def reason_keys(self) -> list:
        return [(r.check.value, r.cycle) for r in self.reasons]

    def to_record(self, name: Optional[str] = None) -> dict:
        rec = {
            "type": "audit",
            "client": self.client,
            "t0": self.t0,
            "ta": self.ta,
            "verdict": self.verdict.value,
            "reasons": [[r.check.value, r.cycle, r.detail] for r in self.reasons],
        }
        if name is not None:
            rec["name"] = name
        return rec


@dataclass(frozen=True)
class AuditEvidence:
    """What a client hands over when audited at ``t0``.

    ``state`` is the full state at the window start; ``diffs`` and ``messages``
    are keyed by the cycle they were applied in.  ``lossy`` lists cycles whose
    server response never arrived.
    """

    t0: int
    state: Optional[ConcreteState]
    diffs: Mapping[int, ConcreteDiff] = field(default_factory=dict)
    messages: Mapping[int, AuthorizedMessage] = field(default_factory=dict)
    m0: Optional[AuthorizedMessage] = None
    lossy: frozenset = frozenset()
