import random

import numpy as np
import pytest

from nveaudit.audit_server import (
    AuditServer,
    AuditStrategy,
    AuditTooEarly,
    schedule_audits,
    window_start,
)
from nveaudit.client import Client
from nveaudit.mac import generate_key
from nveaudit.records import AuditEvidence, Check
from nveaudit.state_server import StateServer
from nveaudit.world import ConcreteDiff, Position


def test_window_start_values():
    assert window_start(20, 10) == 0
    assert window_start(29, 10) == 0
    assert window_start(30, 10) == 10
    with pytest.raises(AuditTooEarly):
        window_start(19, 10)


def test_random_schedule_rate_and_purity():
    s = AuditStrategy.random(0.3, seed=4)
    picks = [bool(schedule_audits(s, b, [1])) for b in range(0, 100_000, 10)]
    assert abs(np.mean(picks) - 0.3) <= 0.02
    assert schedule_audits(s, 50, [1, 2, 3]) == schedule_audits(s, 50, [3, 2, 1])


def test_every_and_on_demand():
    assert schedule_audits(AuditStrategy.every(), 20, [3, 1]) == [1, 3]
    s = AuditStrategy.on_demand([40, (50, 2)])
    assert schedule_audits(s, 40, [1, 2]) == [1, 2]
    assert schedule_audits(s, 50, [1, 2]) == [2]
    assert schedule_audits(s, 60, [1, 2]) == []
    with pytest.raises(ValueError):
        AuditStrategy.random(1.5)


def auditor():
    a = AuditServer(10, generate_key(random.Random(0)))
    a.register(1, generate_key(random.Random(1)))
    return a


def test_diff_commit_deadline_boundary():
    a = auditor()
    assert a.record_commitment(1, "diff", 42, bytes(16), 42) is None
    r = a.record_commitment(1, "diff", 43, bytes([1]) * 16, 44)
    assert r.check is Check.DEADLINE and r.cycle == 43
    assert 43 in a.logs[1].diffs  # late commitments are still kept


def test_state_commit_deadline_boundary():
    a = auditor()
    assert a.record_commitment(1, "state", 10, bytes(16), 19) is None
    r = a.record_commitment(1, "state", 20, bytes(16), 30)
    assert r.check is Check.DEADLINE and r.cycle == 20


def test_equivocation_flag():
    a = auditor()
    a.record_commitment(1, "diff", 5, bytes(16), 5)
    assert a.record_commitment(1, "diff", 5, bytes(16), 5) is None
    r = a.record_commitment(1, "diff", 5, b"\x01" * 16, 5)
    assert r.check is Check.EQUIVOCATION


def test_close_cycle_flags_missing():
    a = auditor()
    a.record_commitment(1, "state", 0, bytes(16), 0)
    assert a.close_cycle(0) == []
    raised = a.close_cycle(1)
    assert [(r.check, r.cycle) for r in raised] == [(Check.DEADLINE, 1)]
    for c in range(2, 10):
        a.record_commitment(1, "diff", c, bytes([c]) * 16, c)
        assert a.close_cycle(c) == []
    a.record_commitment(1, "diff", 10, bytes([10]) * 16, 10)
    for c in range(11, 19):
        a.record_commitment(1, "diff", c, bytes([c]) * 16, c)
        assert a.close_cycle(c) == []
    a.record_commitment(1, "diff", 19, bytes([19]) * 16, 19)
    assert [(r.check, r.cycle) for r in a.close_cycle(19)] == [(Check.DEADLINE, 10)]


def honest_session(cycles=30):
    rng = random.Random(0)
    from nveaudit.world import tunnel_grid

    server_key = generate_key(rng)
    server = StateServer(tunnel_grid(), server_key)
    client = Client(1, 10, generate_key(rng))
    a = AuditServer(10, server_key)
    a.register(1, client.key)
    q0 = client.do_init(server.handle_init(1, (0, 0), 0))
    a.record_commitment(1, q0.kind, q0.cycle, q0.tag, 0)
    for c in range(1, cycles + 1):
        for cm in client.do_cycle(lambda d: server.handle_update(1, d)):
            a.record_commitment(1, cm.kind, cm.cycle, cm.tag, c)
        a.close_cycle(c)
    return a, client


def test_honest_audit_accepts_and_checks_m0():
    a, client = honest_session(20)
    rep = a.run_audit(1, 20, client.answer_audit(20))
    assert rep.accepted and rep.ta == 0
    a, client = honest_session()
    rep = a.run_audit(1, 30, client.answer_audit(30))
    assert rep.accepted and rep.ta == 10


def test_tampered_evidence_is_caught():
    a, client = honest_session()
    ev = client.answer_audit(30)
    diffs = dict(ev.diffs)
    diffs[15] = ConcreteDiff({1: Position(1, 1)}) if diffs[15].moves[1] != Position(1, 1) else ConcreteDiff({1: Position(2, 1)})
    rep = a.run_audit(1, 30, AuditEvidence(ev.t0, ev.state, diffs, ev.messages, ev.m0, ev.lossy))
    assert not rep.accepted
    assert ("Step6b-MAC-D", 15) in rep.reason_keys()
    msgs = dict(ev.messages)
    del msgs[12]
    rep = a.run_audit(1, 30, AuditEvidence(ev.t0, ev.state, ev.diffs, msgs, ev.m0, ev.lossy))
    assert ("Step6a-MAC-M", 12) in rep.reason_keys()
    rep = a.run_audit(1, 20, AuditEvidence(20, ev.state, {}, {}, None, frozenset()))
    assert not rep.accepted


def test_missing_state_evidence():
    a, client = honest_session()
    ev = client.answer_audit(30)
    rep = a.run_audit(1, 30, AuditEvidence(30, None, ev.diffs, ev.messages, None, ev.lossy))
    assert rep.reason_keys() == [("Step7-MAC-Q", 10)]
