import json
from dataclasses import replace

import pytest

from nveaudit import cli
from nveaudit.audit_server import AuditServer, AuditStrategy
from nveaudit.harness import (
    ScenarioError,
    detection_experiment,
    load_scenario,
    parse_scenario,
    run,
    tunnel_scenario,
)
from nveaudit.records import AuditEvidence
from nveaudit.mac import AuthorizedMessage

GOOD = """\
[world]
block = 2
####
#..#
#..#
####

[protocol]
l = 3
cycles = 20   # trailing comment
seed = 4

[audit]
strategy = random:0.5
seed = 9

[client a]
spawn = 0,0
waypoints = 1,1 1,2
"""


def test_parse_good_scenario():
    sc = parse_scenario(GOOD)
    assert (sc.l, sc.cycles, sc.seed) == (3, 20, 4)
    assert sc.audit == AuditStrategy.random(0.5, 9)
    assert sc.grid.to_ascii().splitlines() == ["####", "#..#", "#..#", "####"]
    assert sc.clients[0].script.waypoints == ((1, 1), (1, 2))


@pytest.mark.parametrize("edit, line", [
    (("cycles = 20", "cycles = many"), 10),
    (("l = 3", "l = 1"), 9),
    (("[audit]", "[auditing]"), 13),
    (("spawn = 0,0", "spawn = 0"), 18),
    (("spawn = 0,0", "spawn = 7,7"), 18),
    (("strategy = random:0.5", "strategy = sometimes"), 14),
    (("waypoints", "flavour"), 19),
])
def test_parse_errors_carry_line_numbers(edit, line):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(GOOD.replace(*edit))
    assert exc.value.line == line


def test_cycles_must_cover_three_audit_cycles():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(GOOD.replace("cycles = 20", "cycles = 8"))
    assert exc.value.line == 10


def test_bundled_scenarios_load():
    assert load_scenario("tunnel").grid.width == 8
    assert len(load_scenario("arena").clients) == 3


def test_honest_run_on_lossy_network():
    m = run(tunnel_scenario(drop=0.2, max_delay=1, seed=5))
    assert m.reports and all(r.accepted for r in m.reports)
    assert not m.violations


def test_small_scenario_runs_clean():
    m = run(parse_scenario(GOOD), strict=True)
    assert all(r.accepted for r in m.reports)


def test_leave_stops_audits():
    sc = tunnel_scenario()
    sc = replace(sc, clients=(replace(sc.clients[0], leave=55), sc.clients[1]))
    m = run(sc)
    assert max(r.t0 for r in m.reports_for("alice")) == 50
    assert all(r.accepted for r in m.reports)


def test_records_shape():
    recs = run(tunnel_scenario(cycles=40)).records()
    assert recs[0]["type"] == "scenario"
    assert recs[-1]["type"] == "summary" and recs[-1]["rejects"] == 0
    assert {r["type"] for r in recs} == {"scenario", "audit", "traffic", "summary"}


def test_detection_full_replay_agrees():
    fast = detection_experiment(0.5, trials=40, seed=2)
    slow = detection_experiment(0.5, trials=40, seed=2, full_replay=True)
    assert fast == slow


def test_forged_m0_is_caught():
    m = run(tunnel_scenario(cycles=30), keep_evidence=True)
    cid, ev, _ = next(e for e in m.evidence if e[1].t0 == 20)
    forged = AuthorizedMessage(ev.m0.payload, bytes(16))
    auditor: AuditServer = m.auditor
    rep = auditor.run_audit(cid, 20, AuditEvidence(20, ev.state, ev.diffs, ev.messages, forged, ev.lossy))
    assert rep.reason_keys() == [("Step7-MAC-M0", 0)]


# -- CLI ------------------------------------------------------------------------

def test_cli_run(tmp_path, capsys):
    scn = tmp_path / "s.scn"
    scn.write_text(GOOD)
    assert cli.main(["run", str(scn)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert json.loads(lines[0])["type"] == "scenario"
    out = tmp_path / "out.jsonl"
    assert cli.main(["run", str(scn), "--seed", "7", "--audit-strategy", "every", "--out", str(out)]) == 0
    assert json.loads(out.read_text().splitlines()[0])["seed"] == 7


def test_cli_errors(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "missing.scn")]) == 2
    bad = tmp_path / "bad.scn"
    bad.write_text(GOOD.replace("l = 3", "l = x"))
    assert cli.main(["run", str(bad)]) == 2
    assert "line 9" in capsys.readouterr().err


def test_cli_audit_demo(capsys):
    assert cli.main(["audit-demo"]) == 0
    out = capsys.readouterr().out
    assert "Step5-rules@37" in out and "first rejection at t0=40" in out


def test_cli_detect_and_selftest(capsys):
    assert cli.main(["detect", "--q", "0.5", "--trials", "200"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["q"] == 0.5 and rec["analytic"] == 0.75
    assert cli.main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out
