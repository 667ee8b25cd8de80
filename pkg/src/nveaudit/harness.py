"""Scenario files, the lockstep simulation driver and run metrics.

Scenario files are line oriented::

    [world]
    block = 4
    ########
    #..##..#
    #..##..#
    ########

    [protocol]
    l = 10
    cycles = 200
    seed = 1

    [network]
    drop = 0.0
    max_delay = 0

    [audit]
    strategy = every        # or random:0.3, or ondemand:40,50
    seed = 0

    [client alice]
    spawn = 0,0
    waypoints = 1,1 2,2
    cheat = wallhack@37     # outofgamma@C, rewrite@C:ALTERED, forge@C, fakeq@B
    late_diff = 42          # fault injection: deliver D_42 after its deadline
    leave = 150

Lines without ``=`` inside ``[world]`` are map rows.  ``#`` after whitespace
starts a comment; map rows themselves are never stripped of ``#``.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

from .audit_server import AuditServer, AuditStrategy, schedule_audits
from .client import BehaviorScript, CheatKind, CheatProfile, Client, HONEST
from .codec import Kind, WireMessage, encode_diff
from .mac import generate_key
from .netsim import Envelope, Fabric, FabricConfig, LateDelivery
from .records import AuditReport
from .state_server import StateServer
from .world import CellGrid, RegionId, WorldError

STATE_SERVER_ID = 2**64 - 1
AUDIT_SERVER_ID = 2**64 - 2


class ScenarioError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class InvariantViolation(RuntimeError):
    """The simulation broke one of its own guarantees."""


@dataclass(frozen=True)
class ClientSpec:
    name: str
    spawn: RegionId
    script: BehaviorScript = BehaviorScript()
    cheat: CheatProfile = HONEST
    late_diffs: tuple = ()
    leave: Optional[int] = None


@dataclass(frozen=True)
class Scenario:
    grid: CellGrid
    l: int = 10
    cycles: int = 100
    seed: int = 0
    drop: float = 0.0
    max_delay: int = 0
    audit: AuditStrategy = AuditStrategy()
    clients: tuple = ()

    def __post_init__(self):
        if self.l < 2:
            raise ScenarioError(f"audit cycle length l must be >= 2, got {self.l}")
        if self.cycles < 3 * self.l:
            raise ScenarioError(f"cycles must be >= 3l = {3 * self.l}, got {self.cycles}")
        names = [c.name for c in self.clients]
        if len(set(names)) != len(names):
            raise ScenarioError("duplicate client name")
        for c in self.clients:
            if not self.grid.has_region(c.spawn) or not self.grid.free_cells(c.spawn):
                raise ScenarioError(f"client {c.name}: spawn region {tuple(c.spawn)} has no free cell")

    def client_ids(self) -> dict:
        return {spec.name: i + 1 for i, spec in enumerate(self.clients)}

    def with_cheat(self, name: str, cheat: CheatProfile) -> "Scenario":
        return replace(
            self,
            clients=tuple(replace(c, cheat=cheat) if c.name == name else c for c in self.clients),
        )


def _pairs(text: str, line: int) -> tuple:
    out = []
    for tok in text.split():
        try:
            a, b = tok.split(",")
            out.append((int(a), int(b)))
        except ValueError:
            raise ScenarioError(f"expected x,y pairs, got {tok!r}", line) from None
    return tuple(out)


def _cheat(text: str, line: int) -> CheatProfile:
    text = text.strip()
    if text in ("", "none"):
        return HONEST
    try:
        kind, _, when = text.partition("@")
        kind = CheatKind(kind)
        if kind is CheatKind.REWRITE_HISTORY:
            c, altered = when.split(":")
            return CheatProfile(kind, int(c), int(altered))
        return CheatProfile(kind, int(when))
    except ValueError as e:
        raise ScenarioError(f"bad cheat profile {text!r}: {e}", line) from None


def _strategy(text: str, seed: int, line: int) -> AuditStrategy:
    kind, _, arg = text.strip().partition(":")
    try:
        if kind == "every":
            return AuditStrategy.every()
        if kind == "random":
            return AuditStrategy.random(float(arg), seed)
        if kind == "ondemand":
            return AuditStrategy.on_demand([int(x) for x in arg.split(",") if x.strip()])
    except ValueError as e:
        raise ScenarioError(f"bad audit strategy {text!r}: {e}", line) from None
    raise ScenarioError(f"unknown audit strategy {text!r}", line)


def _strip_comment(raw: str) -> str:
    for i, ch in enumerate(raw):
        if ch == "#" and i > 0 and raw[i - 1].isspace():
            return raw[:i].rstrip()
    return raw.rstrip()


def parse_scenario(text: str) -> Scenario:
    section = None
    rows: list = []
    block = None
    values: dict = {}
    clients: list = []
    first_line: dict = {}

    def as_int(v, line):
        try:
            return int(v)
        except ValueError:
            raise ScenarioError(f"expected an integer, got {v!r}", line) from None

    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        if not stripped or (stripped.startswith("#") and section != "world"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            header = stripped[1:-1].split()
            if header[0] == "client":
                if len(header) != 2:
                    raise ScenarioError("client section needs exactly one name", lineno)
                section = "client"
                clients.append({"name": header[1], "line": lineno})
            elif header[0] in ("world", "protocol", "network", "audit") and len(header) == 1:
                section = header[0]
                first_line.setdefault(section, lineno)
            else:
                raise ScenarioError(f"unknown section {stripped}", lineno)
            continue
        if section is None:
            raise ScenarioError("content before the first section", lineno)
        if section == "world" and "=" not in stripped:
            rows.append((lineno, stripped))
            continue
        line = _strip_comment(raw).strip()
        if "=" not in line:
            raise ScenarioError(f"expected key = value, got {line!r}", lineno)
        key, _, value = (s.strip() for s in line.partition("="))
        if section == "world":
            if key != "block":
                raise ScenarioError(f"unknown world key {key!r}", lineno)
            block = as_int(value, lineno)
        elif section == "client":
            spec = clients[-1]
            if key in ("spawn",):
                pair = _pairs(value, lineno)
                if len(pair) != 1:
                    raise ScenarioError("spawn takes one rx,ry pair", lineno)
                spec["spawn"] = RegionId(*pair[0])
                spec["spawn_line"] = lineno
            elif key in ("waypoints", "moves"):
                spec[key] = _pairs(value, lineno)
            elif key == "cheat":
                spec["cheat"] = _cheat(value, lineno)
            elif key == "late_diff":
                spec["late_diffs"] = tuple(as_int(v, lineno) for v in value.replace(",", " ").split())
            elif key == "leave":
                spec["leave"] = as_int(value, lineno)
            else:
                raise ScenarioError(f"unknown client key {key!r}", lineno)
        else:
            allowed = {
                "protocol": ("l", "cycles", "seed"),
                "network": ("drop", "max_delay"),
                "audit": ("strategy", "seed"),
            }[section]
            if key not in allowed:
                raise ScenarioError(f"unknown {section} key {key!r}", lineno)
            values[(section, key)] = (value, lineno)

    if not rows:
        raise ScenarioError("scenario has no map")
    if block is None:
        raise ScenarioError("world section needs a block size", first_line.get("world"))
    try:
        grid = CellGrid.from_ascii([r for _, r in rows], block)
    except WorldError as e:
        raise ScenarioError(str(e), rows[0][0]) from None

    def get(section, key, default, conv):
        if (section, key) not in values:
            return default
        v, line = values[(section, key)]
        try:
            return conv(v)
        except ValueError:
            raise ScenarioError(f"bad value for {key}: {v!r}", line) from None

    audit_seed = get("audit", "seed", 0, int)
    strategy = AuditStrategy.every()
    if ("audit", "strategy") in values:
        v, line = values[("audit", "strategy")]
        strategy = _strategy(v, audit_seed, line)

    specs = []
    for c in clients:
        if "spawn" not in c:
            raise ScenarioError(f"client {c['name']} needs a spawn region", c["line"])
        if not grid.has_region(c["spawn"]) or not grid.free_cells(c["spawn"]):
            raise ScenarioError(
                f"client {c['name']}: spawn region {tuple(c['spawn'])} has no free cell", c["spawn_line"]
            )
        script = BehaviorScript(moves=c.get("moves", ()), waypoints=c.get("waypoints", ()))
        specs.append(
            ClientSpec(
                c["name"], c["spawn"], script, c.get("cheat", HONEST),
                c.get("late_diffs", ()), c.get("leave"),
            )
        )

    l_line = values.get(("protocol", "l"), (None, first_line.get("protocol")))[1]
    cycles_line = values.get(("protocol", "cycles"), (None, l_line))[1]
    try:
        return Scenario(
            grid=grid,
            l=get("protocol", "l", 10, int),
            cycles=get("protocol", "cycles", 100, int),
            seed=get("protocol", "seed", 0, int),
            drop=get("network", "drop", 0.0, float),
            max_delay=get("network", "max_delay", 0, int),
            audit=strategy,
            clients=tuple(specs),
        )
    except ScenarioError as e:
        if e.line is None:
            line = cycles_line if str(e).startswith("cycles") else l_line
            raise ScenarioError(str(e), line) from None
        raise


def load_scenario(name: str) -> Scenario:
    """Load one of the bundled scenarios (``tunnel`` or ``arena``)."""
    text = resources.files("nveaudit").joinpath("scenarios", f"{name}.scn").read_text()
    return parse_scenario(text)


def tunnel_scenario(cheat: CheatProfile = HONEST, **overrides) -> Scenario:
    """The canonical tunnel world with ``cheat`` given to alice."""
    return replace(load_scenario("tunnel").with_cheat("alice", cheat), **overrides)


@dataclass
class RunMetrics:
    scenario: Scenario
    names: dict
    reports: list = field(default_factory=list)
    traffic: list = field(default_factory=list)
    max_diff_bytes: int = 0
    max_msg_bytes: int = 0
    violations: list = field(default_factory=list)
    clients: dict = field(default_factory=dict)
    auditor: Optional[AuditServer] = None
    server: Optional[StateServer] = None
    evidence: list = field(default_factory=list)  # (client, evidence, live state)

    def reports_for(self, name: str) -> list:
        cid = {v: k for k, v in self.names.items()}[name]
        return [r for r in self.reports if r.client == cid]

    def first_reject(self, name: str) -> Optional[AuditReport]:
        return next((r for r in self.reports_for(name) if not r.accepted), None)

    def mac_bytes(self, endpoint: int, kinds, first: int, last: int) -> int:
        """MAC tag bytes sent by ``endpoint`` in cycles ``first..last``."""
        kinds = set(kinds)
        return sum(
            r.mac_bytes for r in self.traffic
            if r.src == endpoint and r.kind in kinds and first <= r.cycle <= last
        )

    def _endpoint_name(self, ep: int) -> str:
        if ep == STATE_SERVER_ID:
            return "state-server"
        if ep == AUDIT_SERVER_ID:
            return "audit-server"
        return self.names[ep]

    def records(self) -> list:
        sc = self.scenario
        out = [{
            "type": "scenario",
            "cycles": sc.cycles,
            "l": sc.l,
            "seed": sc.seed,
            "drop": sc.drop,
            "audit": sc.audit.kind.value,
            "clients": [c.name for c in sc.clients],
        }]
        out.extend(r.to_record(self.names[r.client]) for r in self.reports)
        totals: dict = {}
        for rec in self.traffic:
            key = (self._endpoint_name(rec.src), rec.kind.name)
            frames, nbytes, tags = totals.get(key, (0, 0, 0))
            totals[key] = (frames + 1, nbytes + rec.frame_bytes, tags + rec.mac_bytes)
        for (ep, kind), (frames, nbytes, tags) in sorted(totals.items()):
            out.append({"type": "traffic", "endpoint": ep, "kind": kind,
                        "frames": frames, "bytes": nbytes, "mac_bytes": tags})
        audit_sizes = [r.frame_bytes for r in self.traffic if r.kind is Kind.AUDIT_RESPONSE]
        out.append({
            "type": "summary",
            "audits": len(self.reports),
            "rejects": sum(not r.accepted for r in self.reports),
            "max_diff_bytes": self.max_diff_bytes,
            "max_msg_bytes": self.max_msg_bytes,
            "max_audit_bytes": max(audit_sizes, default=0),
            "violations": list(self.violations),
        })
        return out

    def lines(self) -> list:
        return [json.dumps(r, sort_keys=True) for r in self.records()]


def _check_buffer(client: Client, l: int) -> Optional[str]:
    t = client.t
    buf = client.buffer
    if len(buf.full_states) > 3 or len(buf.diffs) > 3 * l:
        return f"client {client.id}: buffer too large at cycle {t}"
    if t % l == 0 and t >= 3 * l:
        if sorted(buf.full_states) != [t - 2 * l, t - l, t]:
            return f"client {client.id}: full states {sorted(buf.full_states)} at cycle {t}"
        if sorted(buf.diffs) != list(range(t - 2 * l + 1, t + 1)):
            return f"client {client.id}: diff window wrong at cycle {t}"
    return None


def run(scenario: Scenario, strict: bool = False, keep_evidence: bool = False) -> RunMetrics:
    """Simulate ``scenario`` end to end.

    With ``strict`` an internal invariant violation raises
    ``InvariantViolation``; otherwise it is recorded in the metrics.
    ``keep_evidence`` retains every audit response next to the live client
    state it was cut from.
    """
    sc = scenario
    l = sc.l
    ids = sc.client_ids()
    names = {cid: name for name, cid in ids.items()}
    specs = {ids[s.name]: s for s in sc.clients}

    key_rng = random.Random(f"keys:{sc.seed}")
    server_key = generate_key(key_rng)
    client_keys = {cid: generate_key(key_rng) for cid in sorted(specs)}

    late = tuple(
        LateDelivery(cid, Kind.DIFF_COMMIT, c) for cid, s in specs.items() for c in s.late_diffs
    )
    fabric = Fabric(
        FabricConfig(sc.drop, sc.max_delay, sc.seed, late),
        [STATE_SERVER_ID, AUDIT_SERVER_ID, *specs],
    )
    server = StateServer(sc.grid, server_key, sc.seed)
    auditor = AuditServer(l, server_key, allow_lossy=sc.drop > 0 or sc.max_delay > 0)
    clients = {
        cid: Client(cid, l, client_keys[cid], specs[cid].script, specs[cid].cheat)
        for cid in sorted(specs)
    }
    metrics = RunMetrics(sc, names, clients=clients, auditor=auditor, server=server)
    for cid in clients:
        auditor.register(cid, client_keys[cid])
    active = set(clients)

    def violation(msg):
        if strict:
            raise InvariantViolation(msg)
        metrics.violations.append(msg)

    def send(kind, src, dst, cycle, body, deadline=None):
        fabric.send(Envelope(WireMessage(kind, src, cycle, body), src, dst, fabric.clock, deadline))

    def send_commitments(cid, commitments):
        for cm in commitments:
            if cm.kind == "diff":
                send(Kind.DIFF_COMMIT, cid, AUDIT_SERVER_ID, cm.cycle, cm.tag, fabric.clock + 1)
            else:
                send(Kind.STATE_COMMIT, cid, AUDIT_SERVER_ID, cm.cycle, cm.tag, fabric.clock + l)

    def auditor_intake(envs):
        for env in envs:
            msg = env.message
            if msg.kind is Kind.DIFF_COMMIT:
                auditor.record_commitment(msg.sender, "diff", msg.cycle, msg.body, fabric.clock)
            elif msg.kind is Kind.STATE_COMMIT:
                auditor.record_commitment(msg.sender, "state", msg.cycle, msg.body, fabric.clock)

    # Initialize: everyone joins in cycle 0.
    for cid, spec in specs.items():
        send(Kind.INIT_REQUEST, cid, STATE_SERVER_ID, 0, spec.spawn, 1)
    joins = [(e.message.sender, e.message.body) for e in fabric.collect(STATE_SERVER_ID)]
    for cid, m0 in server.handle_inits(sorted(joins), sc.seed).items():
        send(Kind.INIT_RESPONSE, STATE_SERVER_ID, cid, 0, m0, 1)
    for cid, client in clients.items():
        for env in fabric.collect(cid):
            if env.message.kind is Kind.INIT_RESPONSE:
                q0 = client.do_init(env.message.body)
                if q0 is not None:
                    send_commitments(cid, [q0])
        if not client.joined:
            active.discard(cid)
    auditor_intake(fabric.collect(AUDIT_SERVER_ID))
    auditor.close_cycle(0)

    for c in range(1, sc.cycles + 1):
        # Anything delivered late belongs to an earlier cycle.
        for dst, envs in fabric.advance_cycle().items():
            if dst == AUDIT_SERVER_ID:
                auditor_intake(envs)

        for cid in sorted(active):
            send(Kind.UPDATE_REQUEST, cid, STATE_SERVER_ID, c, clients[cid].request_update())

        requests = sorted(
            (e.message for e in fabric.collect(STATE_SERVER_ID)
             if e.message.kind is Kind.UPDATE_REQUEST and e.message.cycle == c),
            key=lambda m: m.sender,
        )
        for msg in requests:
            reply = server.handle_update(msg.sender, msg.body)
            send(Kind.UPDATE_RESPONSE, STATE_SERVER_ID, msg.sender, c, reply)

        for cid in sorted(active):
            client = clients[cid]
            reply = None
            for env in fabric.collect(cid):
                m = env.message
                if m.kind is Kind.UPDATE_RESPONSE and m.cycle == c and m.body is not None:
                    reply = m.body
            if reply is not None:
                metrics.max_msg_bytes = max(metrics.max_msg_bytes, len(reply))
            send_commitments(cid, client.complete_update(reply))
            metrics.max_diff_bytes = max(metrics.max_diff_bytes, len(encode_diff(client.buffer.diffs[c])))
            if client.cheat.kind is CheatKind.NONE:
                problem = _check_buffer(client, l)
                if problem:
                    violation(problem)

        auditor_intake(fabric.collect(AUDIT_SERVER_ID))

        for cid in sorted(active):
            if specs[cid].leave == c:
                active.discard(cid)
                server.close_session(cid)
                auditor.retire(cid, c)
        auditor.close_cycle(c)

        if c % l == 0 and c >= 2 * l:
            for cid in schedule_audits(sc.audit, c, sorted(active)):
                send(Kind.AUDIT_REQUEST, AUDIT_SERVER_ID, cid, c, c, c + 1)
                for env in fabric.collect(cid):
                    if env.message.kind is Kind.AUDIT_REQUEST:
                        evidence = clients[cid].answer_audit(env.message.body)
                        if keep_evidence:
                            metrics.evidence.append((cid, evidence, clients[cid].state))
                        send(Kind.AUDIT_RESPONSE, cid, AUDIT_SERVER_ID, c, evidence, c + 1)
                for env in fabric.collect(AUDIT_SERVER_ID):
                    msg = env.message
                    if msg.kind is Kind.AUDIT_RESPONSE:
                        report = auditor.run_audit(msg.sender, msg.body.t0, msg.body)
                        metrics.reports.append(report)
                        send(Kind.AUDIT_VERDICT, AUDIT_SERVER_ID, msg.sender, c, report)
                    else:
                        auditor_intake([env])
                fabric.collect(cid)

    metrics.traffic = list(fabric.traffic)
    return metrics


@dataclass(frozen=True)
class DetectionResult:
    q: float
    trials: int
    detected: int
    analytic: float

    @property
    def rate(self) -> float:
        return self.detected / self.trials if self.trials else 0.0


def cheat_cycles(l: int, cycles: int) -> list:
    return [c for c in range(2 * l, cycles - 3 * l + 1) if c % l]


def detection_experiment(
    q: float,
    trials: int = 10_000,
    l: int = 10,
    cycles: Optional[int] = None,
    seed: int = 0,
    full_replay: bool = False,
) -> DetectionResult:
    """Estimate how often a single wallhack is caught under random audits.

    Each trial draws a cheat cycle and an independent audit schedule.  An audit
    never changes what the client does, so by default each cheat cycle is
    simulated once with every boundary audited and the trial is decided by
    which of those boundaries the schedule picks.  ``full_replay`` simulates
    every trial end to end instead; it gives the same answer, much slower.
    """
    cycles = cycles if cycles is not None else 8 * l
    candidates = cheat_cycles(l, cycles)
    if not candidates:
        raise ValueError("no non-boundary cheat cycles in [2l, cycles - 3l]")
    base = tunnel_scenario(l=l, cycles=cycles, seed=seed)
    alice = base.client_ids()["alice"]
    boundaries = [b for b in range(2 * l, cycles + 1, l)]

    rejecting: dict = {}
    if not full_replay:
        for c in candidates:
            m = run(base.with_cheat("alice", CheatProfile(CheatKind.WALLHACK, c)))
            rejecting[c] = {r.t0 for r in m.reports_for("alice") if not r.accepted}

    rng = random.Random(f"detect:{seed}")
    detected = 0
    for trial in range(trials):
        c = rng.choice(candidates)
        strategy = AuditStrategy.random(q, seed=seed * 1_000_003 + trial)
        if full_replay:
            sc = replace(base.with_cheat("alice", CheatProfile(CheatKind.WALLHACK, c)), audit=strategy)
            caught = run(sc).first_reject("alice") is not None
        else:
            caught = any(
                b in rejecting[c] and alice in schedule_audits(strategy, b, [alice])
                for b in boundaries
            )
        detected += caught
    return DetectionResult(q, trials, detected, 1 - (1 - q) ** 2)
