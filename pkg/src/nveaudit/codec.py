"""Canonical byte encodings for states, diffs and protocol frames.

Every integer is an unsigned 64-bit little-endian value (cells and a few flags
are single bytes) and every map is written sorted by client id, so equal values
always produce equal bytes.  These bytes are what the MACs cover.

State layout::

    width | height | block | cells (1 byte each, row-major) |
    avatar count | (client | x | y)* | cycle

Frame layout::

    kind:u8 | sender | cycle | body length | body
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Any

from .mac import TAG_SIZE, AuthorizedMessage
from .records import CHECK_CODES, AuditEvidence, AuditReport, Check, Reason
from .world import (
    AbstractDiff,
    CellGrid,
    ConcreteDiff,
    ConcreteState,
    Position,
    RegionId,
    WorldError,
)

_U64 = struct.Struct("<Q")
U64_MAX = 2**64 - 1
NONCE_SIZE = 8
FRAME_HEADER_SIZE = 1 + 8 + 8 + 8

_CHECKS = list(Check)


class DecodeError(ValueError):
    """Bytes that do not parse under the expected schema."""


def u64(value: int) -> bytes:
    if not 0 <= value <= U64_MAX:
        raise ValueError(f"{value} does not fit in u64")
    return _U64.pack(value)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(bytes(data))
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError(f"truncated input at offset {self.pos}, wanted {n} bytes")
        out = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u64())

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")


def _blob(b: bytes) -> bytes:
    return u64(len(b)) + b


def _entries(moves) -> bytes:
    out = [u64(len(moves))]
    for c in sorted(moves):
        a, b = moves[c]
        out.append(u64(c) + u64(a) + u64(b))
    return b"".join(out)


def _read_entries(r: _Reader) -> dict:
    n = r.u64()
    out = {}
    last = -1
    for _ in range(n):
        c, a, b = r.u64(), r.u64(), r.u64()
        if c <= last:
            raise DecodeError("map entries not strictly sorted by client id")
        last = c
        out[c] = (a, b)
    return out


def encode_state(s: ConcreteState) -> bytes:
    g = s.grid
    return b"".join(
        [
            u64(g.width),
            u64(g.height),
            u64(g.block),
            bytes(int(c) for c in g.cells),
            _entries(s.avatars),
            u64(s.cycle),
        ]
    )


def _read_state(r: _Reader) -> ConcreteState:
    width, height, block = r.u64(), r.u64(), r.u64()
    if width * height > 1 << 24:
        raise DecodeError("grid too large")
    raw = r.take(width * height)
    if any(b > 1 for b in raw):
        raise DecodeError("invalid cell byte")
    try:
        grid = CellGrid(width, height, tuple(raw), block)
    except WorldError as e:
        raise DecodeError(str(e)) from e
    avatars = {c: Position(*p) for c, p in _read_entries(r).items()}
    return ConcreteState(grid, avatars, r.u64())


def decode_state(data: bytes) -> ConcreteState:
    r = _Reader(data)
    s = _read_state(r)
    r.finish()
    return s


def encode_diff(d: ConcreteDiff) -> bytes:
    return _entries(d.moves)


def decode_diff(data: bytes) -> ConcreteDiff:
    r = _Reader(data)
    moves = _read_entries(r)
    r.finish()
    try:
        return ConcreteDiff({c: Position(*p) for c, p in moves.items()})
    except WorldError as e:
        raise DecodeError(str(e)) from e


def encode_abstract_diff(d: AbstractDiff) -> bytes:
    return _entries(d.moves)


def decode_abstract_diff(data: bytes) -> AbstractDiff:
    r = _Reader(data)
    moves = _read_entries(r)
    r.finish()
    try:
        return AbstractDiff({c: RegionId(*m) for c, m in moves.items()})
    except WorldError as e:
        raise DecodeError(str(e)) from e


def update_payload(d: AbstractDiff, nonce: int) -> bytes:
    """Payload of a server update message: the abstract diff then the nonce."""
    return encode_abstract_diff(d) + u64(nonce)


def split_update_payload(payload: bytes) -> tuple:
    if len(payload) < NONCE_SIZE:
        raise DecodeError("update payload shorter than a nonce")
    body, nonce = payload[:-NONCE_SIZE], payload[-NONCE_SIZE:]
    return decode_abstract_diff(body), _U64.unpack(nonce)[0]


def init_payload(s: ConcreteState, nonce: int) -> bytes:
    return encode_state(s) + u64(nonce)


def split_init_payload(payload: bytes) -> tuple:
    if len(payload) < NONCE_SIZE:
        raise DecodeError("init payload shorter than a nonce")
    body, nonce = payload[:-NONCE_SIZE], payload[-NONCE_SIZE:]
    return decode_state(body), _U64.unpack(nonce)[0]


class Kind(IntEnum):
    INIT_REQUEST = 1
    INIT_RESPONSE = 2
    UPDATE_REQUEST = 3
    UPDATE_RESPONSE = 4
    DIFF_COMMIT = 5
    STATE_COMMIT = 6
    AUDIT_REQUEST = 7
    AUDIT_RESPONSE = 8
    AUDIT_VERDICT = 9


@dataclass(frozen=True)
class WireMessage:
    """One protocol frame.

    ``body`` depends on ``kind``: a ``RegionId`` for init requests, an
    ``AuthorizedMessage`` (or ``None`` for a rejection) for responses, an
    ``AbstractDiff`` for update requests, a 16-byte tag for commitments, the
    audited cycle for audit requests, ``AuditEvidence`` and ``AuditReport``
    for the last two.
    """

    kind: Kind
    sender: int
    cycle: int
    body: Any


def _enc_auth(m: AuthorizedMessage) -> bytes:
    return _blob(m.payload) + m.tag


def _read_auth(r: _Reader) -> AuthorizedMessage:
    payload = r.blob()
    return AuthorizedMessage(payload, r.take(TAG_SIZE))


def _enc_optional_auth(m) -> bytes:
    return b"\x00" if m is None else b"\x01" + _enc_auth(m)


def _read_optional_auth(r: _Reader):
    flag = r.u8()
    if flag == 0:
        return None
    if flag != 1:
        raise DecodeError(f"bad presence flag {flag}")
    return _read_auth(r)


def _enc_evidence(ev: AuditEvidence) -> bytes:
    out = [u64(ev.t0)]
    out.append(b"\x00" if ev.state is None else b"\x01" + _blob(encode_state(ev.state)))
    out.append(u64(len(ev.diffs)))
    for c in sorted(ev.diffs):
        out.append(u64(c) + _blob(encode_diff(ev.diffs[c])))
    out.append(u64(len(ev.messages)))
    for c in sorted(ev.messages):
        out.append(u64(c) + _enc_auth(ev.messages[c]))
    out.append(_enc_optional_auth(ev.m0))
    out.append(u64(len(ev.lossy)))
    out.extend(u64(c) for c in sorted(ev.lossy))
    return b"".join(out)


def _read_evidence(r: _Reader) -> AuditEvidence:
    t0 = r.u64()
    flag = r.u8()
    if flag not in (0, 1):
        raise DecodeError(f"bad presence flag {flag}")
    state = decode_state(r.blob()) if flag else None
    diffs = {}
    for _ in range(r.u64()):
        c = r.u64()
        diffs[c] = decode_diff(r.blob())
    messages = {}
    for _ in range(r.u64()):
        c = r.u64()
        messages[c] = _read_auth(r)
    m0 = _read_optional_auth(r)
    lossy = frozenset(r.u64() for _ in range(r.u64()))
    return AuditEvidence(t0, state, diffs, messages, m0, lossy)


def _enc_report(rep: AuditReport) -> bytes:
    out = [u64(rep.client), u64(rep.t0), u64(rep.ta), u64(len(rep.reasons))]
    for reason in rep.reasons:
        out.append(bytes([CHECK_CODES[reason.check]]) + u64(reason.cycle))
        out.append(_blob(reason.detail.encode()))
    return b"".join(out)


def _read_report(r: _Reader) -> AuditReport:
    client, t0, ta = r.u64(), r.u64(), r.u64()
    reasons = []
    for _ in range(r.u64()):
        code = r.u8()
        if code >= len(_CHECKS):
            raise DecodeError(f"unknown check code {code}")
        cycle = r.u64()
        try:
            detail = r.blob().decode()
        except UnicodeDecodeError as e:
            raise DecodeError("reason detail is not UTF-8") from e
        reasons.append(Reason(_CHECKS[code], cycle, detail))
    return AuditReport(client, t0, ta, tuple(reasons))


def _enc_region(region) -> bytes:
    return u64(region[0]) + u64(region[1])


def _read_region(r: _Reader) -> RegionId:
    return RegionId(r.u64(), r.u64())


def _read_abstract_diff(r: _Reader) -> AbstractDiff:
    return decode_abstract_diff(r.take(len(r.data) - r.pos))


def _enc_tag(tag: bytes) -> bytes:
    if len(tag) != TAG_SIZE:
        raise ValueError("commitment must be a 16-byte tag")
    return tag


_BODY = {
    Kind.INIT_REQUEST: (_enc_region, _read_region),
    Kind.INIT_RESPONSE: (_enc_optional_auth, _read_optional_auth),
    Kind.UPDATE_REQUEST: (encode_abstract_diff, _read_abstract_diff),
    Kind.UPDATE_RESPONSE: (_enc_optional_auth, _read_optional_auth),
    Kind.DIFF_COMMIT: (_enc_tag, lambda r: r.take(TAG_SIZE)),
    Kind.STATE_COMMIT: (_enc_tag, lambda r: r.take(TAG_SIZE)),
    Kind.AUDIT_REQUEST: (u64, lambda r: r.u64()),
    Kind.AUDIT_RESPONSE: (_enc_evidence, _read_evidence),
    Kind.AUDIT_VERDICT: (_enc_report, _read_report),
}


def encode_body(kind: Kind, body) -> bytes:
    return _BODY[Kind(kind)][0](body)


def encode_message(msg: WireMessage) -> bytes:
    body = encode_body(msg.kind, msg.body)
    return bytes([int(msg.kind)]) + u64(msg.sender) + u64(msg.cycle) + _blob(body)


def decode_message(data: bytes) -> WireMessage:
    r = _Reader(data)
    code = r.u8()
    try:
        kind = Kind(code)
    except ValueError:
        raise DecodeError(f"unknown message kind {code:#04x}") from None
    sender, cycle = r.u64(), r.u64()
    body_bytes = r.blob()
    r.finish()
    br = _Reader(body_bytes)
    try:
        body = _BODY[kind][1](br)
    except (WorldError, ValueError) as e:
        if isinstance(e, DecodeError):
            raise
        raise DecodeError(str(e)) from e
    br.finish()
    return WireMessage(kind, sender, cycle, body)


def mac_bytes(msg: WireMessage) -> int:
    """Number of MAC tag bytes carried by a frame."""
    if msg.kind in (Kind.DIFF_COMMIT, Kind.STATE_COMMIT):
        return TAG_SIZE
    if msg.kind in (Kind.INIT_RESPONSE, Kind.UPDATE_RESPONSE):
        return 0 if msg.body is None else TAG_SIZE
    if msg.kind is Kind.AUDIT_RESPONSE:
        ev = msg.body
        return TAG_SIZE * (len(ev.messages) + (ev.m0 is not None))
    return 0
