"""Keyed message authentication and the authorized-message envelope.

Tags are HMAC-SHA256 truncated to 16 bytes.  An authorized message carries its
payload ``m`` in the clear plus ``MAC(k, m || client)``, so a tag issued for
one client never verifies for another.
"""

from __future__ import annotations

import hashlib
import hmac
import random
import struct
from dataclasses import dataclass

KEY_SIZE = 32
TAG_SIZE = 16

_U64 = struct.Struct("<Q")


def _check_key(k: bytes) -> None:
    if len(k) != KEY_SIZE:
        raise ValueError(f"MAC key must be {KEY_SIZE} bytes, got {len(k)}")


def generate_key(rng: random.Random | None = None) -> bytes:
    """Fresh 32-byte key; pass a seeded ``rng`` for reproducible simulations."""
    if rng is None:
        import secrets

        return secrets.token_bytes(KEY_SIZE)
    return rng.randbytes(KEY_SIZE)


def mac_tag(k: bytes, m: bytes) -> bytes:
    _check_key(k)
    return hmac.new(k, m, hashlib.sha256).digest()[:TAG_SIZE]


def mac_verify(k: bytes, m: bytes, t: bytes) -> bool:
    if len(t) != TAG_SIZE:
        return False
    return hmac.compare_digest(mac_tag(k, m), t)


def client_suffix(client: int) -> bytes:
    return _U64.pack(client)


@dataclass(frozen=True)
class AuthorizedMessage:
    payload: bytes
    tag: bytes

    def __post_init__(self):
        if len(self.tag) != TAG_SIZE:
            raise ValueError(f"tag must be {TAG_SIZE} bytes")

    def __len__(self) -> int:
        return len(self.payload) + len(self.tag)


def auth_msg(k: bytes, m: bytes, client: int) -> AuthorizedMessage:
    return AuthorizedMessage(bytes(m), mac_tag(k, m + client_suffix(client)))


def auth_verify(k: bytes, msg: AuthorizedMessage, client: int) -> bool:
    return mac_verify(k, msg.payload + client_suffix(client), msg.tag)
