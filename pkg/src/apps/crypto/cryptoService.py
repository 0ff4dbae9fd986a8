import os
from functools import lru_cache
from types import MappingProxyType
from typing import Dict, Iterator, Mapping, Optional, Tuple

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519

from models.models import KeyPair
from utils.errors import UnknownOrdererError

SIGNATURE_SIZE = 64


def generate_keypair(seed: Optional[bytes] = None) -> KeyPair:
    """Ed25519 key pair; a 32-byte seed makes the pair deterministic."""
    if seed is None:
        seed = os.urandom(32)
    if len(seed) != 32:
        raise ValueError("an Ed25519 seed is exactly 32 bytes")
    private = ed25519.Ed25519PrivateKey.from_private_bytes(seed)
    public = private.public_key().public_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PublicFormat.Raw,
    )
    return KeyPair(public_key=public, private_key=seed)


@lru_cache(maxsize=256)
def _signer(seed: bytes) -> ed25519.Ed25519PrivateKey:
    return ed25519.Ed25519PrivateKey.from_private_bytes(seed)


@lru_cache(maxsize=256)
def _verifier(public_key: bytes) -> ed25519.Ed25519PublicKey:
    return ed25519.Ed25519PublicKey.from_public_bytes(public_key)


def sign(k: KeyPair, message: bytes) -> bytes:
    return _signer(k.private_key).sign(message)


def verify(public_key: bytes, message: bytes, sig: bytes) -> bool:
    if len(sig) != SIGNATURE_SIZE:
        return False
    try:
        _verifier(bytes(public_key)).verify(bytes(sig), bytes(message))
    except (InvalidSignature, ValueError):
        return False
    return True


class TrustStore(Mapping[bytes, bytes]):
    """Read-only map from orderer id to its Ed25519 verification key."""

    def __init__(self, entries: Mapping[bytes, bytes]):
        self._entries: Mapping[bytes, bytes] = MappingProxyType(
            {bytes(k): bytes(v) for k, v in entries.items()}
        )

    def __getitem__(self, orderer_id: bytes) -> bytes:
        return self._entries[orderer_id]

    def __iter__(self) -> Iterator[bytes]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, orderer_id: bytes) -> bytes:
        try:
            return self._entries[orderer_id]
        except KeyError:
            raise UnknownOrdererError(orderer_id) from None

    def verify(self, orderer_id: bytes, message: bytes, sig: bytes) -> bool:
        return verify(self.lookup(orderer_id), message, sig)

    def items_sorted(self) -> Tuple[Tuple[bytes, bytes], ...]:
        return tuple(sorted(self._entries.items()))

    @classmethod
    def from_keypairs(cls, pairs: Dict[bytes, KeyPair]) -> "TrustStore":
        return cls({oid: kp.public_key for oid, kp in pairs.items()})
