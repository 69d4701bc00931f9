"""Wallets, signatures and recipient-public-key encryption.

A keypair is derived deterministically from a 32-byte seed: the seed is
the Ed25519 signing key, and a domain-separated digest of the seed is
the X25519 key used for sealed-box style encryption. Wallet addresses
are the first 20 bytes of SHA-256 over the signing public key, rendered
as 0x-prefixed lowercase hex.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import random
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

ADDRESS_BYTES = 20
NONCE_BYTES = 12
TAG_BYTES = 16


class MalformedSignature(ValueError):
    pass


class AuthenticationFailure(ValueError):
    """Decryption failed: wrong key or tampered envelope."""


def b64e(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).decode("ascii")


def b64d(text: str) -> bytes:
    return base64.urlsafe_b64decode(text.encode("ascii"))


def wallet_address(sign_public: bytes) -> str:
    """0x-prefixed hex of the truncated digest of the signing public key."""
    return "0x" + hashlib.sha256(sign_public).digest()[:ADDRESS_BYTES].hex()


@dataclass(frozen=True)
class PublicIdentity:
    """Shareable half of a keypair: signing key, encryption key, wallet."""

    sign_public: bytes
    enc_public: bytes

    @property
    def address(self) -> str:
        return wallet_address(self.sign_public)

    def to_dict(self) -> dict:
        return {
            "address": self.address,
            "enc_public": b64e(self.enc_public),
            "sign_public": b64e(self.sign_public),
        }


@dataclass(frozen=True)
class KeyPair:
    seed: bytes
    sign_public: bytes
    enc_public: bytes

    @property
    def address(self) -> str:
        return wallet_address(self.sign_public)

    @property
    def public(self) -> PublicIdentity:
        return PublicIdentity(self.sign_public, self.enc_public)

    def _signing_key(self) -> Ed25519PrivateKey:
        return Ed25519PrivateKey.from_private_bytes(self.seed)

    def _enc_key(self) -> X25519PrivateKey:
        return X25519PrivateKey.from_private_bytes(_enc_seed(self.seed))


def _enc_seed(seed: bytes) -> bytes:
    return hashlib.sha256(b"citychain/x25519" + seed).digest()


def generate_keypair(seed: bytes) -> KeyPair:
    """Deterministic keypair from a 32-byte seed."""
    if len(seed) != 32:
        raise ValueError("seed must be exactly 32 bytes")
    sign_pub = (
        Ed25519PrivateKey.from_private_bytes(seed)
        .public_key()
        .public_bytes(Encoding.Raw, PublicFormat.Raw)
    )
    enc_pub = (
        X25519PrivateKey.from_private_bytes(_enc_seed(seed))
        .public_key()
        .public_bytes(Encoding.Raw, PublicFormat.Raw)
    )
    return KeyPair(seed=seed, sign_public=sign_pub, enc_public=enc_pub)


def keypair_from_material(material: str | bytes) -> KeyPair:
    """Keypair from arbitrary seed material (hashed down to 32 bytes)."""
    if isinstance(material, str):
        material = material.encode("utf-8")
    return generate_keypair(hashlib.sha256(material).digest())


def sign(keypair: KeyPair, message: bytes) -> bytes:
    return keypair._signing_key().sign(message)


def verify(sign_public: bytes, message: bytes, signature: bytes) -> bool:
    if len(signature) != 64:
        raise MalformedSignature(f"expected 64-byte signature, got {len(signature)}")
    try:
        Ed25519PublicKey.from_public_bytes(sign_public).verify(signature, message)
        return True
    except InvalidSignature:
        return False


def encrypt_for(
    enc_public: bytes, plaintext: bytes, rng: random.Random | None = None
) -> dict:
    """Sealed-box encryption to a recipient's X25519 public key.

    Ephemeral key and nonce are drawn from rng when given (deterministic
    test/simulation mode) or from the OS otherwise. Returns a JSON-ready
    cipher envelope dict.
    """
    if rng is None:
        eph_seed = os.urandom(32)
        nonce = os.urandom(NONCE_BYTES)
    else:
        eph_seed = rng.randbytes(32)
        nonce = rng.randbytes(NONCE_BYTES)
    eph_private = X25519PrivateKey.from_private_bytes(eph_seed)
    eph_public = eph_private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    shared = eph_private.exchange(X25519PublicKey.from_public_bytes(enc_public))
    key = hashlib.sha256(b"citychain/sealed-box" + shared + eph_public + enc_public).digest()
    sealed = ChaCha20Poly1305(key).encrypt(nonce, plaintext, eph_public)
    return {
        "ciphertext": b64e(sealed[:-TAG_BYTES]),
        "ephemeral_public": b64e(eph_public),
        "nonce": b64e(nonce),
        "tag": b64e(sealed[-TAG_BYTES:]),
    }


def decrypt(keypair: KeyPair, envelope: dict) -> bytes:
    """Open a cipher envelope; raises AuthenticationFailure on any mismatch."""
    try:
        eph_public = b64d(envelope["ephemeral_public"])
        nonce = b64d(envelope["nonce"])
        sealed = b64d(envelope["ciphertext"]) + b64d(envelope["tag"])
    except (KeyError, ValueError) as exc:
        raise AuthenticationFailure(f"malformed cipher envelope: {exc}") from exc
    shared = keypair._enc_key().exchange(X25519PublicKey.from_public_bytes(eph_public))
    key = hashlib.sha256(
        b"citychain/sealed-box" + shared + eph_public + keypair.enc_public
    ).digest()
    try:
        return ChaCha20Poly1305(key).decrypt(nonce, sealed, eph_public)
    except InvalidTag as exc:
        raise AuthenticationFailure("ciphertext authentication failed") from exc


def save_key_file(keypair: KeyPair, path: str) -> None:
    data = {
        "address": keypair.address,
        "enc_public": b64e(keypair.enc_public),
        "seed": b64e(keypair.seed),
        "sign_public": b64e(keypair.sign_public),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_key_file(path: str) -> KeyPair:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    keypair = generate_keypair(b64d(data["seed"]))
    if keypair.address != data.get("address"):
        raise ValueError(f"key file {path} is inconsistent with its seed")
    return keypair
