import random

import pytest

from citychain import identity

# RFC 8032 section 7.1 test vectors for Ed25519
RFC8032_VECTORS = [
    (
        "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60",
        "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a",
        "",
        "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a3"
        "3bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b",
    ),
    (
        "4ccd089b28ff96da9db6c346ec114e0f5b8a319f35aba624da8cf6ed4fb8a6fb",
        "3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c",
        "72",
        "92a009a9f0d4cab8720e820b5f642540a2b27b5416503f8fb3762223ebdb69da085ac1e43e15"
        "996e458f3613d0f11d8c387b2eaeb4302aeeb00d291612bb0c00",
    ),
]


@pytest.mark.parametrize("seed_hex,pub_hex,msg_hex,sig_hex", RFC8032_VECTORS)
def test_published_signature_vectors(seed_hex, pub_hex, msg_hex, sig_hex):
    kp = identity.generate_keypair(bytes.fromhex(seed_hex))
    assert kp.sign_public.hex() == pub_hex
    message = bytes.fromhex(msg_hex)
    assert identity.sign(kp, message).hex() == sig_hex
    assert identity.verify(kp.sign_public, message, bytes.fromhex(sig_hex))


def test_keypair_deterministic_per_seed():
    seed = bytes(range(32))
    assert identity.generate_keypair(seed) == identity.generate_keypair(seed)
    other = identity.generate_keypair(bytes(range(1, 33)))
    assert other.sign_public != identity.generate_keypair(seed).sign_public


def test_wallet_address_format_and_stability():
    kp = identity.generate_keypair(b"\x05" * 32)
    assert kp.address.startswith("0x") and len(kp.address) == 42
    assert kp.address == identity.wallet_address(kp.sign_public)


def test_sign_verify_round_trip_and_tamper():
    kp = identity.generate_keypair(b"\x09" * 32)
    message = b"meter reading 4711"
    sig = identity.sign(kp, message)
    assert identity.verify(kp.sign_public, message, sig)
    assert not identity.verify(kp.sign_public, b"meter reading 4712", sig)
    flipped = bytes([sig[0] ^ 1]) + sig[1:]
    assert not identity.verify(kp.sign_public, message, flipped)


def test_malformed_signature_length():
    kp = identity.generate_keypair(b"\x09" * 32)
    with pytest.raises(identity.MalformedSignature):
        identity.verify(kp.sign_public, b"m", b"short")


def test_encrypt_round_trip_1kib():
    kp = identity.generate_keypair(b"\x21" * 32)
    plaintext = bytes(range(256)) * 4
    envelope = identity.encrypt_for(kp.enc_public, plaintext)
    assert identity.decrypt(kp, envelope) == plaintext


def test_encrypt_empty_plaintext():
    kp = identity.generate_keypair(b"\x22" * 32)
    assert identity.decrypt(kp, identity.encrypt_for(kp.enc_public, b"")) == b""


def test_decrypt_with_wrong_key_fails():
    kp = identity.generate_keypair(b"\x23" * 32)
    other = identity.generate_keypair(b"\x24" * 32)
    envelope = identity.encrypt_for(kp.enc_public, b"secret")
    with pytest.raises(identity.AuthenticationFailure):
        identity.decrypt(other, envelope)


def test_tampered_ciphertext_fails():
    kp = identity.generate_keypair(b"\x25" * 32)
    envelope = identity.encrypt_for(kp.enc_public, b"secret document")
    ct = bytearray(identity.b64d(envelope["ciphertext"]))
    ct[0] ^= 1
    envelope["ciphertext"] = identity.b64e(bytes(ct))
    with pytest.raises(identity.AuthenticationFailure):
        identity.decrypt(kp, envelope)


def test_encryption_randomized_but_both_decrypt():
    kp = identity.generate_keypair(b"\x26" * 32)
    a = identity.encrypt_for(kp.enc_public, b"same plaintext")
    b = identity.encrypt_for(kp.enc_public, b"same plaintext")
    assert a["ciphertext"] != b["ciphertext"]
    assert identity.decrypt(kp, a) == identity.decrypt(kp, b) == b"same plaintext"


def test_encryption_deterministic_under_seeded_rng():
    kp = identity.generate_keypair(b"\x27" * 32)
    a = identity.encrypt_for(kp.enc_public, b"doc", random.Random(5))
    b = identity.encrypt_for(kp.enc_public, b"doc", random.Random(5))
    assert a == b


def test_bulk_sign_verify_and_cross_key_rejection():
    rng = random.Random(1234)
    pairs = [identity.generate_keypair(rng.randbytes(32)) for _ in range(40)]
    for i, kp in enumerate(pairs):
        message = rng.randbytes(rng.randint(1, 64))
        sig = identity.sign(kp, message)
        assert identity.verify(kp.sign_public, message, sig)
        other = pairs[(i + 1) % len(pairs)]
        assert not identity.verify(other.sign_public, message, sig)


def test_key_file_round_trip(tmp_path):
    kp = identity.generate_keypair(b"\x31" * 32)
    path = tmp_path / "key.json"
    identity.save_key_file(kp, str(path))
    assert identity.load_key_file(str(path)) == kp
