import pytest

from apps.crypto.cryptoService import TrustStore, generate_keypair, sign, verify
from apps.crypto.keysRepository import (
    KeysRepository,
    load_trust_store,
    save_trust_store,
)
from utils.errors import KeyFileError, UnknownOrdererError

SEED = bytes(range(32))
MESSAGE = b"block header bytes"


def test_same_seed_gives_the_same_pair():
    assert generate_keypair(SEED) == generate_keypair(SEED)


def test_random_pairs_differ():
    assert generate_keypair().public_key != generate_keypair().public_key


def test_seed_must_be_32_bytes():
    with pytest.raises(ValueError):
        generate_keypair(b"short")


def test_signature_verifies_for_its_message_only():
    kp = generate_keypair(SEED)
    sig = sign(kp, MESSAGE)
    assert len(sig) == 64
    assert verify(kp.public_key, MESSAGE, sig)
    assert not verify(kp.public_key, MESSAGE + b"!", sig)


def test_other_key_rejects_the_signature():
    sig = sign(generate_keypair(SEED), MESSAGE)
    other = generate_keypair(bytes(32))
    assert not verify(other.public_key, MESSAGE, sig)


def test_flipped_signature_bit_fails():
    kp = generate_keypair(SEED)
    sig = bytearray(sign(kp, MESSAGE))
    sig[10] ^= 0x04
    assert not verify(kp.public_key, MESSAGE, bytes(sig))


@pytest.mark.parametrize("sig", [b"", bytes(63), bytes(65)])
def test_bad_length_signature_is_false_not_an_error(sig):
    assert not verify(generate_keypair(SEED).public_key, MESSAGE, sig)


def test_malformed_public_key_is_false():
    sig = sign(generate_keypair(SEED), MESSAGE)
    assert not verify(b"\x01" * 31, MESSAGE, sig)


def test_trust_store_lookup_and_verify():
    kp = generate_keypair(SEED)
    trust = TrustStore.from_keypairs({b"orderer0": kp})
    assert trust.lookup(b"orderer0") == kp.public_key
    assert trust.verify(b"orderer0", MESSAGE, sign(kp, MESSAGE))
    with pytest.raises(UnknownOrdererError):
        trust.lookup(b"nobody")


def test_trust_store_file_round_trip(tmp_path):
    trust = TrustStore(
        {
            b"orderer1": generate_keypair(bytes(32)).public_key,
            b"orderer0": generate_keypair(SEED).public_key,
        }
    )
    path = tmp_path / "truststore.json"
    save_trust_store(path, trust)
    assert dict(load_trust_store(path)) == dict(trust)
    assert '"orderer0"' in path.read_text()


@pytest.mark.parametrize("body", ["not json", '{"orderer0": "zz"}', "[1, 2]"])
def test_unreadable_trust_store_raises(tmp_path, body):
    path = tmp_path / "truststore.json"
    path.write_text(body)
    with pytest.raises(KeyFileError):
        load_trust_store(path)


def test_missing_trust_store_raises(tmp_path):
    with pytest.raises(KeyFileError):
        load_trust_store(tmp_path / "absent.json")


def test_key_files_round_trip(tmp_path):
    keys = KeysRepository(tmp_path / "keys")
    kp = generate_keypair(SEED)
    keys.save_keypair("orderer0", kp)
    assert (tmp_path / "keys" / "orderer0.key").read_text().strip() == SEED.hex()
    assert keys.load_keypair("orderer0") == kp


def test_mismatched_public_key_file_is_rejected(tmp_path):
    keys = KeysRepository(tmp_path)
    keys.save_keypair("orderer0", generate_keypair(SEED))
    (tmp_path / "orderer0.pub").write_text(bytes(32).hex())
    with pytest.raises(KeyFileError):
        keys.load_keypair("orderer0")


def test_missing_key_file_raises(tmp_path):
    with pytest.raises(KeyFileError):
        KeysRepository(tmp_path).load_keypair("ghost")
