import json
from pathlib import Path

from apps.crypto.cryptoService import TrustStore, generate_keypair
from models.models import KeyPair
from utils.errors import KeyFileError


class KeysRepository:
    """Hex key files (`<name>.key` seed, `<name>.pub`) and trust-store JSON."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def save_keypair(self, name: str, kp: KeyPair) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        (self.directory / f"{name}.key").write_text(kp.private_key.hex() + "\n")
        (self.directory / f"{name}.pub").write_text(kp.public_key.hex() + "\n")

    def load_keypair(self, name: str) -> KeyPair:
        try:
            seed = bytes.fromhex((self.directory / f"{name}.key").read_text().strip())
        except (OSError, ValueError) as exc:
            raise KeyFileError(f"cannot read private key {name}: {exc}") from exc
        kp = generate_keypair(seed)
        pub_path = self.directory / f"{name}.pub"
        if pub_path.exists():
            if bytes.fromhex(pub_path.read_text().strip()) != kp.public_key:
                raise KeyFileError(f"{pub_path} does not match {name}.key")
        return kp


def save_trust_store(path: Path, trust: TrustStore) -> None:
    body = {oid.decode(): pub.hex() for oid, pub in trust.items_sorted()}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def load_trust_store(path: Path) -> TrustStore:
    try:
        body = json.loads(Path(path).read_text())
        return TrustStore(
            {oid.encode(): bytes.fromhex(pub) for oid, pub in body.items()}
        )
    except (OSError, ValueError, AttributeError, TypeError) as exc:
        raise KeyFileError(f"cannot read trust store {path}: {exc}") from exc
