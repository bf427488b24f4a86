"""
Hashing and signature schemes.

Two schemes share one interface:

    scheme        public key   secret key   signature
    ecdsa         64 bytes     32 bytes     64 bytes   (SECP256k1, RFC 6979 nonces)
    keyed-hash    32 bytes     32 bytes     32 bytes   (HMAC-SHA256 keyed by the public key)

The keyed-hash scheme is transparent (anyone holding the public key can sign)
and exists so protocol simulations run fast and deterministically.
"""

import hashlib
import hmac
from abc import ABC, abstractmethod
from enum import Enum
from functools import lru_cache

import ecdsa
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

DIGEST_SIZE = 32


def hash_bytes(data: bytes) -> bytes:
    """SHA-256 digest of `data`."""
    return hashlib.sha256(data).digest()


class KeyKind(str, Enum):
    LONG_TERM = "long-term"
    EPHEMERAL = "ephemeral"


class KeyPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    public: bytes
    secret: bytes = Field(repr=False)
    kind: KeyKind = KeyKind.LONG_TERM


def _seed_material(rng_seed: int, label: bytes) -> bytes:
    return hash_bytes(b"mspt-keygen:" + label + b":" + (rng_seed % 2**64).to_bytes(8, "big"))


class SignatureScheme(ABC):
    name: str
    public_key_size: int
    secret_key_size: int
    signature_size: int

    @abstractmethod
    def keygen(self, rng_seed: int, kind: KeyKind = KeyKind.LONG_TERM) -> KeyPair:
        """Deterministically derive a key pair from a 64-bit seed."""

    @abstractmethod
    def sign(self, secret: bytes, message: bytes) -> bytes:
        pass

    @abstractmethod
    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        """Return True iff `signature` is valid; malformed input yields False."""


class KeyedHashScheme(SignatureScheme):
    name = "keyed-hash"
    public_key_size = 32
    secret_key_size = 32
    signature_size = 32

    def keygen(self, rng_seed: int, kind: KeyKind = KeyKind.LONG_TERM) -> KeyPair:
        secret = _seed_material(rng_seed, kind.value.encode())
        return KeyPair(public=hash_bytes(b"public:" + secret), secret=secret, kind=kind)

    def sign(self, secret: bytes, message: bytes) -> bytes:
        public = hash_bytes(b"public:" + secret)
        return hmac.new(public, message, hashlib.sha256).digest()

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        try:
            if len(public) != self.public_key_size or len(signature) != self.signature_size:
                return False
            expected = hmac.new(public, message, hashlib.sha256).digest()
            return hmac.compare_digest(expected, signature)
        except TypeError:
            return False


class EcdsaScheme(SignatureScheme):
    name = "ecdsa"
    public_key_size = 64
    secret_key_size = 32
    signature_size = 64

    curve = ecdsa.SECP256k1

    def keygen(self, rng_seed: int, kind: KeyKind = KeyKind.LONG_TERM) -> KeyPair:
        material = int.from_bytes(_seed_material(rng_seed, kind.value.encode()), "big")
        secexp = material % (self.curve.order - 1) + 1
        sk = ecdsa.SigningKey.from_secret_exponent(secexp, curve=self.curve, hashfunc=hashlib.sha256)
        return KeyPair(public=sk.get_verifying_key().to_string(), secret=sk.to_string(), kind=kind)

    def sign(self, secret: bytes, message: bytes) -> bytes:
        sk = ecdsa.SigningKey.from_string(secret, curve=self.curve, hashfunc=hashlib.sha256)
        return sk.sign_deterministic(message)

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        try:
            vk = ecdsa.VerifyingKey.from_string(public, curve=self.curve, hashfunc=hashlib.sha256)
            return vk.verify(signature, message)
        except ecdsa.BadSignatureError:
            return False
        except Exception as e:
            logger.debug(f"Signature verification failed on malformed input: {e}")
            return False


SCHEMES: dict[str, type[SignatureScheme]] = {
    KeyedHashScheme.name: KeyedHashScheme,
    EcdsaScheme.name: EcdsaScheme,
}


@lru_cache(maxsize=None)
def get_scheme(name: str) -> SignatureScheme:
    """
    Look up a signature scheme by name.

    Raises:
        ValueError: if the scheme is unknown
    """
    try:
        return SCHEMES[name]()
    except KeyError:
        raise ValueError(f"Unknown signature scheme '{name}'. Choose one of {sorted(SCHEMES)}")
