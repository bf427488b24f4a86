import pytest
from hypothesis import given, settings, strategies as st

from app.utils.crypto import EcdsaScheme, KeyKind, KeyedHashScheme, get_scheme, hash_bytes

seeds = st.integers(min_value=0, max_value=2**64 - 1)


def test_hash_is_32_bytes_and_deterministic():
    assert len(hash_bytes(b"abc")) == 32
    assert hash_bytes(b"abc") == hash_bytes(b"abc")
    assert hash_bytes(b"abc") != hash_bytes(b"abd")


@settings(max_examples=15, deadline=None)
@given(seeds, seeds, st.binary(max_size=64))
def test_signature_verifies_only_under_its_own_key(a, b, message):
    for scheme in (KeyedHashScheme(), EcdsaScheme()):
        key, other = scheme.keygen(a), scheme.keygen(b)
        signature = scheme.sign(key.secret, message)
        assert scheme.verify(key.public, message, signature)
        assert scheme.verify(other.public, message, signature) == (key.public == other.public)


def test_key_sizes(any_scheme):
    key = any_scheme.keygen(42)
    signature = any_scheme.sign(key.secret, b"m")
    assert len(key.public) == any_scheme.public_key_size
    assert len(key.secret) == any_scheme.secret_key_size
    assert len(signature) == any_scheme.signature_size


def test_keygen_is_deterministic_and_kind_separated(any_scheme):
    assert any_scheme.keygen(7) == any_scheme.keygen(7)
    ephemeral = any_scheme.keygen(7, KeyKind.EPHEMERAL)
    assert ephemeral.kind == KeyKind.EPHEMERAL
    assert ephemeral.public != any_scheme.keygen(7).public


def test_tampered_message_fails(any_scheme):
    key = any_scheme.keygen(3)
    signature = any_scheme.sign(key.secret, b"hash list")
    assert not any_scheme.verify(key.public, b"hash lisT", signature)


@pytest.mark.parametrize("public, signature", [(b"", b""), (b"\x00" * 5, b"\x01" * 64), (b"\x00" * 64, b"short")])
def test_malformed_input_is_rejected_without_raising(any_scheme, public, signature):
    assert any_scheme.verify(public, b"m", signature) is False


def test_unknown_scheme():
    with pytest.raises(ValueError):
        get_scheme("rot13")


def test_secret_is_hidden_from_repr(scheme):
    key = scheme.keygen(1)
    assert key.secret.hex() not in repr(key)
