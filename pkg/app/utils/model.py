"""
Core domain types and their canonical byte encoding.

Every type here is an immutable pydantic model. The canonical encoding is a
bespoke length-prefixed format used for hashing, signing, the wire and the
trace files:

    u8      one byte
    u32     4-byte big-endian unsigned integer
    i64     8-byte big-endian signed integer
    blob    u32 length followed by the raw bytes
    text    blob of the UTF-8 encoding
    list    u32 element count followed by the elements in order

Field layout per type:

    SignedDependency  text shard, u8 sign (0 unsigned, 1 plus, 2 minus)
    AccountOp         text account, i64 delta
    Payload           list of AccountOp
    UpdateRequest     blob id, blob nonce, blob payload, list SignedDependency,
                      list blob stakeholder_pks, list blob stakeholder_epks,
                      list blob signatures
    ShardResponse     blob request_hash, blob shard_signature
    TransactionEntry  blob request_hash, list blob ephemeral_sigs
    Transaction       list TransactionEntry, blob client_epk, blob client_sig
    Belief            u8 value (0 tentative commit, 1 discard), u8 is_final
    Block             i64 height, list Transaction
"""

import re
import struct
from enum import Enum, IntEnum
from functools import singledispatch
from typing import Annotated, Any, Callable, Iterable, Mapping, NamedTuple, TypeVar

from pydantic import BaseModel, ConfigDict, Field, StringConstraints, model_validator

ID_SIZE = 16
NONCE_SIZE = 16
HASH_SIZE = 32

SHARD_ID_PATTERN = re.compile(r"[A-Za-z0-9_.:]+")

ShardId = Annotated[str, StringConstraints(pattern=r"^[A-Za-z0-9_.:]+$")]

T = TypeVar("T")


class EncodingError(ValueError):
    """Raised when bytes do not decode to a valid value of the requested type"""


class DependencyError(ValueError):
    """Raised when a dependency set is malformed"""


class Sign(IntEnum):
    UNSIGNED = 0
    PLUS = 1
    MINUS = 2


class BeliefValue(IntEnum):
    TENTATIVE_COMMIT = 0
    DISCARD = 1


class Decision(str, Enum):
    COMMIT = "commit"
    DISCARD = "discard"


class Frozen(BaseModel):
    model_config = ConfigDict(frozen=True)


class SignedDependency(Frozen):
    shard: ShardId
    sign: Sign = Sign.UNSIGNED

    @classmethod
    def parse(cls, token: str) -> "SignedDependency":
        """
        Parse the scenario syntax `S2`, `S2+` or `S2-`.

        Raises:
            DependencyError: on an empty shard id or stray characters
        """
        token = token.strip()
        sign = {"+": Sign.PLUS, "-": Sign.MINUS}.get(token[-1:], Sign.UNSIGNED)
        shard = token[:-1] if sign != Sign.UNSIGNED else token
        if not SHARD_ID_PATTERN.fullmatch(shard):
            raise DependencyError(f"Invalid dependency token {token!r}")
        return cls(shard=shard, sign=sign)

    @property
    def contacts(self) -> bool:
        """The owner of this entry queries `shard` during commit."""
        return self.sign in (Sign.UNSIGNED, Sign.PLUS)

    @property
    def expects_call(self) -> bool:
        """The owner of this entry answers queries from `shard`."""
        return self.sign in (Sign.UNSIGNED, Sign.MINUS)

    def __str__(self) -> str:
        suffix = {Sign.UNSIGNED: "", Sign.PLUS: "+", Sign.MINUS: "-"}[self.sign]
        return f"{self.shard}{suffix}"


def normalize_dependencies(deps: Iterable[SignedDependency]) -> tuple[SignedDependency, ...]:
    """Sort a dependency set and reject a shard appearing twice."""
    ordered = tuple(sorted(deps, key=lambda d: (d.shard, int(d.sign))))
    shards = [d.shard for d in ordered]
    if len(shards) != len(set(shards)):
        raise DependencyError(f"Shard listed more than once in dependency set: {shards}")
    return ordered


def parse_dependencies(tokens: Iterable[str]) -> tuple[SignedDependency, ...]:
    return normalize_dependencies(SignedDependency.parse(t) for t in tokens)


class AccountOp(Frozen):
    account: str = Field(min_length=1)
    delta: int


class Payload(Frozen):
    """Coin-transfer payload: signed balance deltas applied in order."""

    ops: tuple[AccountOp, ...] = Field(min_length=1)

    @property
    def accounts(self) -> list[str]:
        return sorted({op.account for op in self.ops})


class UpdateRequest(Frozen):
    id: bytes = Field(min_length=ID_SIZE, max_length=ID_SIZE)
    nonce: bytes = Field(min_length=NONCE_SIZE, max_length=NONCE_SIZE)
    payload: bytes
    deps: tuple[SignedDependency, ...] = ()
    stakeholder_pks: tuple[bytes, ...]
    stakeholder_epks: tuple[bytes, ...]
    signatures: tuple[bytes, ...]

    @model_validator(mode="after")
    def _check_shape(self) -> "UpdateRequest":
        sizes = {len(self.stakeholder_pks), len(self.stakeholder_epks), len(self.signatures)}
        if len(sizes) != 1 or not self.stakeholder_pks:
            raise ValueError(
                "stakeholder_pks, stakeholder_epks and signatures must have the same nonzero length"
            )
        normalize_dependencies(self.deps)
        return self

    def signing_bytes(self) -> bytes:
        """Bytes covered by the long-term stakeholder signatures."""
        writer = Writer()
        _write_request_body(writer, self)
        return writer.getvalue()

    def decoded_payload(self) -> Payload:
        return canonical_decode(Payload, self.payload)

    def dependency_bytes(self) -> bytes:
        writer = Writer()
        writer.items(self.deps, _write_dependency)
        return writer.getvalue()


class ShardResponse(Frozen):
    request_hash: bytes = Field(min_length=HASH_SIZE, max_length=HASH_SIZE)
    shard_signature: bytes


class TransactionEntry(Frozen):
    request_hash: bytes = Field(min_length=HASH_SIZE, max_length=HASH_SIZE)
    ephemeral_sigs: tuple[bytes, ...]


class TransactionBody(Frozen):
    """Stakeholder-signed bundle, before a client adds its signature."""

    entries: tuple[TransactionEntry, ...] = Field(min_length=1)

    def hash_list(self) -> list[bytes]:
        return [entry.request_hash for entry in self.entries]

    def signing_bytes(self) -> bytes:
        return encode_entries(self.entries)


class Transaction(Frozen):
    entries: tuple[TransactionEntry, ...] = Field(min_length=1)
    client_epk: bytes
    client_sig: bytes

    def hash_list(self) -> list[bytes]:
        return [entry.request_hash for entry in self.entries]

    def signing_bytes(self) -> bytes:
        return encode_entries(self.entries)


class Block(Frozen):
    height: int = Field(ge=0)
    txs: tuple[Transaction, ...] = Field(min_length=1)


class Belief(Frozen):
    value: BeliefValue = BeliefValue.TENTATIVE_COMMIT
    is_final: bool = False

    @property
    def commits(self) -> bool:
        return self.value == BeliefValue.TENTATIVE_COMMIT

    @property
    def decision(self) -> Decision:
        return Decision.COMMIT if self.commits else Decision.DISCARD

    def conjoin(self, other: "Belief") -> "Belief":
        """Logical AND of two beliefs, keeping this belief's finality."""
        if self.commits and other.commits:
            return self
        return Belief(value=BeliefValue.DISCARD, is_final=self.is_final)

    def finalized(self) -> "Belief":
        return Belief(value=self.value, is_final=True)


class DependencyViolation(NamedTuple):
    """An unreciprocated dependency entry"""

    shard: str
    peer: str
    entry: str
    expected: str

    def __str__(self) -> str:
        return f"{self.shard} lists {self.entry} but {self.peer} does not list {self.expected}"


# ---------------------------------------------------------------------------
# Canonical encoding primitives
# ---------------------------------------------------------------------------


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">B", value))
        return self

    def u32(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">I", value))
        return self

    def i64(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">q", value))
        return self

    def blob(self, data: bytes) -> "Writer":
        self.u32(len(data))
        self._parts.append(bytes(data))
        return self

    def text(self, value: str) -> "Writer":
        return self.blob(value.encode("utf-8"))

    def raw(self, data: bytes) -> "Writer":
        self._parts.append(bytes(data))
        return self

    def items(self, values: Iterable[T], write: Callable[["Writer", T], Any]) -> "Writer":
        values = list(values)
        self.u32(len(values))
        for value in values:
            write(self, value)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes) -> None:
        self._data = bytes(data)
        self._pos = 0

    def _take(self, size: int) -> bytes:
        if size < 0 or self._pos + size > len(self._data):
            raise EncodingError(
                f"Truncated input: need {size} bytes at offset {self._pos}, have {len(self._data) - self._pos}"
            )
        chunk = self._data[self._pos : self._pos + size]
        self._pos += size
        return chunk

    def u8(self) -> int:
        return struct.unpack(">B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def i64(self) -> int:
        return struct.unpack(">q", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as e:
            raise EncodingError(f"Invalid UTF-8 text field: {e}")

    def items(self, read: Callable[["Reader"], T]) -> list[T]:
        count = self.u32()
        if count > len(self._data):
            raise EncodingError(f"Implausible element count {count}")
        return [read(self) for _ in range(count)]

    def done(self) -> None:
        if self._pos != len(self._data):
            raise EncodingError(f"{len(self._data) - self._pos} trailing bytes after value")


def _write_dependency(writer: Writer, dep: SignedDependency) -> None:
    writer.text(dep.shard).u8(int(dep.sign))


def _read_dependency(reader: Reader) -> SignedDependency:
    shard = reader.text()
    sign = reader.u8()
    if sign not in (0, 1, 2):
        raise EncodingError(f"Unknown dependency sign byte {sign}")
    return SignedDependency(shard=shard, sign=Sign(sign))


def _write_request_body(writer: Writer, req: UpdateRequest) -> None:
    writer.blob(req.id).blob(req.nonce).blob(req.payload)
    writer.items(req.deps, _write_dependency)
    writer.items(req.stakeholder_pks, Writer.blob)
    writer.items(req.stakeholder_epks, Writer.blob)


def write_entry(writer: Writer, entry: TransactionEntry) -> None:
    writer.blob(entry.request_hash)
    writer.items(entry.ephemeral_sigs, Writer.blob)


def read_entry(reader: Reader) -> TransactionEntry:
    return TransactionEntry(request_hash=reader.blob(), ephemeral_sigs=tuple(reader.items(Reader.blob)))


def write_transaction(writer: Writer, tx: Transaction) -> None:
    writer.items(tx.entries, write_entry)
    writer.blob(tx.client_epk).blob(tx.client_sig)


def read_transaction(reader: Reader) -> Transaction:
    entries = tuple(reader.items(read_entry))
    return Transaction(entries=entries, client_epk=reader.blob(), client_sig=reader.blob())


def write_block(writer: Writer, block: Block) -> None:
    writer.i64(block.height).items(block.txs, write_transaction)


def read_block(reader: Reader) -> Block:
    return Block(height=reader.i64(), txs=tuple(reader.items(read_transaction)))


def encode_entries(entries: Iterable[TransactionEntry]) -> bytes:
    return Writer().items(entries, write_entry).getvalue()


def encode_hash_list(hashes: Iterable[bytes]) -> bytes:
    """Bytes every stakeholder signs with its ephemeral key."""
    return Writer().items(hashes, Writer.blob).getvalue()


def encode_shard_field(shard: str) -> bytes:
    """How a shard identifier appears inside any canonical encoding."""
    return Writer().text(shard).getvalue()


@singledispatch
def canonical_encode(value: Any) -> bytes:
    raise EncodingError(f"No canonical encoding for {type(value).__name__}")


@canonical_encode.register
def _(value: SignedDependency) -> bytes:
    writer = Writer()
    _write_dependency(writer, value)
    return writer.getvalue()


@canonical_encode.register
def _(value: AccountOp) -> bytes:
    return Writer().text(value.account).i64(value.delta).getvalue()


@canonical_encode.register
def _(value: Payload) -> bytes:
    return Writer().items(value.ops, lambda w, op: w.text(op.account).i64(op.delta)).getvalue()


@canonical_encode.register
def _(value: UpdateRequest) -> bytes:
    writer = Writer()
    _write_request_body(writer, value)
    writer.items(value.signatures, Writer.blob)
    return writer.getvalue()


@canonical_encode.register
def _(value: ShardResponse) -> bytes:
    return Writer().blob(value.request_hash).blob(value.shard_signature).getvalue()


@canonical_encode.register
def _(value: TransactionEntry) -> bytes:
    writer = Writer()
    write_entry(writer, value)
    return writer.getvalue()


@canonical_encode.register
def _(value: Transaction) -> bytes:
    writer = Writer()
    write_transaction(writer, value)
    return writer.getvalue()


@canonical_encode.register
def _(value: Block) -> bytes:
    writer = Writer()
    write_block(writer, value)
    return writer.getvalue()


@canonical_encode.register
def _(value: Belief) -> bytes:
    return Writer().u8(int(value.value)).u8(int(value.is_final)).getvalue()


def read_request(reader: Reader) -> UpdateRequest:
    return UpdateRequest(
        id=reader.blob(),
        nonce=reader.blob(),
        payload=reader.blob(),
        deps=tuple(reader.items(_read_dependency)),
        stakeholder_pks=tuple(reader.items(Reader.blob)),
        stakeholder_epks=tuple(reader.items(Reader.blob)),
        signatures=tuple(reader.items(Reader.blob)),
    )


def _decode_belief(reader: Reader) -> Belief:
    value, final = reader.u8(), reader.u8()
    if value not in (0, 1) or final not in (0, 1):
        raise EncodingError(f"Invalid belief bytes {value}, {final}")
    return Belief(value=BeliefValue(value), is_final=bool(final))


DECODERS: dict[type, Callable[[Reader], Any]] = {
    SignedDependency: _read_dependency,
    AccountOp: lambda r: AccountOp(account=r.text(), delta=r.i64()),
    Payload: lambda r: Payload(ops=tuple(r.items(lambda rr: AccountOp(account=rr.text(), delta=rr.i64())))),
    UpdateRequest: read_request,
    ShardResponse: lambda r: ShardResponse(request_hash=r.blob(), shard_signature=r.blob()),
    TransactionEntry: read_entry,
    Transaction: read_transaction,
    Block: read_block,
    Belief: _decode_belief,
}


def register_decoder(cls: type, decoder: Callable[[Reader], Any]) -> None:
    DECODERS[cls] = decoder


def canonical_decode(cls: type[T], data: bytes) -> T:
    """
    Decode bytes produced by `canonical_encode` back into a `cls` value.

    Raises:
        EncodingError: on truncated input, trailing bytes, or field values that
            fail the type's invariants
    """
    decoder = DECODERS.get(cls)
    if decoder is None:
        raise EncodingError(f"No canonical decoding for {cls.__name__}")
    reader = Reader(data)
    try:
        value = decoder(reader)
    except EncodingError:
        raise
    except (ValueError, struct.error) as e:
        raise EncodingError(f"Invalid {cls.__name__} encoding: {e}")
    reader.done()
    return value


def validate_dependency_consistency(
    requests: Mapping[str, UpdateRequest | Iterable[SignedDependency]],
) -> list[DependencyViolation]:
    """
    Check that every dependency entry is reciprocated by the peer's request.

    An entry that contacts its peer (`S_j+` or unsigned) must be answered by
    one that expects the call (`S_i-` or unsigned), and `S_j-` by `S_i+` or
    unsigned.

    Returns:
        list of violations, empty when the sets are consistent
    """
    deps_by_shard: dict[str, dict[str, SignedDependency]] = {}
    for shard, value in requests.items():
        deps = value.deps if isinstance(value, UpdateRequest) else tuple(value)
        deps_by_shard[shard] = {dep.shard: dep for dep in deps}

    violations: list[DependencyViolation] = []
    for shard in sorted(deps_by_shard):
        for peer in sorted(deps_by_shard[shard]):
            dep = deps_by_shard[shard][peer]
            back = deps_by_shard.get(peer, {}).get(shard)
            if dep.contacts:
                ok = back is not None and back.expects_call
                expected = f"{shard}- or {shard}"
            else:
                ok = back is not None and back.contacts
                expected = f"{shard}+ or {shard}"
            if not ok:
                violations.append(
                    DependencyViolation(shard=shard, peer=peer, entry=str(dep), expected=expected)
                )
    return violations
