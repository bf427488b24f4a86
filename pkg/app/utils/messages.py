"""
Messages exchanged between simulated actors.

Each message has a canonical encoding (see `model`) prefixed with a one-byte
tag, so a trace record can be decoded without out-of-band type information:

    tag  message            body
    1    RequestSubmission  UpdateRequest
    2    RequestAccepted    ShardResponse
    3    RequestRejected    blob request_hash, text reason
    4    ClientSubmission   list TransactionEntry
    5    LedgerSubmission   blob transaction bytes
    6    BlockDelivery      i64 height, list Transaction
    7    PullRequest        blob request_id, text caller
    8    PullReply          blob request_id, u8 value, u8 is_final
    9    PullDenied         blob request_id
    10   TwoPcVote          blob request_id, text shard, u8 value
    11   TwoPcDecision      blob request_id, u8 value
    12   Broadcast          i64 broadcast_id, text origin, u8 hop, RequestSubmission body
"""

from typing import Callable

from pydantic import Field

from .model import (
    Belief,
    BeliefValue,
    Block,
    EncodingError,
    Frozen,
    Reader,
    ShardResponse,
    Transaction,
    TransactionEntry,
    UpdateRequest,
    Writer,
    canonical_decode,
    canonical_encode,
    read_block,
    read_entry,
    read_request,
    register_decoder,
    write_block,
    write_entry,
)


class RequestSubmission(Frozen):
    request: UpdateRequest


class RequestAccepted(Frozen):
    response: ShardResponse


class RequestRejected(Frozen):
    request_hash: bytes
    reason: str


class ClientSubmission(Frozen):
    entries: tuple[TransactionEntry, ...] = Field(min_length=1)


class LedgerSubmission(Frozen):
    transaction: bytes


class BlockDelivery(Frozen):
    block: Block


class PullRequest(Frozen):
    request_id: bytes
    caller: str


class PullReply(Frozen):
    request_id: bytes
    value: BeliefValue
    is_final: bool

    @property
    def belief(self) -> Belief:
        return Belief(value=self.value, is_final=self.is_final)


class PullDenied(Frozen):
    request_id: bytes


class TwoPcVote(Frozen):
    request_id: bytes
    shard: str
    value: BeliefValue


class TwoPcDecision(Frozen):
    request_id: bytes
    value: BeliefValue


class Broadcast(Frozen):
    broadcast_id: int
    origin: str
    hop: int = 0
    payload: RequestSubmission


def _value(reader: Reader) -> BeliefValue:
    raw = reader.u8()
    if raw not in (0, 1):
        raise EncodingError(f"Invalid belief value byte {raw}")
    return BeliefValue(raw)


def _flag(reader: Reader) -> bool:
    raw = reader.u8()
    if raw not in (0, 1):
        raise EncodingError(f"Invalid flag byte {raw}")
    return bool(raw)


# tag -> (class, body writer, body reader)
_CODECS: dict[int, tuple[type, Callable[[Writer, object], None], Callable[[Reader], object]]] = {
    1: (
        RequestSubmission,
        lambda w, m: w.raw(canonical_encode(m.request)),
        lambda r: RequestSubmission(request=read_request(r)),
    ),
    2: (
        RequestAccepted,
        lambda w, m: w.blob(m.response.request_hash).blob(m.response.shard_signature),
        lambda r: RequestAccepted(response=ShardResponse(request_hash=r.blob(), shard_signature=r.blob())),
    ),
    3: (
        RequestRejected,
        lambda w, m: w.blob(m.request_hash).text(m.reason),
        lambda r: RequestRejected(request_hash=r.blob(), reason=r.text()),
    ),
    4: (
        ClientSubmission,
        lambda w, m: w.items(m.entries, write_entry),
        lambda r: ClientSubmission(entries=tuple(r.items(read_entry))),
    ),
    5: (
        LedgerSubmission,
        lambda w, m: w.blob(m.transaction),
        lambda r: LedgerSubmission(transaction=r.blob()),
    ),
    6: (
        BlockDelivery,
        lambda w, m: write_block(w, m.block),
        lambda r: BlockDelivery(block=read_block(r)),
    ),
    7: (
        PullRequest,
        lambda w, m: w.blob(m.request_id).text(m.caller),
        lambda r: PullRequest(request_id=r.blob(), caller=r.text()),
    ),
    8: (
        PullReply,
        lambda w, m: w.blob(m.request_id).u8(int(m.value)).u8(int(m.is_final)),
        lambda r: PullReply(request_id=r.blob(), value=_value(r), is_final=_flag(r)),
    ),
    9: (
        PullDenied,
        lambda w, m: w.blob(m.request_id),
        lambda r: PullDenied(request_id=r.blob()),
    ),
    10: (
        TwoPcVote,
        lambda w, m: w.blob(m.request_id).text(m.shard).u8(int(m.value)),
        lambda r: TwoPcVote(request_id=r.blob(), shard=r.text(), value=_value(r)),
    ),
    11: (
        TwoPcDecision,
        lambda w, m: w.blob(m.request_id).u8(int(m.value)),
        lambda r: TwoPcDecision(request_id=r.blob(), value=_value(r)),
    ),
    12: (
        Broadcast,
        lambda w, m: w.i64(m.broadcast_id).text(m.origin).u8(m.hop).raw(canonical_encode(m.payload.request)),
        lambda r: Broadcast(
            broadcast_id=r.i64(),
            origin=r.text(),
            hop=r.u8(),
            payload=RequestSubmission(request=read_request(r)),
        ),
    ),
}

_TAGS = {cls: tag for tag, (cls, _, _) in _CODECS.items()}

Message = (
    RequestSubmission
    | RequestAccepted
    | RequestRejected
    | ClientSubmission
    | LedgerSubmission
    | BlockDelivery
    | PullRequest
    | PullReply
    | PullDenied
    | TwoPcVote
    | TwoPcDecision
    | Broadcast
)


def encode_message(message: Message) -> bytes:
    """Tagged canonical encoding of a message."""
    tag = _TAGS.get(type(message))
    if tag is None:
        raise EncodingError(f"Not a message type: {type(message).__name__}")
    writer = Writer().u8(tag)
    _CODECS[tag][1](writer, message)
    return writer.getvalue()


def decode_message(data: bytes) -> Message:
    """
    Decode a tagged message.

    Raises:
        EncodingError: on an unknown tag, truncated input or trailing bytes
    """
    reader = Reader(data)
    tag = reader.u8()
    if tag not in _CODECS:
        raise EncodingError(f"Unknown message tag {tag}")
    try:
        message = _CODECS[tag][2](reader)
    except EncodingError:
        raise
    except ValueError as e:
        raise EncodingError(f"Invalid {_CODECS[tag][0].__name__} encoding: {e}")
    reader.done()
    return message


for _cls in _TAGS:
    canonical_encode.register(_cls, encode_message)
    register_decoder(_cls, lambda reader, _cls=_cls: _decode_tagged(reader, _cls))


def _decode_tagged(reader: Reader, cls: type) -> Message:
    tag = reader.u8()
    if _CODECS.get(tag, (None,))[0] is not cls:
        raise EncodingError(f"Expected {cls.__name__}, found tag {tag}")
    return _CODECS[tag][2](reader)


def decode_transaction(data: bytes) -> Transaction:
    return canonical_decode(Transaction, data)

