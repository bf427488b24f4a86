"""
Stakeholder and client roles.

Stakeholders negotiate a transaction off-chain, send one signed update
request to every involved shard, check the shard responses, bundle the
request hashes into a transaction signed with per-transaction ephemeral
keys, and hand it to a randomly chosen client from a trusted pool. The
client signs with its own key and submits to the ledger, so nothing on the
ledger links back to a stakeholder's long-term identity.
"""

import random
from typing import Mapping, NamedTuple, Sequence

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from .crypto import KeyKind, KeyPair, SignatureScheme, hash_bytes
from .messages import ClientSubmission, LedgerSubmission, Message, RequestAccepted, RequestRejected, RequestSubmission
from .model import (
    HASH_SIZE,
    ID_SIZE,
    NONCE_SIZE,
    Payload,
    ShardResponse,
    SignedDependency,
    Transaction,
    TransactionBody,
    TransactionEntry,
    UpdateRequest,
    canonical_encode,
    encode_hash_list,
    normalize_dependencies,
    validate_dependency_consistency,
)
from .simnet import Node, TraceEventKind


class NegotiationError(ValueError):
    """Raised when negotiated terms cannot produce a consistent set of requests"""


class HashMismatch(ValueError):
    """Raised when a shard response does not carry the hash of the request sent"""


class BadShardSignature(ValueError):
    """Raised when a shard response is not signed by the target shard"""


class MissingEphemeralKey(ValueError):
    """Raised when a stakeholder has no ephemeral key registered for a request"""


class EmptyClientPool(ValueError):
    pass


class StakeholderIdentity(BaseModel):
    name: str
    long_term: KeyPair
    ephemeral_per_tx: dict[bytes, KeyPair] = Field(default_factory=dict)

    def ephemeral_for(self, request_id: bytes, scheme: SignatureScheme, rng_seed: int) -> KeyPair:
        """The ephemeral key of one transaction, created on first use."""
        if request_id not in self.ephemeral_per_tx:
            key = scheme.keygen(rng_seed, KeyKind.EPHEMERAL)
            if any(existing.public == key.public for existing in self.ephemeral_per_tx.values()):
                raise NegotiationError(f"{self.name} would reuse an ephemeral key")
            self.ephemeral_per_tx[request_id] = key
        return self.ephemeral_per_tx[request_id]

    def ephemeral(self, request_id: bytes) -> KeyPair:
        try:
            return self.ephemeral_per_tx[request_id]
        except KeyError:
            raise MissingEphemeralKey(f"{self.name} has no ephemeral key for {request_id.hex()}")


class ClientIdentity(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    keys: KeyPair

    def sign(self, body: TransactionBody, scheme: SignatureScheme) -> Transaction:
        return Transaction(
            entries=body.entries,
            client_epk=self.keys.public,
            client_sig=scheme.sign(self.keys.secret, body.signing_bytes()),
        )


class RequestTerms(BaseModel):
    model_config = ConfigDict(frozen=True)

    shard: str
    payload: Payload
    deps: tuple[SignedDependency, ...] = ()
    signers: tuple[str, ...] = Field(min_length=1)


class TransactionTerms(BaseModel):
    model_config = ConfigDict(frozen=True)

    requests: tuple[RequestTerms, ...] = Field(min_length=1)
    pad_to: int = Field(default=0, ge=0)


class AddressedRequest(NamedTuple):
    """An update request and the shard it goes to"""

    shard: str
    request: UpdateRequest

    @property
    def request_hash(self) -> bytes:
        return hash_bytes(canonical_encode(self.request))


class Submission(NamedTuple):
    client: ClientIdentity
    transaction: Transaction


def negotiate(
    parties: Mapping[str, StakeholderIdentity],
    terms: TransactionTerms,
    scheme: SignatureScheme,
    rng: random.Random,
) -> list[AddressedRequest]:
    """
    Turn agreed terms into signed update requests sharing one id.

    Every signer gets a fresh ephemeral key for the transaction and signs
    each of its requests with its long-term key.

    Raises:
        NegotiationError: a signer is unknown, a request depends on its own
            shard, or the dependency sets are not reciprocal
    """
    deps_by_shard: dict[str, tuple[SignedDependency, ...]] = {}
    for term in terms.requests:
        deps = normalize_dependencies(term.deps)
        if any(dep.shard == term.shard for dep in deps):
            raise NegotiationError(f"Request for {term.shard} depends on its own shard")
        if deps_by_shard.setdefault(term.shard, deps) != deps:
            raise NegotiationError(f"Requests for {term.shard} disagree on their dependency sets")
    violations = validate_dependency_consistency(deps_by_shard)
    if violations:
        raise NegotiationError("; ".join(str(v) for v in violations))

    request_id = rng.randbytes(ID_SIZE)
    signers = sorted({name for term in terms.requests for name in term.signers})
    unknown = [name for name in signers if name not in parties]
    if unknown:
        raise NegotiationError(f"Unknown stakeholders {unknown}")
    ephemeral = {name: parties[name].ephemeral_for(request_id, scheme, rng.getrandbits(64)) for name in signers}

    requests = []
    for term in terms.requests:
        fields = dict(
            id=request_id,
            nonce=rng.randbytes(NONCE_SIZE),
            payload=canonical_encode(term.payload),
            deps=deps_by_shard[term.shard],
            stakeholder_pks=tuple(parties[name].long_term.public for name in term.signers),
            stakeholder_epks=tuple(ephemeral[name].public for name in term.signers),
        )
        signing_bytes = UpdateRequest.model_construct(signatures=(), **fields).signing_bytes()
        signatures = tuple(scheme.sign(parties[name].long_term.secret, signing_bytes) for name in term.signers)
        requests.append(AddressedRequest(shard=term.shard, request=UpdateRequest(signatures=signatures, **fields)))
    logger.info(f"Negotiated {len(requests)} request(s) for transaction {request_id.hex()[:8]} among {signers}")
    return requests


def collect_and_verify(
    requests: Sequence[AddressedRequest],
    responses: Sequence[ShardResponse],
    shard_keys: Mapping[str, bytes],
    scheme: SignatureScheme,
) -> None:
    """
    Check that response i carries the hash of request i and is signed by the
    shard request i went to.

    Raises:
        HashMismatch: naming every shard whose response hash is wrong
        BadShardSignature: naming the first shard whose signature fails
    """
    if len(requests) != len(responses):
        raise HashMismatch(f"Expected {len(requests)} responses, got {len(responses)}")
    mismatched = [
        addressed.shard
        for addressed, response in zip(requests, responses)
        if response.request_hash != addressed.request_hash
    ]
    if mismatched:
        raise HashMismatch(f"Response hashes do not match the requests sent to {mismatched}")
    for addressed, response in zip(requests, responses):
        key = shard_keys.get(addressed.shard)
        if key is None or not scheme.verify(key, response.request_hash, response.shard_signature):
            raise BadShardSignature(f"Response for {addressed.shard} is not signed by {addressed.shard}")


def create_transaction(
    requests: Sequence[AddressedRequest],
    responses: Sequence[ShardResponse],
    parties: Mapping[str, StakeholderIdentity],
    scheme: SignatureScheme,
    rng: random.Random | None = None,
    pad_to: int = 0,
) -> TransactionBody:
    """
    Bundle the response hashes, sorted by hash bytes, and have every
    stakeholder of every request sign the full ordered hash list with the
    ephemeral key registered in that request.

    With `pad_to` above the number of requests, random hashes carrying
    signatures from throwaway keys are mixed in; shards skip them as unknown.

    Raises:
        MissingEphemeralKey: a request names a key no party holds
    """
    by_public = {identity.long_term.public: identity for identity in parties.values()}
    real = [response.request_hash for response in responses]
    bogus: list[bytes] = []
    if pad_to > len(real):
        if rng is None:
            raise ValueError("Padding needs a random source")
        bogus = [rng.randbytes(HASH_SIZE) for _ in range(pad_to - len(real))]
    hash_list = sorted(real + bogus)
    signed = encode_hash_list(hash_list)

    sigs_by_hash: dict[bytes, tuple[bytes, ...]] = {}
    for addressed, response in zip(requests, responses):
        request = addressed.request
        sigs = []
        for pk, epk in zip(request.stakeholder_pks, request.stakeholder_epks):
            identity = by_public.get(pk)
            if identity is None:
                raise MissingEphemeralKey(f"No stakeholder holds long-term key {pk[:4].hex()}")
            key = identity.ephemeral(request.id)
            if key.public != epk:
                raise MissingEphemeralKey(f"{identity.name} registered a different ephemeral key")
            sigs.append(scheme.sign(key.secret, signed))
        sigs_by_hash[response.request_hash] = tuple(sigs)
    for fake in bogus:
        throwaway = [scheme.keygen(rng.getrandbits(64), KeyKind.EPHEMERAL) for _ in range(rng.randint(1, 2))]
        sigs_by_hash[fake] = tuple(scheme.sign(key.secret, signed) for key in throwaway)

    entries = tuple(TransactionEntry(request_hash=h, ephemeral_sigs=sigs_by_hash[h]) for h in hash_list)
    return TransactionBody(entries=entries)


def choose_client(pool: Sequence[ClientIdentity], rng: random.Random) -> ClientIdentity:
    if not pool:
        raise EmptyClientPool("No client available to submit the transaction")
    return pool[rng.randrange(len(pool))]


def submit_via_client(
    body: TransactionBody, pool: Sequence[ClientIdentity], rng: random.Random, scheme: SignatureScheme
) -> Submission:
    """Pick a client uniformly at random and let it sign the bundle."""
    client = choose_client(pool, rng)
    return Submission(client=client, transaction=client.sign(body, scheme))


def encode_for_ledger(tx: Transaction) -> bytes:
    """Bytes a client puts on the wire towards the ledger."""
    return canonical_encode(tx)


class TransactionPlan(BaseModel):
    label: str
    requests: list[AddressedRequest]
    submit_at: int = 0
    pad_to: int = 0
    forge_for: list[str] = Field(default_factory=list)


class _Progress(BaseModel):
    responses: dict[int, ShardResponse] = Field(default_factory=dict)
    counts: dict[int, int] = Field(default_factory=dict)
    aborted: bool = False
    submitted: bool = False


class StakeholderNode(Node):
    """The stakeholder that leads a set of transactions through submission."""

    def __init__(
        self,
        name: str,
        plans: Sequence[TransactionPlan],
        parties: Mapping[str, StakeholderIdentity],
        directory: Mapping[str, Sequence[str]],
        shard_keys: Mapping[str, bytes],
        clients: Sequence[ClientIdentity],
        scheme: SignatureScheme,
        rng: random.Random,
    ) -> None:
        super().__init__(name)
        self.plans = {plan.label: plan for plan in plans}
        self.parties = parties
        self.directory = directory
        self.shard_keys = shard_keys
        self.clients = list(clients)
        self.scheme = scheme
        self.rng = rng
        self.progress = {label: _Progress() for label in self.plans}
        self._by_hash = {
            addressed.request_hash: (plan.label, index)
            for plan in plans
            for index, addressed in enumerate(plan.requests)
        }

    def on_start(self) -> None:
        for plan in self.plans.values():
            self.call_later(plan.submit_at, lambda plan=plan: self._send_requests(plan))

    def _send_requests(self, plan: TransactionPlan) -> None:
        self.record(
            TraceEventKind.STATE_CHANGE,
            f"sending {len(plan.requests)} request(s) of {plan.label}",
            tx=plan.label,
            session=plan.requests[0].request.id.hex(),
        )
        for addressed in plan.requests:
            nodes = list(self.directory[addressed.shard])
            submission = RequestSubmission(request=addressed.request)
            if len(nodes) == 1:
                self.send(nodes[0], submission)
            else:
                self.net.reliable_broadcast(self.name, submission, nodes)

    def on_message(self, sender: str, message: Message) -> None:
        match message:
            case RequestAccepted(response=response):
                self._on_response(sender, response.request_hash, response)
            case RequestRejected(request_hash=request_hash, reason=reason):
                self._on_response(sender, request_hash, None, reason)
            case _:
                logger.warning(f"{self.name} ignoring {type(message).__name__} from {sender}")

    def _on_response(
        self, sender: str, request_hash: bytes, response: ShardResponse | None, reason: str = ""
    ) -> None:
        located = self._by_hash.get(request_hash)
        if located is None:
            logger.warning(f"{self.name} got a response for an unknown request from {sender}")
            return
        label, index = located
        progress = self.progress[label]
        progress.counts[index] = progress.counts.get(index, 0) + 1
        if progress.aborted or progress.submitted or index in progress.responses:
            return
        if response is None:
            progress.aborted = True
            logger.warning(f"{self.name} aborting {label}: {sender} rejected with {reason}")
            self.record(TraceEventKind.STATE_CHANGE, f"aborted {label}: {reason}", tx=label)
            return
        progress.responses[index] = response
        plan = self.plans[label]
        if len(progress.responses) == len(plan.requests):
            self._submit(plan, progress)

    def _submit(self, plan: TransactionPlan, progress: _Progress) -> None:
        responses = [progress.responses[i] for i in range(len(plan.requests))]
        try:
            collect_and_verify(plan.requests, responses, self.shard_keys, self.scheme)
            body = create_transaction(plan.requests, responses, self.parties, self.scheme, self.rng, plan.pad_to)
        except (HashMismatch, BadShardSignature, MissingEphemeralKey) as e:
            progress.aborted = True
            logger.warning(f"{self.name} aborting {plan.label}: {e}")
            self.record(TraceEventKind.STATE_CHANGE, f"aborted {plan.label}: {type(e).__name__}", tx=plan.label)
            return
        if plan.forge_for:
            body = _forge(body, {a.request_hash for a in plan.requests if a.shard in plan.forge_for})
        client = choose_client(self.clients, self.rng)
        progress.submitted = True
        self.record(TraceEventKind.STATE_CHANGE, f"handing {plan.label} to {client.name}", tx=plan.label)
        self.send(client.name, ClientSubmission(entries=body.entries))


def _forge(body: TransactionBody, hashes: set[bytes]) -> TransactionBody:
    """Flip one byte of the first ephemeral signature of the given entries."""
    entries = []
    for entry in body.entries:
        if entry.request_hash in hashes and entry.ephemeral_sigs:
            first = entry.ephemeral_sigs[0]
            forged = bytes([first[0] ^ 0x01]) + first[1:]
            entry = TransactionEntry(request_hash=entry.request_hash, ephemeral_sigs=(forged,) + entry.ephemeral_sigs[1:])
        entries.append(entry)
    return TransactionBody(entries=tuple(entries))


class ClientNode(Node):
    def __init__(self, identity: ClientIdentity, scheme: SignatureScheme, ledger: str = "ledger") -> None:
        super().__init__(identity.name)
        self.identity = identity
        self.scheme = scheme
        self.ledger = ledger

    def on_message(self, sender: str, message: Message) -> None:
        if not isinstance(message, ClientSubmission):
            logger.warning(f"{self.name} ignoring {type(message).__name__} from {sender}")
            return
        tx = self.identity.sign(TransactionBody(entries=message.entries), self.scheme)
        self.send(self.ledger, LedgerSubmission(transaction=encode_for_ledger(tx)))
