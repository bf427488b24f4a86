"""
The shard state machine.

A `ShardNode` is one node of a (possibly replicated) shard. It validates
update requests into its transient store, scans ledger blocks for hashes it
recognizes, simulates the matching payloads and then runs an atomic commit
session per transaction, either the privacy-preserving pull protocol (PPAC)
or the two-phase commit baseline.

PPAC sessions advance in lockstep with their neighbours. `snapshots[r]` is
the belief a session held when it entered round r; a caller's (i+1)-th pull
is answered with `snapshots[i + 1]`, or with the final belief once the
session finalized at a round <= i. Pulls that cannot be answered yet are
deferred, never blocking the node.

In XO mode a session reads the state left by every block before the one
that orders it. If a session ordered earlier in the same block already
committed one of its accounts, the session is stale and starts with a
discard belief. The verdict only depends on ledger order, so every replica
of a shard reaches the same one.
"""

from enum import Enum
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from .crypto import KeyPair, SignatureScheme, hash_bytes
from .messages import (
    BlockDelivery,
    Message,
    PullDenied,
    PullReply,
    PullRequest,
    RequestAccepted,
    RequestRejected,
    RequestSubmission,
    TwoPcDecision,
    TwoPcVote,
)
from .model import (
    Belief,
    BeliefValue,
    Block,
    Decision,
    EncodingError,
    Payload,
    ShardResponse,
    Transaction,
    TransactionEntry,
    UpdateRequest,
    canonical_encode,
    encode_hash_list,
    normalize_dependencies,
)
from .simnet import Node, TraceEventKind

DEFAULT_GC_TIMEOUT = 5000


class ShardError(ValueError):
    """Raised when a shard refuses an update request or a pull"""


class DuplicateRequest(ShardError):
    pass


class PolicyViolation(ShardError):
    pass


class InvalidSignature(ShardError):
    pass


class SimulationFailure(ShardError):
    pass


class MalformedRequest(ShardError):
    pass


class AccessDenied(ShardError):
    pass


class ExecuteMode(str, Enum):
    XO = "XO"
    OX = "OX"


class Protocol(str, Enum):
    PPAC = "ppac"
    TWO_PC = "2pc"


class StakeholderPolicy(BaseModel):
    """Long-term keys allowed to authorize updates of one account."""

    model_config = ConfigDict(frozen=True)

    owners: frozenset[bytes]
    threshold: int | None = None

    def satisfied_by(self, signers: Iterable[bytes]) -> bool:
        required = len(self.owners) if self.threshold is None else self.threshold
        return len(self.owners & set(signers)) >= required


class EntryStatus(str, Enum):
    PENDING = "pending"
    ORDERED = "ordered"
    COMMITTED = "committed"
    DISCARDED = "discarded"


class TransientEntry(BaseModel):
    request: UpdateRequest
    request_hash: bytes
    payload: Payload
    status: EntryStatus = EntryStatus.PENDING


class SessionStatus(str, Enum):
    WAITING = "waiting"
    RUNNING = "running"
    FINAL = "final"
    COLLECTED = "collected"


class SessionState(BaseModel):
    request_id: bytes
    protocol: Protocol
    position: tuple[int, int] = (0, 0)
    hashes: list[bytes]
    hash_count: int
    accounts: list[str]
    contacts: list[str] = Field(default_factory=list)
    expected_callers: list[str] = Field(default_factory=list)
    participants: list[str] = Field(default_factory=list)
    signatures_ok: bool = True
    status: SessionStatus = SessionStatus.WAITING
    belief: Belief = Field(default_factory=Belief)
    initial_belief: Belief | None = None
    round: int = 0
    round_budget: int = 0
    finalized_round: int | None = None
    snapshots: list[Belief] = Field(default_factory=list)
    call_counts: dict[str, int] = Field(default_factory=dict)
    deferred: list[tuple[str, str]] = Field(default_factory=list)
    final_reply_nodes: set[str] = Field(default_factory=set)
    pulls_sent: dict[str, int] = Field(default_factory=dict)
    replies_seen: dict[str, int] = Field(default_factory=dict)
    contact_index: int = 0
    all_final: bool = True
    write_set: dict[str, int] = Field(default_factory=dict)
    votes: dict[str, BeliefValue] = Field(default_factory=dict)
    started_at: int | None = None
    finalized_at: int | None = None

    @property
    def session(self) -> str:
        return self.request_id.hex()

    @property
    def decision(self) -> Decision | None:
        if self.finalized_round is None:
            return None
        return self.belief.decision


def simulate_payloads(balances: Mapping[str, int], payloads: Sequence[Payload]) -> dict[str, int]:
    """
    Apply payloads in order on top of `balances`.

    Returns:
        the write-set: new balance of every touched account

    Raises:
        SimulationFailure: on an unknown account or a negative balance
    """
    write_set: dict[str, int] = {}
    for payload in payloads:
        for op in payload.ops:
            if op.account not in balances:
                raise SimulationFailure(f"Unknown account {op.account}")
            balance = write_set.get(op.account, balances[op.account]) + op.delta
            if balance < 0:
                raise SimulationFailure(f"Account {op.account} would drop to {balance}")
            write_set[op.account] = balance
    return write_set


def verify_entry(
    scheme: SignatureScheme, entry: TransactionEntry, request: UpdateRequest, hash_list: Sequence[bytes]
) -> bool:
    """Check one entry's ephemeral signatures over the full ordered hash list."""
    if len(entry.ephemeral_sigs) != len(request.stakeholder_epks):
        return False
    signed = encode_hash_list(hash_list)
    return all(
        scheme.verify(epk, signed, sig) for epk, sig in zip(request.stakeholder_epks, entry.ephemeral_sigs)
    )


class ShardNode(Node):
    def __init__(
        self,
        name: str,
        shard_id: str,
        keys: KeyPair,
        scheme: SignatureScheme,
        balances: Mapping[str, int],
        policies: Mapping[str, StakeholderPolicy],
        directory: Mapping[str, Sequence[str]],
        execute_mode: ExecuteMode = ExecuteMode.XO,
        protocol: Protocol = Protocol.PPAC,
        optimize: bool = True,
        stall: bool = False,
        gc_timeout: int = DEFAULT_GC_TIMEOUT,
    ) -> None:
        super().__init__(name)
        self.shard_id = shard_id
        self.keys = keys
        self.scheme = scheme
        self.state_db: dict[str, int] = dict(balances)
        self.committed_at: dict[str, tuple[int, int]] = {}
        self.policies = dict(policies)
        self.directory = {shard: list(nodes) for shard, nodes in directory.items()}
        self._node_shard = {node: shard for shard, nodes in self.directory.items() for node in nodes}
        self.execute_mode = execute_mode
        self.protocol = protocol
        self.optimize = optimize
        self.stall = stall
        self.gc_timeout = gc_timeout
        self.transient_store: dict[bytes, TransientEntry] = {}
        self.sessions: dict[bytes, SessionState] = {}
        self.belief_overrides: dict[bytes, Decision] = {}
        self._seen: set[tuple[bytes, bytes]] = set()
        self._queue: list[bytes] = []
        self._orphan_pulls: dict[bytes, list[tuple[str, str]]] = {}
        self._early_votes: dict[bytes, list[tuple[str, TwoPcVote]]] = {}
        self._early_decisions: dict[bytes, list[tuple[str, TwoPcDecision]]] = {}
        self._next_height = 0
        self._blocks: dict[int, Block] = {}

    def shard_of(self, node: str) -> str | None:
        return self._node_shard.get(node)

    def on_message(self, sender: str, message: Message) -> None:
        match message:
            case RequestSubmission(request=request):
                self._on_request(sender, request)
            case BlockDelivery(block=block):
                self._on_block(block)
            case PullRequest():
                self.ppac_pull_belief(message.request_id, message.caller, sender)
            case PullReply() | PullDenied():
                self._on_pull_reply(sender, message)
            case TwoPcVote():
                self._on_vote(sender, message)
            case TwoPcDecision():
                self._on_decision(sender, message)
            case _:
                logger.warning(f"{self.name} ignoring unexpected {type(message).__name__} from {sender}")

    # -----------------------------------------------------------------------
    # Update requests
    # -----------------------------------------------------------------------

    def _on_request(self, sender: str, request: UpdateRequest) -> None:
        try:
            response = self.handle_update_request(request)
        except ShardError as e:
            logger.warning(f"{self.name} rejected request {request.id.hex()[:8]}: {e}")
            self.send(
                sender,
                RequestRejected(request_hash=hash_bytes(canonical_encode(request)), reason=type(e).__name__),
            )
            return
        self.send(sender, RequestAccepted(response=response))

    def handle_update_request(self, request: UpdateRequest) -> ShardResponse:
        """
        Validate an update request and keep it in the transient store.

        Raises:
            MalformedRequest: the request names this shard as a dependency or
                its payload does not decode
            DuplicateRequest: the (id, nonce) pair was accepted before
            InvalidSignature: a long-term signature does not verify
            PolicyViolation: a touched account is unknown or its owners did
                not all sign
            SimulationFailure: XO mode only, the payload cannot be applied to
                the current state; the request is still kept
        """
        if any(dep.shard == self.shard_id for dep in request.deps):
            raise MalformedRequest(f"Request lists {self.shard_id} as its own dependency")
        try:
            payload = request.decoded_payload()
        except EncodingError as e:
            raise MalformedRequest(f"Undecodable payload: {e}")
        if (request.id, request.nonce) in self._seen:
            raise DuplicateRequest(f"Request {request.id.hex()} was already received")

        signed = request.signing_bytes()
        for pk, signature in zip(request.stakeholder_pks, request.signatures):
            if not self.scheme.verify(pk, signed, signature):
                raise InvalidSignature(f"Signature of {pk[:4].hex()} does not verify")

        for account in payload.accounts:
            policy = self.policies.get(account)
            if policy is None:
                raise PolicyViolation(f"Unknown account {account}")
            if not policy.satisfied_by(request.stakeholder_pks):
                raise PolicyViolation(f"Stakeholder policy of {account} is not satisfied")

        self._seen.add((request.id, request.nonce))
        request_hash = hash_bytes(canonical_encode(request))
        self.transient_store[request_hash] = TransientEntry(request=request, request_hash=request_hash, payload=payload)
        if self.execute_mode == ExecuteMode.XO:
            # The entry stays stored: another replica may accept the request
            # and the ledger may order it anyway.
            simulate_payloads(self.state_db, [payload])
        logger.debug(f"{self.name} stored request {request_hash.hex()[:8]} for session {request.id.hex()[:8]}")
        return ShardResponse(request_hash=request_hash, shard_signature=self.scheme.sign(self.keys.secret, request_hash))

    # -----------------------------------------------------------------------
    # Blocks
    # -----------------------------------------------------------------------

    def _on_block(self, block: Block) -> None:
        if len(self.directory.get(self.shard_id, [])) > 1:
            # A broadcast request reaches every replica within delta_max of
            # the first one, which answered before the block was cut.
            self.call_later(self.net.config.delta_max, lambda: self._accept_block(block))
        else:
            self._accept_block(block)

    def _accept_block(self, block: Block) -> None:
        self._blocks[block.height] = block
        while self._next_height in self._blocks:
            self.scan_block(self._blocks.pop(self._next_height))
            self._next_height += 1

    def scan_block(self, block: Block) -> list[SessionState]:
        """
        Open a session for every transaction in `block` carrying a hash from
        the transient store. Unrecognized hashes are skipped.

        Returns:
            the sessions created, in transaction order
        """
        created = []
        for index, tx in enumerate(block.txs):
            session = self._open_session(tx, (block.height, index))
            if session is not None:
                created.append(session)
        self._start_ready()
        return created

    def _open_session(self, tx: Transaction, position: tuple[int, int]) -> SessionState | None:
        hashes = tx.hash_list()
        mine = [
            entry
            for entry in tx.entries
            if entry.request_hash in self.transient_store
            and self.transient_store[entry.request_hash].status == EntryStatus.PENDING
        ]
        if not mine:
            return None
        stored = [self.transient_store[entry.request_hash] for entry in mine]
        request_id = stored[0].request.id
        if request_id in self.sessions:
            logger.warning(f"{self.name} saw session {request_id.hex()[:8]} again; discarding late entries")
            for item in stored:
                item.status = EntryStatus.DISCARDED
            return None

        signatures_ok = all(item.request.id == request_id for item in stored) and all(
            verify_entry(self.scheme, entry, item.request, hashes) for entry, item in zip(mine, stored)
        )
        deps = normalize_dependencies({dep for item in stored for dep in item.request.deps})
        accounts = sorted({account for item in stored for account in item.payload.accounts})
        session = SessionState(
            request_id=request_id,
            position=position,
            protocol=self.protocol,
            hashes=[item.request_hash for item in stored],
            hash_count=len(hashes),
            accounts=accounts,
            signatures_ok=signatures_ok,
        )
        if self.protocol == Protocol.PPAC:
            session.contacts = sorted(dep.shard for dep in deps if dep.contacts)
            session.expected_callers = sorted(dep.shard for dep in deps if dep.expects_call)
        else:
            session.participants = sorted({self.shard_id} | {dep.shard for dep in deps})
        for item in stored:
            item.status = EntryStatus.ORDERED
        self.sessions[request_id] = session
        self._queue.append(request_id)
        for caller_node, caller in self._orphan_pulls.pop(request_id, []):
            self.ppac_pull_belief(request_id, caller, caller_node)
        if not signatures_ok:
            logger.warning(f"{self.name} found invalid ephemeral signatures in session {session.session[:8]}")
        return session

    def _start_ready(self) -> None:
        """Start waiting sessions in ledger order while their accounts are free."""
        while True:
            busy = {
                account
                for session in self.sessions.values()
                if session.status == SessionStatus.RUNNING
                for account in session.accounts
            }
            ready = None
            for request_id in self._queue:
                accounts = set(self.sessions[request_id].accounts)
                if not accounts & busy:
                    ready = request_id
                    break
                busy |= accounts
            if ready is None:
                return
            self._queue.remove(ready)
            self._begin(self.sessions[ready])

    def _begin(self, session: SessionState) -> None:
        session.status = SessionStatus.RUNNING
        session.started_at = self.net.now
        ok = session.signatures_ok
        entries = [self.transient_store[h] for h in session.hashes]
        if ok and self.execute_mode == ExecuteMode.XO:
            height = session.position[0]
            stale = [account for account in session.accounts if self.committed_at.get(account, (-1, 0))[0] == height]
            if stale:
                logger.warning(f"{self.name} session {session.session[:8]} is stale on {stale}")
                ok = False
        if ok:
            try:
                session.write_set = simulate_payloads(self.state_db, [entry.payload for entry in entries])
            except SimulationFailure as e:
                logger.info(f"{self.name} session {session.session[:8]} failed to simulate: {e}")
                ok = False
        override = self.belief_overrides.get(session.request_id)
        if override is not None:
            ok = override == Decision.COMMIT
        if not ok:
            session.write_set = {}
        session.belief = Belief(value=BeliefValue.TENTATIVE_COMMIT if ok else BeliefValue.DISCARD)
        session.initial_belief = session.belief
        self.record(
            TraceEventKind.STATE_CHANGE,
            f"{self.shard_id} started session with belief {session.belief.decision.value}",
            session=session.session,
            shard=self.shard_id,
            initial=session.belief.decision.value,
            hash_count=session.hash_count,
        )
        if session.protocol == Protocol.PPAC:
            self.ppac_validate_tx(session.request_id, session.belief, session.hash_count, session.contacts)
        else:
            self.twopc_participate(session.request_id, session.belief, session.participants)

    # -----------------------------------------------------------------------
    # PPAC
    # -----------------------------------------------------------------------

    def ppac_validate_tx(
        self, request_id: bytes, initial_belief: Belief, hash_count: int, contacts: Sequence[str]
    ) -> Decision | None:
        """
        Run the pull loop of one session.

        Finalizes at round 0 when there is nobody to ask or the belief is
        already discard. Otherwise rounds 1..hash_count-len(contacts) pull
        every contact in order, conjoining the replies, and stop early on a
        discard or, with the optimization on, once every contact answered
        with a final belief.

        Returns:
            the decision if the session finalized right away, None while it
            waits for replies
        """
        session = self.sessions[request_id]
        session.belief = initial_belief
        session.hash_count = hash_count
        session.contacts = sorted(contacts)
        session.round = 0
        session.snapshots = [initial_belief]
        if not session.contacts or not initial_belief.commits:
            self._finalize(session)
            return session.decision
        session.round_budget = max(1, hash_count - len(session.contacts))
        self._advance_round(session)
        return session.decision

    def _advance_round(self, session: SessionState) -> None:
        session.round += 1
        session.snapshots.append(session.belief)
        session.contact_index = 0
        session.all_final = True
        self.record(
            TraceEventKind.ROUND_ADVANCE,
            f"{self.shard_id} entered round {session.round}",
            session=session.session,
            shard=self.shard_id,
            round=session.round,
        )
        self._serve_deferred(session)
        self._pull_next(session)

    def _pull_next(self, session: SessionState) -> None:
        contact = session.contacts[session.contact_index]
        session.pulls_sent[contact] = session.pulls_sent.get(contact, 0) + 1
        for node in self.directory.get(contact, []):
            self.send(node, PullRequest(request_id=session.request_id, caller=self.shard_id))

    def _on_pull_reply(self, sender: str, message: PullReply | PullDenied) -> None:
        session = self.sessions.get(message.request_id)
        contact = self.shard_of(sender)
        if session is None or contact is None:
            return
        index = session.replies_seen.get(sender, 0)
        session.replies_seen[sender] = index + 1
        if (
            session.status != SessionStatus.RUNNING
            or session.protocol != Protocol.PPAC
            or session.contact_index >= len(session.contacts)
            or session.contacts[session.contact_index] != contact
            or index != session.pulls_sent.get(contact, 0) - 1
        ):
            return

        if isinstance(message, PullDenied):
            logger.warning(f"{self.name} was denied by {sender} in session {session.session[:8]}; treating as discard")
            reply = Belief(value=BeliefValue.DISCARD, is_final=True)
        else:
            reply = message.belief
        session.all_final = session.all_final and reply.is_final
        session.belief = session.belief.conjoin(reply)
        if not session.belief.commits:
            self._finalize(session)
            return

        session.contact_index += 1
        if session.contact_index < len(session.contacts):
            self._pull_next(session)
        elif (self.optimize and session.all_final) or session.round >= session.round_budget:
            self._finalize(session)
        else:
            self._advance_round(session)

    def ppac_pull_belief(self, request_id: bytes, caller: str, caller_node: str) -> PullReply | PullDenied | None:
        """
        Answer a belief pull from `caller_node` of shard `caller`.

        Returns:
            the reply sent, or None when the pull is deferred (session not
            yet known or not yet far enough) or ignored by a stalling shard
        """
        if self.stall:
            logger.debug(f"{self.name} stalling on pull from {caller_node}")
            return None
        session = self.sessions.get(request_id)
        if session is None:
            self._orphan_pulls.setdefault(request_id, []).append((caller_node, caller))
            return None
        try:
            self._check_access(session, caller, caller_node)
        except AccessDenied as e:
            logger.warning(f"{self.name} denied pull: {e}")
            denied = PullDenied(request_id=request_id)
            self.send(caller_node, denied)
            return denied
        session.deferred.append((caller_node, caller))
        return self._serve_deferred(session).get(caller_node)

    def _check_access(self, session: SessionState, caller: str, caller_node: str) -> None:
        if session.protocol != Protocol.PPAC:
            raise AccessDenied(f"Session {session.session[:8]} does not run PPAC")
        if self.shard_of(caller_node) != caller:
            raise AccessDenied(f"{caller_node} is not a node of {caller}")
        if caller not in session.expected_callers:
            raise AccessDenied(f"{caller} is not an expected caller of session {session.session[:8]}")

    def _answer(self, session: SessionState, caller_node: str) -> PullReply | None:
        i = session.call_counts.get(caller_node, 0)
        final = session.status in (SessionStatus.FINAL, SessionStatus.COLLECTED)
        if final and i >= session.finalized_round:
            return PullReply(request_id=session.request_id, value=session.belief.value, is_final=True)
        if session.status != SessionStatus.WAITING and session.round > i and i + 1 < len(session.snapshots):
            snapshot = session.snapshots[i + 1]
            return PullReply(request_id=session.request_id, value=snapshot.value, is_final=False)
        if session.status == SessionStatus.COLLECTED and not session.snapshots:
            # Snapshots go only once every caller got a final reply.
            return PullReply(request_id=session.request_id, value=session.belief.value, is_final=True)
        return None

    def _serve_deferred(self, session: SessionState) -> dict[str, PullReply]:
        """Answer deferred pulls in arrival order, keeping each caller's pulls in sequence."""
        sent: dict[str, PullReply] = {}
        remaining = []
        blocked: set[str] = set()
        for caller_node, caller in session.deferred:
            reply = None if caller_node in blocked else self._answer(session, caller_node)
            if reply is None:
                blocked.add(caller_node)
                remaining.append((caller_node, caller))
                continue
            session.call_counts[caller_node] = session.call_counts.get(caller_node, 0) + 1
            if reply.is_final:
                session.final_reply_nodes.add(caller_node)
            self.send(caller_node, reply)
            sent[caller_node] = reply
        session.deferred = remaining
        self._maybe_collect(session)
        return sent

    def _finalize(self, session: SessionState) -> None:
        session.belief = session.belief.finalized()
        session.finalized_round = session.round
        session.finalized_at = self.net.now
        session.status = SessionStatus.FINAL
        committed = session.belief.commits
        for request_hash in session.hashes:
            self.transient_store[request_hash].status = EntryStatus.COMMITTED if committed else EntryStatus.DISCARDED
        if committed:
            for account, balance in session.write_set.items():
                self.state_db[account] = balance
                self.committed_at[account] = session.position
        self.record(
            TraceEventKind.FINALIZE,
            f"{self.shard_id} finalized {session.belief.decision.value} in round {session.round}",
            session=session.session,
            shard=self.shard_id,
            round=session.round,
            decision=session.belief.decision.value,
            protocol=session.protocol.value,
        )
        logger.info(
            f"{self.name} finalized session {session.session[:8]}: {session.belief.decision.value} "
            f"after {session.round} round(s)"
        )
        self.call_later(self.gc_timeout, lambda: self._collect(session, "timeout"))
        self._serve_deferred(session)
        self._start_ready()

    def _callers_informed(self, session: SessionState) -> bool:
        callers = {node for shard in session.expected_callers for node in self.directory.get(shard, [])}
        return session.protocol == Protocol.TWO_PC or callers <= session.final_reply_nodes

    def _maybe_collect(self, session: SessionState) -> None:
        if session.status == SessionStatus.FINAL and self._callers_informed(session):
            self._collect(session, "all callers informed")
        elif session.status == SessionStatus.COLLECTED and session.snapshots and self._callers_informed(session):
            session.snapshots = []
            session.call_counts = {}

    def _collect(self, session: SessionState, reason: str) -> None:
        """
        Drop the write-set and votes of a finalized session. Round snapshots
        stay until every expected caller got a final reply, so a lagging
        caller is still answered in lockstep.
        """
        if session.status != SessionStatus.FINAL:
            return
        session.status = SessionStatus.COLLECTED
        session.write_set = {}
        session.votes = {}
        if self._callers_informed(session):
            session.snapshots = []
            session.call_counts = {}
        self.record(
            TraceEventKind.STATE_CHANGE,
            f"{self.shard_id} collected session ({reason})",
            session=session.session,
            shard=self.shard_id,
        )
        self._serve_deferred(session)

    # -----------------------------------------------------------------------
    # Two-phase commit
    # -----------------------------------------------------------------------

    def coordinator_of(self, participants: Sequence[str]) -> str:
        return min(participants)

    def twopc_participate(self, request_id: bytes, initial_belief: Belief, participants: Sequence[str]) -> None:
        """Vote towards the coordinator, or decide alone when there is no one else."""
        session = self.sessions[request_id]
        session.participants = sorted(participants)
        session.round = 0
        if len(session.participants) == 1:
            self._finalize(session)
            return
        coordinator = self.coordinator_of(session.participants)
        if coordinator == self.shard_id:
            session.votes[self.shard_id] = initial_belief.value
            for sender, vote in self._early_votes.pop(request_id, []):
                self._on_vote(sender, vote)
            self.twopc_coordinate(request_id)
        else:
            vote = TwoPcVote(request_id=request_id, shard=self.shard_id, value=initial_belief.value)
            for node in self.directory.get(coordinator, []):
                self.send(node, vote)
            for sender, decision in self._early_decisions.pop(request_id, []):
                self._on_decision(sender, decision)

    def twopc_coordinate(self, request_id: bytes) -> Decision | None:
        """Decide once every participant voted: commit iff all votes commit."""
        session = self.sessions[request_id]
        if session.status != SessionStatus.RUNNING or set(session.votes) != set(session.participants):
            return None
        commit = all(value == BeliefValue.TENTATIVE_COMMIT for value in session.votes.values())
        value = BeliefValue.TENTATIVE_COMMIT if commit else BeliefValue.DISCARD
        decision = TwoPcDecision(request_id=request_id, value=value)
        for shard in session.participants:
            if shard == self.shard_id:
                continue
            for node in self.directory.get(shard, []):
                self.send(node, decision)
        session.belief = Belief(value=value)
        session.round = 1
        self._finalize(session)
        return session.decision

    def _on_vote(self, sender: str, vote: TwoPcVote) -> None:
        session = self.sessions.get(vote.request_id)
        if session is None or session.status == SessionStatus.WAITING:
            self._early_votes.setdefault(vote.request_id, []).append((sender, vote))
            return
        if session.status != SessionStatus.RUNNING or session.protocol != Protocol.TWO_PC:
            return
        if self.shard_of(sender) != vote.shard or vote.shard not in session.participants:
            logger.warning(f"{self.name} ignoring vote of {vote.shard} from {sender}")
            return
        session.votes.setdefault(vote.shard, vote.value)
        self.twopc_coordinate(vote.request_id)

    def _on_decision(self, sender: str, decision: TwoPcDecision) -> None:
        session = self.sessions.get(decision.request_id)
        if session is None or session.status == SessionStatus.WAITING:
            self._early_decisions.setdefault(decision.request_id, []).append((sender, decision))
            return
        if session.status != SessionStatus.RUNNING or session.protocol != Protocol.TWO_PC:
            return
        if self.shard_of(sender) != self.coordinator_of(session.participants):
            logger.warning(f"{self.name} ignoring decision from non-coordinator {sender}")
            return
        session.belief = Belief(value=decision.value)
        session.round = 1
        self._finalize(session)

    # -----------------------------------------------------------------------
    # Introspection
    # -----------------------------------------------------------------------

    def outcome(self, request_id: bytes) -> "SessionOutcome | None":
        session = self.sessions.get(request_id)
        if session is None:
            return None
        return SessionOutcome(
            shard=self.shard_id,
            node=self.name,
            initial=session.initial_belief.decision if session.initial_belief else None,
            decision=session.decision,
            round=session.finalized_round,
            started_at=session.started_at,
            finalized_at=session.finalized_at,
        )


class SessionOutcome(NamedTuple):
    """How one node saw one session end"""

    shard: str
    node: str
    initial: Decision | None
    decision: Decision | None
    round: int | None
    started_at: int | None
    finalized_at: int | None


class ReplicatedShard(NamedTuple):
    shard_id: str
    nodes: list[ShardNode]
    crash_plan: dict[str, int]


def node_names(shard_id: str, node_count: int) -> list[str]:
    return [f"{shard_id}/{i}" for i in range(node_count)]


def replicate(
    shard_id: str,
    node_count: int,
    crash_plan: Mapping[int, int],
    directory: Mapping[str, Sequence[str]],
    **node_args: Any,
) -> ReplicatedShard:
    """
    Build the `node_count` nodes of one shard. They share the shard's keys
    and start from the same state.

    Args:
        crash_plan: node index -> virtual crash time

    Raises:
        ValueError: on a node count below 1 or a crash for a missing node
    """
    if node_count < 1:
        raise ValueError(f"Shard {shard_id} needs at least one node, got {node_count}")
    names = node_names(shard_id, node_count)
    unknown = sorted(index for index in crash_plan if not 0 <= index < node_count)
    if unknown:
        raise ValueError(f"Crash plan of {shard_id} names missing nodes {unknown}")
    if len(crash_plan) >= node_count:
        logger.warning(f"Every node of {shard_id} is scheduled to crash; its sessions will block")
    nodes = [ShardNode(name, shard_id, directory=directory, **node_args) for name in names]
    return ReplicatedShard(
        shard_id=shard_id,
        nodes=nodes,
        crash_plan={names[index]: time for index, time in sorted(crash_plan.items())},
    )
