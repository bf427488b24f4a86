"""
Observational privacy audit over a simulation trace.

Every byte string a role received is scanned for sensitive values it must
not see. Shard identifiers are searched in their canonical field encoding
(length prefix plus text), the way they appear inside any message, so short
human-readable identifiers do not produce spurious hits.
"""

from enum import Enum
from typing import Iterable, Mapping, NamedTuple, Sequence

from pydantic import BaseModel, Field

from .messages import LedgerSubmission, decode_message, decode_transaction, encode_message
from .model import EncodingError, encode_shard_field
from .simnet import Trace, TraceEvent
from .stakeholder import AddressedRequest

PPAC_MESSAGES = frozenset({"PullRequest", "PullReply", "PullDenied"})


class SecretClass(str, Enum):
    LONG_TERM_KEY = "long-term-key"
    EPHEMERAL_KEY = "ephemeral-key"
    SHARD_ID = "shard-id"
    PAYLOAD = "payload"
    DEPENDENCY_SET = "dependency-set"
    MESSAGE_SHAPE = "message-shape"


class RequestSecret(BaseModel):
    shard: str
    payload: bytes
    deps: bytes
    dep_shards: list[str]
    stakeholder_pks: list[bytes]
    encoded: bytes


class ScenarioSecrets(BaseModel):
    stakeholder_pks: dict[str, bytes] = Field(default_factory=dict)
    stakeholder_epks: list[bytes] = Field(default_factory=list)
    shard_nodes: dict[str, list[str]] = Field(default_factory=dict)
    requests: list[RequestSecret] = Field(default_factory=list)
    ledger: str = "ledger"

    @property
    def shard_ids(self) -> list[str]:
        return sorted(self.shard_nodes)

    @classmethod
    def collect(
        cls,
        requests: Iterable[AddressedRequest],
        stakeholder_pks: Mapping[str, bytes],
        shard_nodes: Mapping[str, Sequence[str]],
        ledger: str = "ledger",
    ) -> "ScenarioSecrets":
        secrets = []
        epks: set[bytes] = set()
        for addressed in requests:
            request = addressed.request
            epks.update(request.stakeholder_epks)
            secrets.append(
                RequestSecret(
                    shard=addressed.shard,
                    payload=request.payload,
                    deps=request.dependency_bytes(),
                    dep_shards=sorted(dep.shard for dep in request.deps),
                    stakeholder_pks=list(request.stakeholder_pks),
                    encoded=request.signing_bytes(),
                )
            )
        return cls(
            stakeholder_pks=dict(stakeholder_pks),
            stakeholder_epks=sorted(epks),
            shard_nodes={shard: list(nodes) for shard, nodes in shard_nodes.items()},
            requests=secrets,
            ledger=ledger,
        )


class Finding(NamedTuple):
    """One sensitive value seen by a role that must not see it"""

    role: str
    time: int
    secret_class: SecretClass
    message_id: int | None
    detail: str

    def __str__(self) -> str:
        return f"{self.role} t={self.time} {self.secret_class.value} message={self.message_id} {self.detail}"


class AuditReport(BaseModel):
    role: str
    findings: list[Finding] = Field(default_factory=list)
    observed_shards: list[str] = Field(default_factory=list)
    notes: list[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def render(self) -> str:
        lines = [f"[{self.role}] {len(self.findings)} finding(s); observed shards: {self.observed_shards}"]
        lines += [str(finding) for finding in self.findings]
        lines += [f"note: {note}" for note in self.notes]
        return "\n".join(lines)


class _Needle(NamedTuple):
    secret_class: SecretClass
    label: str
    value: bytes


def _scan(role: str, events: Sequence[TraceEvent], needles: Iterable[_Needle]) -> list[Finding]:
    needles = list(needles)
    findings = []
    for event in events:
        for needle in needles:
            if needle.value and needle.value in event.raw:
                findings.append(
                    Finding(
                        role=role,
                        time=event.time,
                        secret_class=needle.secret_class,
                        message_id=event.message_id,
                        detail=f"{needle.label} in {event.message_type} from {event.sender}",
                    )
                )
    return findings


def audit_ledger_view(trace: Trace, secrets: ScenarioSecrets) -> AuditReport:
    """
    The ledger may learn the number of entries and signatures of each
    transaction and the client key, nothing about stakeholders, shards,
    payloads or dependencies.
    """
    events = trace.received_by([secrets.ledger])
    needles = [_Needle(SecretClass.LONG_TERM_KEY, name, pk) for name, pk in sorted(secrets.stakeholder_pks.items())]
    needles += [_Needle(SecretClass.EPHEMERAL_KEY, epk[:4].hex(), epk) for epk in secrets.stakeholder_epks]
    needles += [_Needle(SecretClass.SHARD_ID, shard, encode_shard_field(shard)) for shard in secrets.shard_ids]
    for request in secrets.requests:
        needles.append(_Needle(SecretClass.PAYLOAD, f"payload for {request.shard}", request.payload))
        if request.dep_shards:
            needles.append(_Needle(SecretClass.DEPENDENCY_SET, f"dependencies of {request.shard}", request.deps))

    notes = []
    for event in events:
        try:
            message = decode_message(event.raw)
            if not isinstance(message, LedgerSubmission):
                continue
            tx = decode_transaction(message.transaction)
        except EncodingError as e:
            notes.append(f"t={event.time} message={event.message_id} undecodable transaction: {e}")
            continue
        signatures = [len(entry.ephemeral_sigs) for entry in tx.entries]
        notes.append(f"t={event.time} transaction with {len(tx.entries)} entries, signature counts {signatures}")

    return AuditReport(role=secrets.ledger, findings=_scan(secrets.ledger, events, needles), notes=notes)


def audit_shard_view(trace: Trace, shard: str, secrets: ScenarioSecrets) -> AuditReport:
    """
    A shard may see its own requests in full and the identifiers of the
    shards in its dependency sets; no other shard's identifier, payload or
    dependency set, and no long-term key beyond its own requests' signers.
    """
    nodes = secrets.shard_nodes.get(shard, [])
    events = trace.received_by(nodes)
    own = [request for request in secrets.requests if request.shard == shard]
    own_bytes = [request.encoded for request in own]
    allowed_shards = {shard} | {s for request in own for s in request.dep_shards}
    own_pks = {pk for request in own for pk in request.stakeholder_pks}

    def foreign(value: bytes) -> bool:
        return not any(value in encoded for encoded in own_bytes)

    needles = [
        _Needle(SecretClass.SHARD_ID, other, encode_shard_field(other))
        for other in secrets.shard_ids
        if other not in allowed_shards
    ]
    needles += [
        _Needle(SecretClass.LONG_TERM_KEY, name, pk)
        for name, pk in sorted(secrets.stakeholder_pks.items())
        if pk not in own_pks
    ]
    for request in secrets.requests:
        if request.shard == shard:
            continue
        if foreign(request.payload):
            needles.append(_Needle(SecretClass.PAYLOAD, f"payload for {request.shard}", request.payload))
        if request.dep_shards and foreign(request.deps):
            needles.append(_Needle(SecretClass.DEPENDENCY_SET, f"dependencies of {request.shard}", request.deps))

    observed = sorted(
        other
        for other in secrets.shard_ids
        if other != shard and any(encode_shard_field(other) in event.raw for event in events)
    )
    return AuditReport(role=shard, findings=_scan(shard, events, needles), observed_shards=observed)


def audit_ppac_minimality(trace: Trace, secrets: ScenarioSecrets) -> AuditReport:
    """Inter-shard traffic must consist of belief pulls and their replies, nothing more."""
    shard_of = {node: shard for shard, nodes in secrets.shard_nodes.items() for node in nodes}
    findings = []
    for event in trace.received_by(shard_of):
        source, target = shard_of.get(event.sender or ""), shard_of.get(event.receiver or "")
        if source is None or source == target:
            continue
        problem = None
        if event.message_type not in PPAC_MESSAGES:
            problem = f"{event.message_type} between {source} and {target}"
        else:
            try:
                if encode_message(decode_message(event.raw)) != event.raw:
                    problem = f"{event.message_type} does not re-encode to its bytes"
            except EncodingError as e:
                problem = f"{event.message_type} does not decode: {e}"
        if problem:
            findings.append(
                Finding(
                    role="inter-shard",
                    time=event.time,
                    secret_class=SecretClass.MESSAGE_SHAPE,
                    message_id=event.message_id,
                    detail=problem,
                )
            )
    return AuditReport(role="inter-shard", findings=findings)


def audit_all(trace: Trace, secrets: ScenarioSecrets, minimality: bool = True) -> list[AuditReport]:
    reports = [audit_ledger_view(trace, secrets)]
    reports += [audit_shard_view(trace, shard, secrets) for shard in secrets.shard_ids]
    if minimality:
        reports.append(audit_ppac_minimality(trace, secrets))
    return reports


def render_reports(reports: Iterable[AuditReport]) -> str:
    return "\n".join(report.render() for report in reports) + "\n"
