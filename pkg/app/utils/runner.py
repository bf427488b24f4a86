"""
Scenario execution: build the actors, run the simulation and check every
outcome against the decision oracle, the round bounds and the privacy audit.
"""

import csv
import io
import json
import random
from pathlib import Path
from typing import Any, NamedTuple, Sequence

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from .crypto import get_scheme
from .graph import DependencyGraph, decision_oracle, discard_distances, induce, round_bounds
from .ledger import Ledger, LedgerNode
from .messages import PullDenied, PullReply, PullRequest, TwoPcDecision, TwoPcVote, decode_message
from .model import Decision, SignedDependency, Sign
from .privacy_audit import AuditReport, ScenarioSecrets, audit_all, render_reports
from .scenario import Scenario, ScenarioError, TransactionSpec
from .shard import Protocol, SessionOutcome, ShardNode, StakeholderPolicy, node_names, replicate
from .simnet import Network, SimConfig, Trace, TraceEvent, TraceEventKind
from .stakeholder import (
    AddressedRequest,
    ClientIdentity,
    ClientNode,
    NegotiationError,
    RequestTerms,
    StakeholderIdentity,
    StakeholderNode,
    TransactionPlan,
    TransactionTerms,
    negotiate,
)
from ..dependencies import get_settings

PROTOCOL_MESSAGES = frozenset({"PullRequest", "PullReply", "PullDenied", "TwoPcVote", "TwoPcDecision"})


class ShardResult(BaseModel):
    shard: str
    initial: Decision | None = None
    decision: Decision | None = None
    oracle: Decision | None = None
    round: int | None = None
    upper_bound: int
    discard_distance: int | None = None
    out_degree: int = 0
    replicas: list[SessionOutcome] = Field(default_factory=list)


class TransactionResult(BaseModel):
    index: int
    session: str
    protocol: Protocol
    hash_count: int
    graph: DependencyGraph
    shards: dict[str, ShardResult]
    submit_at: int = 0
    aborted: bool = False
    complete: bool = False
    rounds: int | None = None
    virtual_latency: int | None = None
    messages: int = 0

    @property
    def l_star(self) -> int:
        return round_bounds(self.graph).l_star

    @property
    def global_upper(self) -> int:
        return round_bounds(self.graph).global_upper


class BoundViolation(NamedTuple):
    """A shard finalized outside the round range its graph allows"""

    tx: int
    shard: str
    kind: str
    observed: int | None
    expected: int | None

    def __str__(self) -> str:
        return f"tx {self.tx} {self.shard}: {self.kind} (observed {self.observed}, expected {self.expected})"


class RunResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    scenario: Scenario
    trace: Trace
    transactions: list[TransactionResult]
    audits: list[AuditReport]
    bound_violations: list[BoundViolation]
    violations: list[str]
    states: dict[str, dict[str, int]]
    incomplete: bool = False

    @property
    def failed(self) -> bool:
        return bool(self.violations)

    def decisions(self) -> dict[str, dict[str, str | None]]:
        return {
            str(tx.index): {
                shard: result.decision.value if result.decision else None for shard, result in sorted(tx.shards.items())
            }
            for tx in self.transactions
        }

    def rounds(self) -> dict[str, dict[str, int | None]]:
        return {
            str(tx.index): {shard: result.round for shard, result in sorted(tx.shards.items())}
            for tx in self.transactions
        }

    def summary(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario.name,
            "protocol": self.scenario.protocol.name.value,
            "seed": self.scenario.network.seed,
            "decisions": self.decisions(),
            "rounds": self.rounds(),
            "incomplete": self.incomplete,
            "violations": self.violations,
            "audit_findings": sum(len(report.findings) for report in self.audits),
            "events": len(self.trace.events),
        }


def _terms(scenario: Scenario, tx: TransactionSpec) -> TransactionTerms:
    participants = tx.shards
    requests = []
    for request in tx.requests:
        if scenario.protocol.name == Protocol.TWO_PC:
            deps = tuple(SignedDependency(shard=s, sign=Sign.UNSIGNED) for s in participants if s != request.shard)
        else:
            deps = request.dependencies()
        requests.append(
            RequestTerms(
                shard=request.shard,
                payload={"ops": request.ops},
                deps=deps,
                signers=tuple(scenario.signers_of(request)),
            )
        )
    return TransactionTerms(requests=tuple(requests), pad_to=tx.pad_to)


def run_scenario(scenario: Scenario, **overrides: Any) -> RunResult:
    """
    Simulate every transaction of `scenario` and check the outcome.

    Args:
        overrides: seed, protocol, optimize, replication or scheme

    Raises:
        ScenarioError: when negotiation of a transaction fails
    """
    if any(value is not None for value in overrides.values()):
        scenario = scenario.with_overrides(**overrides)
    settings = get_settings()
    protocol = scenario.protocol
    scheme = get_scheme(protocol.scheme or settings.signature_scheme)
    rng = random.Random(scenario.network.seed)
    logger.info(f"Running scenario {scenario.name} with {protocol.name.value}, seed {scenario.network.seed}")

    stakeholders = {
        name: StakeholderIdentity(name=name, long_term=scheme.keygen(rng.getrandbits(64)))
        for name in scenario.stakeholders
    }
    clients = [
        ClientIdentity(name=f"client-{k}", keys=scheme.keygen(rng.getrandbits(64))) for k in range(scenario.clients)
    ]
    shard_ids = sorted(scenario.shards)
    shard_keys = {shard: scheme.keygen(rng.getrandbits(64)) for shard in shard_ids}
    directory = {shard: node_names(shard, scenario.shards[shard].replication) for shard in shard_ids}

    shard_nodes: dict[str, list[ShardNode]] = {}
    crash_plan: dict[str, int] = {}
    for shard in shard_ids:
        spec = scenario.shards[shard]
        replicated = replicate(
            shard,
            spec.replication,
            spec.crash_plan,
            directory,
            keys=shard_keys[shard],
            scheme=scheme,
            balances={account: a.balance for account, a in spec.accounts.items()},
            policies={
                account: StakeholderPolicy(
                    owners=frozenset(stakeholders[o].long_term.public for o in a.owners), threshold=a.threshold
                )
                for account, a in spec.accounts.items()
            },
            execute_mode=spec.execute_mode or protocol.execute_mode,
            protocol=protocol.name,
            optimize=protocol.optimize,
            stall=spec.stall,
            gc_timeout=protocol.session_gc_timeout or settings.session_gc_timeout,
        )
        shard_nodes[shard] = replicated.nodes
        crash_plan.update(replicated.crash_plan)

    network = Network(
        SimConfig(
            seed=scenario.network.seed,
            delta_max=scenario.network.delta_max,
            crash_plan=crash_plan,
            horizon=scenario.network.horizon,
        )
    )

    negotiated: list[list[AddressedRequest]] = []
    plans: dict[str, list[TransactionPlan]] = {}
    for index, tx in enumerate(scenario.transactions):
        try:
            requests = negotiate(stakeholders, _terms(scenario, tx), scheme, rng)
        except NegotiationError as e:
            raise ScenarioError(f"Transaction {index}: {e}")
        negotiated.append(requests)
        request_id = requests[0].request.id
        for shard, decision in tx.belief_overrides.items():
            for node in shard_nodes[shard]:
                node.belief_overrides[request_id] = decision
        lead = scenario.signers_of(tx.requests[0])[0]
        plans.setdefault(lead, []).append(
            TransactionPlan(
                label=f"tx-{index}",
                requests=requests,
                submit_at=tx.submit_at,
                pad_to=tx.pad_to,
                forge_for=tx.forge_signature_of,
            )
        )

    shard_keys_public = {shard: key.public for shard, key in shard_keys.items()}
    all_shard_nodes = [node for shard in shard_ids for node in shard_nodes[shard]]
    network.add_all(all_shard_nodes)
    network.add(
        LedgerNode(
            Ledger(scheme, [c.keys.public for c in clients], scenario.network.block_size),
            [node.name for node in all_shard_nodes],
            scenario.network.block_timeout,
        )
    )
    network.add_all(ClientNode(client, scheme) for client in clients)
    leads = {
        name: StakeholderNode(
            name,
            plans[name],
            stakeholders,
            directory,
            shard_keys_public,
            clients,
            scheme,
            random.Random(rng.getrandbits(64)),
        )
        for name in sorted(plans)
    }
    network.add_all(leads.values())

    trace = network.run()

    violations: list[str] = []
    transactions = []
    for index, (tx, requests) in enumerate(zip(scenario.transactions, negotiated)):
        lead = leads[scenario.signers_of(tx.requests[0])[0]]
        progress = lead.progress[f"tx-{index}"]
        for position, addressed in enumerate(requests):
            if not progress.aborted and progress.counts.get(position, 0) < 1:
                violations.append(f"tx {index}: no response from {addressed.shard}")
        result = _collect_transaction(index, tx, requests, shard_nodes, network, trace, progress.aborted)
        transactions.append(result)
        violations += _check_decisions(result)

    found = check_bounds(trace, scenario)
    violations += [str(v) for v in found]

    secrets = ScenarioSecrets.collect(
        [addressed for requests in negotiated for addressed in requests],
        {name: identity.long_term.public for name, identity in stakeholders.items()},
        directory,
    )
    audits = audit_all(trace, secrets, minimality=protocol.name == Protocol.PPAC)
    if protocol.name == Protocol.PPAC:
        violations += [str(finding) for report in audits for finding in report.findings]
    else:
        violations += [str(finding) for report in audits if report.role == "ledger" for finding in report.findings]

    incomplete = any(not tx.complete and not tx.aborted for tx in transactions)
    trace.incomplete = incomplete
    if incomplete:
        logger.warning(f"Scenario {scenario.name} left sessions unfinished at the horizon")
    for violation in violations:
        logger.error(violation)

    return RunResult(
        scenario=scenario,
        trace=trace,
        transactions=transactions,
        audits=audits,
        bound_violations=found,
        violations=violations,
        states={node.name: dict(sorted(node.state_db.items())) for node in all_shard_nodes},
        incomplete=incomplete,
    )


def _collect_transaction(
    index: int,
    tx: TransactionSpec,
    requests: Sequence[AddressedRequest],
    shard_nodes: dict[str, list[ShardNode]],
    network: Network,
    trace: Trace,
    aborted: bool,
) -> TransactionResult:
    request_id = requests[0].request.id
    hash_count = max(len(requests), tx.pad_to)
    graph = induce({a.shard: a.request.deps for a in requests}, n_hashes=hash_count)
    bounds = round_bounds(graph)

    shards: dict[str, ShardResult] = {}
    for shard in tx.shards:
        replicas = [
            outcome
            for node in shard_nodes[shard]
            if not network.crashed(node.name) and (outcome := node.outcome(request_id)) is not None
        ]
        first = replicas[0] if replicas else None
        rounds = [r.round for r in replicas if r.round is not None]
        shards[shard] = ShardResult(
            shard=shard,
            initial=first.initial if first else None,
            decision=first.decision if first else None,
            round=max(rounds) if rounds else None,
            upper_bound=bounds.per_shard_upper[shard],
            out_degree=graph.out_degree(shard),
            replicas=replicas,
        )

    _judge(graph, shards)
    complete = all(result.decision is not None for result in shards.values())
    finalized = [r.finalized_at for result in shards.values() for r in result.replicas if r.finalized_at is not None]
    rounds = [result.round for result in shards.values() if result.round is not None]
    return TransactionResult(
        index=index,
        session=request_id.hex(),
        protocol=shard_nodes[tx.shards[0]][0].protocol,
        hash_count=hash_count,
        graph=graph,
        shards=shards,
        submit_at=tx.submit_at,
        aborted=aborted,
        complete=complete,
        rounds=max(rounds) if complete and rounds else None,
        virtual_latency=max(finalized) - tx.submit_at if complete and finalized else None,
        messages=count_protocol_messages(trace, request_id),
    )


def _judge(graph: DependencyGraph, shards: dict[str, ShardResult]) -> None:
    """Fill in the oracle decision and discard distance once every initial belief is known."""
    initials = {shard: result.initial for shard, result in shards.items()}
    if all(value is not None for value in initials.values()):
        oracle = decision_oracle(graph, initials)
        distances = discard_distances(graph, initials)
        for shard, result in shards.items():
            result.oracle = oracle[shard]
            result.discard_distance = distances[shard]


def transactions_from_trace(trace: Trace, scenario: Scenario) -> list[TransactionResult]:
    """
    Rebuild per-shard outcomes of every transaction from a recorded trace.

    Sessions are matched to transactions through the stakeholder's "sending"
    events; initial beliefs and rounds come from the shards' session-start
    and finalize events. Transactions whose requests were never sent are
    left out.
    """
    sessions: dict[str, str] = {}
    aborted: set[str] = set()
    initials: dict[tuple[str, str], Decision] = {}
    finals: dict[tuple[str, str], list[TraceEvent]] = {}
    for event in trace.of_kind(TraceEventKind.STATE_CHANGE, TraceEventKind.FINALIZE):
        data = event.data
        if "tx" in data:
            if "session" in data:
                sessions[data["tx"]] = data["session"]
            elif event.summary.startswith("aborted"):
                aborted.add(data["tx"])
            continue
        key = (data.get("session"), data.get("shard"))
        if event.kind == TraceEventKind.FINALIZE:
            finals.setdefault(key, []).append(event)
        elif "initial" in data:
            initials.setdefault(key, Decision(data["initial"]))

    transactions = []
    for index, tx in enumerate(scenario.transactions):
        label = f"tx-{index}"
        session = sessions.get(label)
        if session is None:
            continue
        terms = _terms(scenario, tx)
        graph = induce({r.shard: r.deps for r in terms.requests}, n_hashes=max(len(terms.requests), tx.pad_to))
        bounds = round_bounds(graph)
        shards: dict[str, ShardResult] = {}
        for shard in tx.shards:
            events = finals.get((session, shard), [])
            shards[shard] = ShardResult(
                shard=shard,
                initial=initials.get((session, shard)),
                decision=Decision(events[0].data["decision"]) if events else None,
                round=max(e.data["round"] for e in events) if events else None,
                upper_bound=bounds.per_shard_upper[shard],
                out_degree=graph.out_degree(shard),
            )
        _judge(graph, shards)
        complete = all(result.decision is not None for result in shards.values())
        finalized = [e.time for shard in tx.shards for e in finals.get((session, shard), [])]
        rounds = [result.round for result in shards.values() if result.round is not None]
        transactions.append(
            TransactionResult(
                index=index,
                session=session,
                protocol=scenario.protocol.name,
                hash_count=graph.n_hashes,
                graph=graph,
                shards=shards,
                submit_at=tx.submit_at,
                aborted=label in aborted,
                complete=complete,
                rounds=max(rounds) if complete and rounds else None,
                virtual_latency=max(finalized) - tx.submit_at if complete and finalized else None,
                messages=count_protocol_messages(trace, bytes.fromhex(session)),
            )
        )
    return transactions


def count_protocol_messages(trace: Trace, request_id: bytes) -> int:
    """Inter-shard commit messages sent for one session."""
    count = 0
    for event in trace.of_kind(TraceEventKind.SEND):
        if event.message_type not in PROTOCOL_MESSAGES:
            continue
        message = decode_message(event.raw)
        if isinstance(message, (PullRequest, PullReply, PullDenied, TwoPcVote, TwoPcDecision)):
            count += message.request_id == request_id
    return count


def _check_decisions(tx: TransactionResult) -> list[str]:
    problems = []
    for shard, result in sorted(tx.shards.items()):
        if result.decision is None:
            continue
        if result.oracle is not None and result.decision != result.oracle:
            problems.append(
                f"tx {tx.index} {shard}: decided {result.decision.value}, oracle says {result.oracle.value}"
            )
        disagreeing = sorted(r.node for r in result.replicas if r.decision not in (None, result.decision))
        if disagreeing:
            problems.append(f"tx {tx.index} {shard}: replicas {disagreeing} disagree")
    return problems


def bound_violations(transactions: Sequence[TransactionResult], optimize: bool) -> list[BoundViolation]:
    """
    Every finalized shard stays within hash_count - out_degree rounds. For
    PPAC a discard arrives exactly at the shard's distance to the nearest
    initially discarding shard, and without the optimization a committing
    shard uses exactly its full budget.
    """
    found = []
    for tx in transactions:
        for shard, result in sorted(tx.shards.items()):
            if result.round is None:
                continue
            if result.round > result.upper_bound:
                found.append(BoundViolation(tx.index, shard, "above upper bound", result.round, result.upper_bound))
            if tx.protocol != Protocol.PPAC:
                continue
            if result.decision == Decision.DISCARD and result.discard_distance is not None:
                if result.round != result.discard_distance:
                    found.append(
                        BoundViolation(tx.index, shard, "discard off distance", result.round, result.discard_distance)
                    )
            if not optimize and result.decision == Decision.COMMIT:
                budget = 0 if result.out_degree == 0 else max(1, tx.hash_count - result.out_degree)
                if result.round != budget:
                    found.append(BoundViolation(tx.index, shard, "commit off budget", result.round, budget))
    return found


def check_bounds(trace: Trace, scenario: Scenario) -> list[BoundViolation]:
    """Check the rounds recorded in `trace` against the dependency graphs of `scenario`."""
    return bound_violations(transactions_from_trace(trace, scenario), scenario.protocol.optimize)


def render_bounds(transactions: Sequence[TransactionResult], violations: Sequence[BoundViolation]) -> str:
    lines = []
    for tx in transactions:
        lines.append(
            f"tx {tx.index} session {tx.session[:8]}: n={tx.hash_count} l*={tx.l_star} "
            f"global_upper={tx.global_upper} rounds={tx.rounds}"
        )
        for shard, shard_result in sorted(tx.shards.items()):
            lines.append(
                f"  {shard}: round={shard_result.round} upper={shard_result.upper_bound} "
                f"distance={shard_result.discard_distance} decision="
                f"{shard_result.decision.value if shard_result.decision else 'pending'}"
            )
    lines += [f"violation: {v}" for v in violations]
    return "\n".join(lines) + "\n"


def metrics_csv(result: RunResult) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(
        ["tx", "shard", "initial", "decision", "oracle", "round", "upper_bound", "discard_distance", "virtual_latency", "messages"]
    )
    for tx in result.transactions:
        for shard, r in sorted(tx.shards.items()):
            writer.writerow(
                [
                    tx.index,
                    shard,
                    r.initial.value if r.initial else "",
                    r.decision.value if r.decision else "",
                    r.oracle.value if r.oracle else "",
                    "" if r.round is None else r.round,
                    r.upper_bound,
                    "" if r.discard_distance is None else r.discard_distance,
                    "" if tx.virtual_latency is None else tx.virtual_latency,
                    tx.messages,
                ]
            )
    return buffer.getvalue()


def write_artifacts(result: RunResult, out_dir: str | Path) -> dict[str, Path]:
    """Write trace, metrics, audit, bounds and decisions files into `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    contents = {
        "trace.jsonl": result.trace.to_jsonl(),
        "metrics.csv": metrics_csv(result),
        "audit.txt": render_reports(result.audits),
        "bounds.txt": render_bounds(result.transactions, result.bound_violations),
        "decisions.json": json.dumps(result.decisions(), indent=2, sort_keys=True) + "\n",
    }
    paths = {}
    for name, text in contents.items():
        paths[name] = out / name
        paths[name].write_text(text)
    logger.info(f"Wrote {len(paths)} artifacts to {out}")
    return paths
