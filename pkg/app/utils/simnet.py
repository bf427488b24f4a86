"""
Deterministic discrete-event network built on simpy.

Every actor is a `Node` registered with a `Network`. Messages travel over
FIFO channels with a latency drawn uniformly from [1, delta_max] virtual
ticks, and every send, delivery, crash and protocol milestone lands in the
`Trace`. A run is a pure function of the scenario and the seed: the RNG is
seeded once, simpy breaks time ties by scheduling order, and actors only
iterate over sorted collections.
"""

import itertools
import json
import random
from enum import Enum
from typing import Any, Callable, Iterable, Iterator, Sequence

import simpy
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_serializer

from .messages import Broadcast, Message, RequestSubmission, encode_message


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int = 0
    delta_max: int = Field(default=10, ge=1)
    crash_plan: dict[str, int] = Field(default_factory=dict)
    horizon: int = Field(default=100_000, ge=1)
    reliable_broadcast_fanout_rounds: int = Field(default=1, ge=1)


class TraceEventKind(str, Enum):
    SEND = "send"
    DELIVER = "deliver"
    CRASH = "crash"
    STATE_CHANGE = "state_change"
    ROUND_ADVANCE = "round_advance"
    FINALIZE = "finalize"


class TraceEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    seq: int
    time: int
    kind: TraceEventKind
    sender: str | None = None
    receiver: str | None = None
    message_id: int | None = None
    message_type: str | None = None
    summary: str = ""
    raw: bytes = b""
    data: dict[str, Any] = Field(default_factory=dict)

    @field_serializer("raw")
    def _hex(self, raw: bytes) -> str:
        return raw.hex()

    @property
    def node(self) -> str | None:
        """The node an event happened at: the receiver of a delivery, otherwise the sender."""
        return self.receiver if self.kind == TraceEventKind.DELIVER else self.sender


class Trace(BaseModel):
    events: list[TraceEvent] = Field(default_factory=list)
    incomplete: bool = False

    def of_kind(self, *kinds: TraceEventKind) -> list[TraceEvent]:
        return [e for e in self.events if e.kind in kinds]

    def received_by(self, nodes: Iterable[str]) -> list[TraceEvent]:
        names = set(nodes)
        return [e for e in self.events if e.kind == TraceEventKind.DELIVER and e.receiver in names]

    def sent_by(self, nodes: Iterable[str]) -> list[TraceEvent]:
        names = set(nodes)
        return [e for e in self.events if e.kind == TraceEventKind.SEND and e.sender in names]

    def to_jsonl(self) -> str:
        return "".join(event.model_dump_json() + "\n" for event in self.events)

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        events = []
        for line in text.splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            record["raw"] = bytes.fromhex(record.get("raw", ""))
            events.append(TraceEvent.model_validate(record))
        return cls(events=events)


class Node:
    """Base class of every simulated actor."""

    def __init__(self, name: str) -> None:
        self.name = name
        self.network: "Network | None" = None

    @property
    def net(self) -> "Network":
        if self.network is None:
            raise RuntimeError(f"Node {self.name} is not attached to a network")
        return self.network

    def on_start(self) -> None:
        pass

    def on_message(self, sender: str, message: Message) -> None:
        pass

    def send(self, receiver: str, message: Message) -> None:
        self.net.send(self.name, receiver, message)

    def record(self, kind: TraceEventKind, summary: str, **data: Any) -> None:
        self.net.record(kind, self.name, summary, **data)

    def call_later(self, delay: int, callback: Callable[[], None]) -> None:
        self.net.call_later(self.name, delay, callback)


class Network:
    def __init__(self, config: SimConfig) -> None:
        self.config = config
        self.env = simpy.Environment()
        self.rng = random.Random(config.seed)
        self.trace = Trace()
        self.nodes: dict[str, Node] = {}
        self._crash_times: dict[str, int] = dict(config.crash_plan)
        self._channel_clock: dict[tuple[str, str], int] = {}
        self._event_seq = itertools.count()
        self._message_seq = itertools.count()
        self._broadcast_seq = itertools.count()
        self._broadcast_groups: dict[int, tuple[str, ...]] = {}
        self._broadcast_seen: set[tuple[str, int]] = set()

    @property
    def now(self) -> int:
        return int(self.env.now)

    def add(self, node: Node) -> Node:
        if node.name in self.nodes:
            raise ValueError(f"Duplicate node name {node.name}")
        node.network = self
        self.nodes[node.name] = node
        return node

    def add_all(self, nodes: Iterable[Node]) -> None:
        for node in nodes:
            self.add(node)

    def crashed(self, name: str) -> bool:
        crash_time = self._crash_times.get(name)
        return crash_time is not None and self.now >= crash_time

    def crash(self, name: str) -> None:
        """Fail-stop `name` at the current virtual time."""
        if self.crashed(name):
            return
        self._crash_times[name] = self.now
        self.record(TraceEventKind.CRASH, name, f"{name} crashed")

    def record(self, kind: TraceEventKind, node: str | None, summary: str, **data: Any) -> TraceEvent:
        event = TraceEvent(
            seq=next(self._event_seq),
            time=self.now,
            kind=kind,
            sender=node,
            summary=summary,
            data=data,
        )
        self.trace.events.append(event)
        return event

    def send(self, sender: str, receiver: str, message: Message) -> None:
        if self.crashed(sender):
            return
        if receiver not in self.nodes:
            raise ValueError(f"Unknown receiver {receiver}")
        raw = encode_message(message)
        message_id = next(self._message_seq)
        self.trace.events.append(
            TraceEvent(
                seq=next(self._event_seq),
                time=self.now,
                kind=TraceEventKind.SEND,
                sender=sender,
                receiver=receiver,
                message_id=message_id,
                message_type=type(message).__name__,
                summary=_summarize(message),
                raw=raw,
            )
        )
        channel = (sender, receiver)
        deliver_at = max(
            self.now + self.rng.randint(1, self.config.delta_max),
            self._channel_clock.get(channel, 0),
        )
        self._channel_clock[channel] = deliver_at
        self.env.process(self._deliver(deliver_at - self.now, sender, receiver, message, raw, message_id))

    def _deliver(
        self, delay: int, sender: str, receiver: str, message: Message, raw: bytes, message_id: int
    ) -> Iterator[simpy.events.Event]:
        yield self.env.timeout(delay)
        if self.crashed(receiver):
            return
        self.trace.events.append(
            TraceEvent(
                seq=next(self._event_seq),
                time=self.now,
                kind=TraceEventKind.DELIVER,
                sender=sender,
                receiver=receiver,
                message_id=message_id,
                message_type=type(message).__name__,
                summary=_summarize(message),
                raw=raw,
            )
        )
        node = self.nodes[receiver]
        if isinstance(message, Broadcast):
            self._on_broadcast(node, message)
        else:
            node.on_message(sender, message)

    def call_later(self, owner: str, delay: int, callback: Callable[[], None]) -> None:
        """Run `callback` after `delay` ticks unless `owner` has crashed by then."""

        def timer() -> Iterator[simpy.events.Event]:
            yield self.env.timeout(delay)
            if not self.crashed(owner):
                callback()

        self.env.process(timer())

    def reliable_broadcast(
        self,
        origin: str,
        payload: RequestSubmission,
        group: Sequence[str],
        crash_after: int | None = None,
    ) -> int:
        """
        Send `payload` from `origin` to every node of `group`; each receiver
        echoes it to the rest of the group on first receipt, so delivery at
        one correct node implies delivery at all of them.

        Args:
            crash_after: crash `origin` once it has reached this many members

        Returns:
            the broadcast id
        """
        if not group:
            raise ValueError("Reliable broadcast needs a nonempty group")
        broadcast_id = next(self._broadcast_seq)
        members = tuple(sorted(group))
        self._broadcast_groups[broadcast_id] = members
        for count, member in enumerate(members):
            if crash_after is not None and count >= crash_after:
                self.crash(origin)
                break
            self.send(origin, member, Broadcast(broadcast_id=broadcast_id, origin=origin, payload=payload))
        return broadcast_id

    def _on_broadcast(self, node: Node, message: Broadcast) -> None:
        key = (node.name, message.broadcast_id)
        if key in self._broadcast_seen:
            return
        self._broadcast_seen.add(key)
        if message.hop < self.config.reliable_broadcast_fanout_rounds:
            echo = Broadcast(
                broadcast_id=message.broadcast_id,
                origin=message.origin,
                hop=message.hop + 1,
                payload=message.payload,
            )
            for member in self._broadcast_groups.get(message.broadcast_id, ()):
                if member != node.name:
                    self.send(node.name, member, echo)
        node.on_message(message.origin, message.payload)

    def start(self) -> None:
        for name in sorted(self._crash_times):
            if name in self.nodes:
                self.env.process(self._crash_at(name, self._crash_times[name]))
        for name in sorted(self.nodes):
            self.nodes[name].on_start()

    def _crash_at(self, name: str, time: int) -> Iterator[simpy.events.Event]:
        yield self.env.timeout(max(0, time - self.now))
        self.record(TraceEventKind.CRASH, name, f"{name} crashed")

    def run(self) -> Trace:
        """Run until the event queue drains or the horizon is reached."""
        self.start()
        while self.env.peek() < self.config.horizon:
            self.env.step()
        if self.env.peek() != float("inf"):
            logger.warning(f"Simulation reached the horizon t={self.config.horizon} with events pending")
        return self.trace


def _summarize(message: Message) -> str:
    fields = []
    for name, value in message:
        if isinstance(value, bytes):
            fields.append(f"{name}={value[:4].hex()}")
        elif isinstance(value, BaseModel):
            fields.append(f"{name}={type(value).__name__}")
        elif isinstance(value, tuple):
            fields.append(f"{name}=[{len(value)}]")
        else:
            fields.append(f"{name}={getattr(value, 'name', value)}")
    return f"{type(message).__name__}({', '.join(fields)})"
