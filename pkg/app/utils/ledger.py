"""
Trusted total-order log.

The ledger checks that each transaction was signed by an enrolled client,
orders accepted transactions by arrival, and cuts a block after
`block_size` transactions or `block_timeout` ticks after the first pending
one, whichever comes first. Blocks go to every shard node in height order.
"""

from typing import Iterable, NamedTuple, Sequence

from loguru import logger

from .crypto import SignatureScheme
from .messages import BlockDelivery, LedgerSubmission, Message, decode_transaction
from .model import Block, EncodingError, Transaction
from .simnet import Node, TraceEventKind

DEFAULT_BLOCK_SIZE = 10
DEFAULT_BLOCK_TIMEOUT = 100


class SubmitResult(NamedTuple):
    """Outcome of a ledger submission"""

    accepted: bool
    reason: str = ""


class Ledger:
    def __init__(self, scheme: SignatureScheme, enrolled_clients: Iterable[bytes], block_size: int = DEFAULT_BLOCK_SIZE):
        if block_size < 1:
            raise ValueError(f"block_size must be at least 1, got {block_size}")
        self.scheme = scheme
        self.enrolled = frozenset(enrolled_clients)
        self.block_size = block_size
        self.pending: list[Transaction] = []
        self.blocks: list[Block] = []

    def submit(self, tx: Transaction) -> SubmitResult:
        """
        Verify the client signature and queue the transaction.

        Returns:
            SubmitResult: rejected when the client key is not enrolled or the
            signature over the entries does not verify
        """
        if tx.client_epk not in self.enrolled:
            return SubmitResult(accepted=False, reason="client key not enrolled")
        if not self.scheme.verify(tx.client_epk, tx.signing_bytes(), tx.client_sig):
            return SubmitResult(accepted=False, reason="bad client signature")
        self.pending.append(tx)
        return SubmitResult(accepted=True)

    def submit_bytes(self, data: bytes) -> SubmitResult:
        try:
            tx = decode_transaction(data)
        except EncodingError as e:
            return SubmitResult(accepted=False, reason=f"malformed transaction: {e}")
        return self.submit(tx)

    @property
    def full(self) -> bool:
        return len(self.pending) >= self.block_size

    def cut(self) -> Block | None:
        """Seal up to `block_size` pending transactions into the next block."""
        if not self.pending:
            return None
        txs, self.pending = self.pending[: self.block_size], self.pending[self.block_size :]
        block = Block(height=len(self.blocks), txs=tuple(txs))
        self.blocks.append(block)
        return block


class LedgerNode(Node):
    def __init__(
        self,
        ledger: Ledger,
        shard_nodes: Sequence[str],
        block_timeout: int = DEFAULT_BLOCK_TIMEOUT,
        name: str = "ledger",
    ) -> None:
        super().__init__(name)
        self.ledger = ledger
        self.shard_nodes = sorted(shard_nodes)
        self.block_timeout = block_timeout
        self._timer_generation = 0

    def on_message(self, sender: str, message: Message) -> None:
        if not isinstance(message, LedgerSubmission):
            logger.warning(f"Ledger ignoring {type(message).__name__} from {sender}")
            return
        result = self.ledger.submit_bytes(message.transaction)
        if not result.accepted:
            logger.warning(f"Ledger rejected a transaction from {sender}: {result.reason}")
            self.record(TraceEventKind.STATE_CHANGE, f"rejected transaction: {result.reason}", client=sender)
            return
        self.record(TraceEventKind.STATE_CHANGE, "accepted transaction", client=sender)
        if self.ledger.full:
            self._seal()
        elif len(self.ledger.pending) == 1:
            generation = self._timer_generation
            self.call_later(self.block_timeout, lambda: self._on_timeout(generation))

    def _on_timeout(self, generation: int) -> None:
        if generation == self._timer_generation:
            self._seal()

    def _seal(self) -> None:
        self._timer_generation += 1
        block = self.ledger.cut()
        if block is None:
            return
        self.disseminate(block)
        if self.ledger.pending:
            generation = self._timer_generation
            self.call_later(self.block_timeout, lambda: self._on_timeout(generation))

    def disseminate(self, block: Block) -> None:
        """Send `block` to every shard node; channels keep heights in order per node."""
        logger.info(f"Ledger disseminating block {block.height} with {len(block.txs)} transaction(s)")
        self.record(
            TraceEventKind.STATE_CHANGE,
            f"sealed block {block.height}",
            height=block.height,
            transactions=len(block.txs),
        )
        for node in self.shard_nodes:
            self.send(node, BlockDelivery(block=block))
