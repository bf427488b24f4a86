import pytest

from app.utils.ledger import Ledger, LedgerNode
from app.utils.messages import BlockDelivery, LedgerSubmission
from app.utils.model import Transaction, TransactionBody, TransactionEntry, canonical_encode
from app.utils.simnet import Network, Node, SimConfig, TraceEventKind
from app.utils.stakeholder import ClientIdentity

from .test_simnet import Recorder


def body(marker: int) -> TransactionBody:
    return TransactionBody(entries=(TransactionEntry(request_hash=bytes([marker]) * 32, ephemeral_sigs=(b"\x01" * 32,)),))


@pytest.fixture
def client(scheme):
    return ClientIdentity(name="client-0", keys=scheme.keygen(5))


def test_enrolled_client_is_accepted(scheme, client):
    ledger = Ledger(scheme, [client.keys.public])
    assert ledger.submit(client.sign(body(1), scheme)).accepted
    assert len(ledger.pending) == 1


def test_unenrolled_client_is_rejected(scheme, client):
    ledger = Ledger(scheme, [])
    result = ledger.submit(client.sign(body(1), scheme))
    assert not result.accepted and "enrolled" in result.reason


def test_flipped_client_signature_is_rejected(scheme, client):
    ledger = Ledger(scheme, [client.keys.public])
    tx = client.sign(body(1), scheme)
    flipped = Transaction(entries=tx.entries, client_epk=tx.client_epk, client_sig=bytes([tx.client_sig[0] ^ 1]) + tx.client_sig[1:])
    assert not ledger.submit(flipped).accepted
    assert ledger.pending == []


def test_malformed_bytes_are_rejected(scheme, client):
    ledger = Ledger(scheme, [client.keys.public])
    data = canonical_encode(client.sign(body(1), scheme))
    assert not ledger.submit_bytes(data[:-3]).accepted
    assert ledger.submit_bytes(data).accepted


def test_cut_respects_block_size(scheme, client):
    ledger = Ledger(scheme, [client.keys.public], block_size=2)
    for marker in range(5):
        ledger.submit(client.sign(body(marker), scheme))
    blocks = [ledger.cut() for _ in range(4)]
    assert [len(b.txs) for b in blocks[:3]] == [2, 2, 1]
    assert blocks[3] is None
    assert [b.height for b in ledger.blocks] == [0, 1, 2]


def test_block_size_must_be_positive(scheme):
    with pytest.raises(ValueError):
        Ledger(scheme, [], block_size=0)


class Submitter(Node):
    def __init__(self, name, payloads):
        super().__init__(name)
        self.payloads = payloads

    def on_start(self):
        for data in self.payloads:
            self.send("ledger", LedgerSubmission(transaction=data))


def test_blocks_are_sealed_by_size_and_timeout(scheme, client):
    network = Network(SimConfig(seed=4, delta_max=3))
    shards = [network.add(Recorder(name)) for name in ("S1/0", "S2/0")]
    ledger = Ledger(scheme, [client.keys.public], block_size=2)
    network.add(LedgerNode(ledger, [s.name for s in shards], block_timeout=50))
    good = [canonical_encode(client.sign(body(m), scheme)) for m in range(3)]
    network.add(Submitter("client-0", good + [b"garbage"]))
    trace = network.run()

    assert [len(b.txs) for b in ledger.blocks] == [2, 1]
    for shard in shards:
        heights = [m.block.height for _, _, m in shard.received if isinstance(m, BlockDelivery)]
        assert heights == [0, 1]
    rejected = [e for e in trace.of_kind(TraceEventKind.STATE_CHANGE) if e.summary.startswith("rejected")]
    assert len(rejected) == 1
