import random
import sys
from pathlib import Path

import pytest
import yaml
from loguru import logger

from app.utils.crypto import KeyedHashScheme, get_scheme
from app.utils.model import AccountOp, Payload, UpdateRequest, canonical_encode, parse_dependencies
from app.utils.scenario import load_figure

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def quiet_logs():
    logger.remove()
    logger.add(sys.stderr, level="WARNING")
    yield


@pytest.fixture
def scheme():
    return KeyedHashScheme()


@pytest.fixture(params=["keyed-hash", "ecdsa"])
def any_scheme(request):
    return get_scheme(request.param)


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def figure2():
    return load_figure("2")


def load_dependency_fixture(name: str):
    """Dependency sets of a fixture file, parsed."""
    data = yaml.safe_load((FIXTURES / name).read_text())
    return {shard: parse_dependencies(tokens) for shard, tokens in data.items()}


FIGURE2_DEPS = {
    "S1": parse_dependencies(["S2-"]),
    "S2": parse_dependencies(["S1+", "S3-", "S4+"]),
    "S3": parse_dependencies(["S2+", "S4-"]),
    "S4": parse_dependencies(["S2-", "S3+"]),
}


def sample_request(**changes) -> UpdateRequest:
    """A well-formed request with placeholder keys and signatures."""
    fields = dict(
        id=b"\x01" * 16,
        nonce=b"\x02" * 16,
        payload=canonical_encode(Payload(ops=(AccountOp(account="alice-1", delta=-5),))),
        deps=parse_dependencies(["S2-"]),
        stakeholder_pks=(b"\x03" * 32,),
        stakeholder_epks=(b"\x04" * 32,),
        signatures=(b"\x05" * 32,),
    )
    fields.update(changes)
    return UpdateRequest(**fields)
