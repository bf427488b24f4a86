import string

import pytest
from hypothesis import given, strategies as st

from app.utils.model import (
    Belief,
    BeliefValue,
    DependencyError,
    EncodingError,
    Payload,
    AccountOp,
    SignedDependency,
    Sign,
    Transaction,
    TransactionEntry,
    UpdateRequest,
    canonical_decode,
    canonical_encode,
    encode_shard_field,
    normalize_dependencies,
    parse_dependencies,
    validate_dependency_consistency,
)

from .conftest import FIGURE2_DEPS, load_dependency_fixture, sample_request

shard_ids = st.text(alphabet=string.ascii_letters + string.digits + "_", min_size=1, max_size=8)
dependency_sets = st.dictionaries(shard_ids, st.sampled_from(list(Sign)), max_size=5).map(
    lambda d: normalize_dependencies(SignedDependency(shard=k, sign=v) for k, v in d.items())
)
keys = st.binary(min_size=32, max_size=32)


@st.composite
def update_requests(draw):
    signers = draw(st.integers(min_value=1, max_value=3))
    return UpdateRequest(
        id=draw(st.binary(min_size=16, max_size=16)),
        nonce=draw(st.binary(min_size=16, max_size=16)),
        payload=draw(st.binary(max_size=64)),
        deps=draw(dependency_sets),
        stakeholder_pks=tuple(draw(st.lists(keys, min_size=signers, max_size=signers))),
        stakeholder_epks=tuple(draw(st.lists(keys, min_size=signers, max_size=signers))),
        signatures=tuple(draw(st.lists(keys, min_size=signers, max_size=signers))),
    )


@st.composite
def transactions(draw):
    entries = draw(
        st.lists(
            st.builds(
                TransactionEntry,
                request_hash=st.binary(min_size=32, max_size=32),
                ephemeral_sigs=st.lists(keys, min_size=1, max_size=3).map(tuple),
            ),
            min_size=1,
            max_size=5,
        )
    )
    return Transaction(entries=tuple(entries), client_epk=draw(keys), client_sig=draw(keys))


@given(update_requests())
def test_update_request_round_trips(req):
    assert canonical_decode(UpdateRequest, canonical_encode(req)) == req


@given(transactions())
def test_transaction_round_trips(tx):
    assert canonical_decode(Transaction, canonical_encode(tx)) == tx


@given(update_requests(), st.binary(min_size=16, max_size=16))
def test_nonce_changes_encoding(req, nonce):
    other = req.model_copy(update={"nonce": nonce})
    assert (canonical_encode(other) == canonical_encode(req)) == (nonce == req.nonce)


def test_encoding_is_deterministic():
    assert canonical_encode(sample_request()) == canonical_encode(sample_request())


def test_minus_dependency_encodes_sign_byte_two():
    encoded = canonical_encode(SignedDependency(shard="S2", sign=Sign.MINUS))
    assert encoded == encode_shard_field("S2") + b"\x02"
    assert canonical_decode(SignedDependency, encoded) == SignedDependency(shard="S2", sign=Sign.MINUS)


def test_decode_rejects_truncated_and_trailing_bytes():
    encoded = canonical_encode(sample_request())
    with pytest.raises(EncodingError):
        canonical_decode(UpdateRequest, encoded[:-1])
    with pytest.raises(EncodingError):
        canonical_decode(UpdateRequest, encoded + b"\x00")


def test_decode_rejects_unknown_sign_byte():
    with pytest.raises(EncodingError):
        canonical_decode(SignedDependency, encode_shard_field("S2") + b"\x07")


def test_request_needs_matching_key_lists():
    with pytest.raises(ValueError):
        sample_request(stakeholder_epks=())
    with pytest.raises(ValueError):
        sample_request(signatures=(b"\x05" * 32, b"\x06" * 32))


def test_dependency_listed_twice_is_rejected():
    with pytest.raises(DependencyError):
        parse_dependencies(["S2+", "S2-"])


@pytest.mark.parametrize(
    "token, sign",
    [("S2", Sign.UNSIGNED), ("S2+", Sign.PLUS), ("S2-", Sign.MINUS)],
)
def test_dependency_token_syntax(token, sign):
    dep = SignedDependency.parse(token)
    assert dep.shard == "S2" and dep.sign == sign
    assert str(dep) == token


@pytest.mark.parametrize("token", ["S2*", "S2+-", "S2--", "+", "", "S 2"])
def test_malformed_dependency_tokens_are_rejected(token):
    with pytest.raises(DependencyError):
        SignedDependency.parse(token)


def test_shard_id_pattern_applies_to_constructed_dependencies():
    with pytest.raises(ValueError):
        SignedDependency(shard="S2*")


def test_transaction_carries_only_entries_and_client_fields():
    assert set(Transaction.model_fields) == {"entries", "client_epk", "client_sig"}


def test_belief_conjoin_is_absorbing_for_discard():
    commit, discard = Belief(), Belief(value=BeliefValue.DISCARD)
    assert commit.conjoin(commit) == commit
    assert commit.conjoin(discard).value == BeliefValue.DISCARD
    assert discard.conjoin(Belief(is_final=True)).value == BeliefValue.DISCARD
    assert discard.finalized().is_final


def test_figure2_printed_sets_are_inconsistent():
    violations = validate_dependency_consistency(load_dependency_fixture("figure2_verbatim.yaml"))
    assert [(v.shard, v.peer) for v in violations] == [("S1", "S2")]
    assert "S1+" in str(violations[0])


def test_figure2_corrected_sets_are_consistent():
    assert validate_dependency_consistency(FIGURE2_DEPS) == []


def test_figure1b_printed_sets_are_inconsistent():
    violations = validate_dependency_consistency(load_dependency_fixture("figure1b_verbatim.yaml"))
    assert {(v.shard, v.peer) for v in violations} == {("S2", "S3"), ("S3", "S1")}


def test_empty_dependency_sets_are_consistent():
    assert validate_dependency_consistency({"S1": (), "S2": ()}) == []


def test_unsigned_entry_may_be_answered_by_minus():
    assert validate_dependency_consistency({"S1": parse_dependencies(["S2"]), "S2": parse_dependencies(["S1-"])}) == []


def test_unsigned_entry_is_not_answered_by_plus():
    violations = validate_dependency_consistency({"S1": parse_dependencies(["S2"]), "S2": parse_dependencies(["S1+"])})
    assert [(v.shard, v.peer) for v in violations] == [("S1", "S2")]


def test_plus_answered_by_plus_is_inconsistent():
    violations = validate_dependency_consistency({"S1": parse_dependencies(["S2+"]), "S2": parse_dependencies(["S1+"])})
    assert [(v.shard, v.peer) for v in violations] == [("S1", "S2"), ("S2", "S1")]
