"""
Scenario files.

A scenario is a YAML document:

    name: coin-exchange
    network: {seed: 7, delta_max: 10, block_size: 10, block_timeout: 100, horizon: 100000}
    protocol: {name: ppac, optimize: true, execute_mode: XO, scheme: keyed-hash}  # scheme defaults to MSPT_SIGNATURE_SCHEME
    stakeholders: [alice, bob]
    clients: 3
    shards:
      SA:
        replication: 1
        crash_plan: {}          # node index -> crash time
        stall: false
        accounts:
          alice-a: {balance: 500, owners: [alice]}
          pool-a: {balance: 100, owners: [alice, bob], threshold: 1}  # any one owner may sign
    transactions:
      - submit_at: 0
        pad_to: 0
        belief_overrides: {SA: discard}
        forge_signature_of: []
        requests:
          - shard: SA
            ops: [{account: alice-a, delta: -100}]
            deps: [SB]          # S, S+ or S-
            signers: [alice]    # defaults to the owners of the touched accounts

Loading errors carry the line and column of the offending value.
"""

from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .crypto import SCHEMES
from .model import AccountOp, Decision, DependencyError, SignedDependency, parse_dependencies
from .shard import ExecuteMode, Protocol
from .ledger import DEFAULT_BLOCK_SIZE, DEFAULT_BLOCK_TIMEOUT


class ScenarioError(ValueError):
    """Raised when a scenario does not parse or references unknown entities"""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AccountSpec(_Strict):
    balance: int = Field(ge=0)
    owners: list[str] = Field(min_length=1)
    threshold: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_threshold(self) -> "AccountSpec":
        if self.threshold is not None and self.threshold > len(self.owners):
            raise ValueError(f"threshold {self.threshold} exceeds the {len(self.owners)} owner(s)")
        return self


class ShardSpec(_Strict):
    replication: int = Field(default=1, ge=1)
    crash_plan: dict[int, int] = Field(default_factory=dict)
    stall: bool = False
    execute_mode: ExecuteMode | None = None
    accounts: dict[str, AccountSpec] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_crashes(self) -> "ShardSpec":
        missing = sorted(i for i in self.crash_plan if not 0 <= i < self.replication)
        if missing:
            raise ValueError(f"crash_plan names nodes {missing} but replication is {self.replication}")
        if any(t < 0 for t in self.crash_plan.values()):
            raise ValueError("crash times must be non-negative")
        return self


class RequestSpec(_Strict):
    shard: str
    ops: list[AccountOp] = Field(min_length=1)
    deps: list[str] = Field(default_factory=list)
    signers: list[str] | None = None

    @field_validator("deps")
    @classmethod
    def _parse_deps(cls, deps: list[str]) -> list[str]:
        try:
            parse_dependencies(deps)
        except DependencyError as e:
            raise ValueError(str(e))
        return deps

    def dependencies(self) -> tuple[SignedDependency, ...]:
        return parse_dependencies(self.deps)


class TransactionSpec(_Strict):
    submit_at: int = Field(default=0, ge=0)
    pad_to: int = Field(default=0, ge=0)
    belief_overrides: dict[str, Decision] = Field(default_factory=dict)
    forge_signature_of: list[str] = Field(default_factory=list)
    requests: list[RequestSpec] = Field(min_length=1)

    @property
    def shards(self) -> list[str]:
        return sorted({request.shard for request in self.requests})


class NetworkSpec(_Strict):
    seed: int = 0
    delta_max: int = Field(default=10, ge=1)
    block_size: int = Field(default=DEFAULT_BLOCK_SIZE, ge=1)
    block_timeout: int = Field(default=DEFAULT_BLOCK_TIMEOUT, ge=1)
    horizon: int = Field(default=100_000, ge=1)


class ProtocolSpec(_Strict):
    name: Protocol = Protocol.PPAC
    optimize: bool = True
    execute_mode: ExecuteMode = ExecuteMode.XO
    scheme: str | None = None
    session_gc_timeout: int | None = Field(default=None, ge=1)

    @field_validator("scheme")
    @classmethod
    def _known_scheme(cls, scheme: str | None) -> str | None:
        if scheme is not None and scheme not in SCHEMES:
            raise ValueError(f"unknown signature scheme '{scheme}', choose one of {sorted(SCHEMES)}")
        return scheme


class Scenario(_Strict):
    name: str = "scenario"
    network: NetworkSpec = Field(default_factory=NetworkSpec)
    protocol: ProtocolSpec = Field(default_factory=ProtocolSpec)
    stakeholders: list[str] = Field(default_factory=list)
    clients: int = Field(default=3, ge=1)
    shards: dict[str, ShardSpec] = Field(min_length=1)
    transactions: list[TransactionSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_references(self) -> "Scenario":
        stakeholders = set(self.stakeholders)
        for shard_id, shard in self.shards.items():
            if "/" in shard_id:
                raise ValueError(f"shard id {shard_id} must not contain '/'")
            for account, spec in shard.accounts.items():
                unknown = sorted(set(spec.owners) - stakeholders)
                if unknown:
                    raise ValueError(f"account {account} of {shard_id} has unknown owners {unknown}")
        for index, tx in enumerate(self.transactions):
            for request in tx.requests:
                if request.shard not in self.shards:
                    raise ValueError(f"transaction {index} targets unknown shard {request.shard}")
                for dep in request.dependencies():
                    if dep.shard not in self.shards:
                        raise ValueError(f"transaction {index} depends on unknown shard {dep.shard}")
                for op in request.ops:
                    if op.account not in self.shards[request.shard].accounts:
                        raise ValueError(f"transaction {index} touches unknown account {op.account}")
                unknown = sorted(set(request.signers or []) - stakeholders)
                if unknown:
                    raise ValueError(f"transaction {index} is signed by unknown stakeholders {unknown}")
            for shard in list(tx.belief_overrides) + tx.forge_signature_of:
                if shard not in tx.shards:
                    raise ValueError(f"transaction {index} overrides shard {shard} that it does not involve")
        return self

    def signers_of(self, request: RequestSpec) -> list[str]:
        if request.signers:
            return list(request.signers)
        accounts = self.shards[request.shard].accounts
        return sorted({owner for op in request.ops for owner in accounts[op.account].owners})

    def with_overrides(self, **overrides: Any) -> "Scenario":
        """Copy with CLI-style overrides: seed, protocol, optimize, replication, scheme."""
        data = self.model_dump(mode="json")
        if overrides.get("seed") is not None:
            data["network"]["seed"] = overrides["seed"]
        if overrides.get("protocol") is not None:
            data["protocol"]["name"] = Protocol(overrides["protocol"]).value
        if overrides.get("optimize") is not None:
            data["protocol"]["optimize"] = overrides["optimize"]
        if overrides.get("scheme") is not None:
            data["protocol"]["scheme"] = overrides["scheme"]
        if overrides.get("replication") is not None:
            for shard in data["shards"].values():
                shard["replication"] = overrides["replication"]
        try:
            return Scenario.model_validate(data)
        except ValidationError as e:
            raise ScenarioError(f"Invalid overrides: {e.errors()[0]['msg']}")


def _locate(node: yaml.Node | None, loc: tuple[int | str, ...]) -> yaml.Mark | None:
    if node is None:
        return None
    mark = node.start_mark
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = next((value for k, value in node.value if str(k.value) == str(key)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            match = node.value[key]
        else:
            match = None
        if match is None:
            break
        node, mark = match, match.start_mark
    return mark


def parse_scenario(text: str) -> Scenario:
    """
    Parse scenario YAML.

    Raises:
        ScenarioError: on invalid YAML or a value that fails validation; line
            and column are 1-based
    """
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioError(
            f"Invalid YAML: {getattr(e, 'problem', None) or e}",
            line=mark.line + 1 if mark else None,
            column=mark.column + 1 if mark else None,
        )
    if not isinstance(data, dict):
        raise ScenarioError("A scenario must be a mapping", line=1, column=1)
    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        error = e.errors()[0]
        mark = _locate(root, tuple(error["loc"]))
        location = ".".join(str(part) for part in error["loc"]) or "scenario"
        raise ScenarioError(
            f"{location}: {error['msg']}",
            line=mark.line + 1 if mark else None,
            column=mark.column + 1 if mark else None,
        )


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ScenarioError(f"Cannot read scenario {path}: {e}")
    return parse_scenario(text)


BUNDLED = Path(__file__).resolve().parent.parent / "scenarios"

FIGURES: dict[str, str] = {"1a": "figure1a", "1b": "figure1b", "2": "figure2"}


def bundled_path(name: str) -> Path:
    return BUNDLED / f"{name}.yaml"


def load_bundled(name: str) -> Scenario:
    path = bundled_path(name)
    if not path.exists():
        raise ScenarioError(f"No bundled scenario named {name}")
    return load_scenario(path)


def load_figure(figure: Literal["1a", "1b", "2"] | str) -> Scenario:
    if figure not in FIGURES:
        raise ScenarioError(f"Unknown figure {figure}; choose one of {sorted(FIGURES)}")
    return load_bundled(FIGURES[figure])
