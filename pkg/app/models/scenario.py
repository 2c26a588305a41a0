"""Scenario model.

A scenario is everything the host needs for one deterministic run: the
platform capacity, the platform sanctions and the hosted components, each
with the contracts it submits, the one it subscribes, its pre-declared
amendments, its warning reaction and its action script.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from ..errors import InvalidPath, ScenarioError
from .contract import (
    AccessPermission,
    Amendment,
    Contract,
    FilePermission,
    Quota,
    ResourcePattern,
    validate_contract,
)
from .resource import normalize_path
from .sanction import Sanction

SCHEMA_VERSION = 1


class StepOp(str, Enum):
    OPEN_FILE = 'open_file'
    READ = 'read'
    WRITE = 'write'
    CLOSE = 'close'
    ALLOCATE = 'allocate'
    FREE = 'free'
    OPEN_SOCKET = 'open_socket'
    SEND = 'send'
    RECEIVE = 'receive'
    AMEND = 'amend'
    TERMINATE = 'terminate'


CREATION_OPS = (StepOp.OPEN_FILE, StepOp.OPEN_SOCKET)
HANDLE_OPS = (StepOp.READ, StepOp.WRITE, StepOp.CLOSE, StepOp.SEND, StepOp.RECEIVE)


@dataclass(frozen=True)
class ScriptStep:
    """One scripted component action.

    ``alias`` names the handle a creation step binds; ``handle`` refers to
    such a name in later steps.
    """

    op: StepOp
    path: Optional[str] = None
    mode: Optional[FilePermission] = None
    alias: Optional[str] = None
    handle: Optional[str] = None
    bytes: Optional[int] = None
    host: Optional[str] = None
    port: Optional[int] = None
    amendment: Optional[str] = None


@dataclass(frozen=True)
class WarningHandler:
    """Reaction a component declares for sanction warnings."""

    kind: str
    amendment: Optional[str] = None


@dataclass(frozen=True)
class ComponentSpec:
    id: str
    contracts: Tuple[Contract, ...] = ()
    subscribe: Optional[str] = None
    amendments: Tuple[Amendment, ...] = ()
    files: Dict[str, int] = field(default_factory=dict)
    on_warning: Optional[WarningHandler] = None
    script: Tuple[ScriptStep, ...] = ()

    def contract(self, contract_id: str) -> Optional[Contract]:
        return next((contract for contract in self.contracts if contract.id == contract_id), None)

    def amendment(self, amendment_id: str) -> Optional[Amendment]:
        return next((amendment for amendment in self.amendments if amendment.id == amendment_id), None)


@dataclass(frozen=True)
class CapacitySpec:
    pattern: ResourcePattern
    permission: AccessPermission
    quota: Quota


@dataclass(frozen=True)
class Scenario:
    name: str
    capacity: Tuple[CapacitySpec, ...] = ()
    sanctions: Tuple[Sanction, ...] = ()
    components: Tuple[ComponentSpec, ...] = ()
    home: Optional[str] = None

    def component(self, component_id: str) -> Optional[ComponentSpec]:
        return next((spec for spec in self.components if spec.id == component_id), None)


def check_references(scenario: Scenario):
    """Make sure every id a scenario uses is defined where it is used.

    Raises:
        ScenarioError: On the first dangling or duplicated reference
    """
    problems = list(reference_problems(scenario))
    if problems:
        raise ScenarioError(problems[0])


def reference_problems(scenario: Scenario) -> List[str]:
    problems = []
    seen_components = set()
    for spec in scenario.components:
        where = f"component {spec.id!r}"
        if spec.id in seen_components:
            problems.append(f"{where} is declared twice")
        seen_components.add(spec.id)

        contract_ids = [contract.id for contract in spec.contracts]
        if len(set(contract_ids)) != len(contract_ids):
            problems.append(f"{where} submits the same contract id twice")
        for contract in spec.contracts:
            for issue in validate_contract(contract):
                problems.append(f"{where}: contract {contract.id!r}: {issue.code.value} {issue.detail}".rstrip())
        if spec.subscribe is not None and spec.subscribe not in contract_ids:
            problems.append(f"{where} subscribes undefined contract {spec.subscribe!r}")

        amendment_ids = [amendment.id for amendment in spec.amendments]
        if None in amendment_ids or len(set(amendment_ids)) != len(amendment_ids):
            problems.append(f"{where} needs a distinct id on every amendment")
        for amendment in spec.amendments:
            if amendment.contract_id not in contract_ids:
                problems.append(f"{where}: amendment {amendment.id!r} targets undefined contract "
                                f"{amendment.contract_id!r}")
        if spec.on_warning is not None and spec.on_warning.kind == 'amend' \
                and spec.on_warning.amendment not in amendment_ids:
            problems.append(f"{where}: warning handler uses undefined amendment {spec.on_warning.amendment!r}")

        for path in spec.files:
            try:
                normalize_path(path)
            except InvalidPath as e:
                problems.append(f"{where}: file {path!r}: {e}")

        aliases = set()
        for index, step in enumerate(spec.script):
            at = f"{where}, step {index}"
            if step.op in HANDLE_OPS and step.handle not in aliases:
                problems.append(f"{at}: handle {step.handle!r} is not created by an earlier step")
            if step.op is StepOp.AMEND and step.amendment not in amendment_ids:
                problems.append(f"{at}: undefined amendment {step.amendment!r}")
            if step.op is StepOp.OPEN_FILE:
                try:
                    normalize_path(step.path)
                except InvalidPath as e:
                    problems.append(f"{at}: {e}")
            if step.op in CREATION_OPS:
                aliases.add(step.alias)
    return problems
