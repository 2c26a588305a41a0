"""Service module for contract negotiation.

The ``ContractManager`` drives the two-phase protocol between components and
the broker: components submit one or more contracts for evaluation, then
subscribe to one of the accepted ones, which re-evaluates it and reserves
its resources. Subscribed contracts can later be amended or terminated. The
``NegotiationLedger`` records every state change and report with logical
step numbers.
"""

import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

from ..errors import (
    AlreadyConfigured,
    AlreadySubscribedComponent,
    DuplicateContractId,
    IllegalTransition,
    InvalidAmendment,
    InvalidContract,
    NoSubscribedContract,
    NotAccepted,
    UnknownContract,
)
from ..models.contract import Amendment, Contract, apply_amendment, validate_contract
from ..models.sanction import Sanction
from ..utils.trace import StepClock
from .broker_service import Conflict, Reservation, ResourceBroker, SubmissionReport
from .container_service import ContainerState

logger = logging.getLogger(__name__)


class ContractState(str, Enum):
    SUBMITTED = 'Submitted'
    REJECTED_AT_SUBMISSION = 'RejectedAtSubmission'
    ACCEPTED = 'Accepted'
    SUBSCRIBED = 'Subscribed'
    REJECTED_AT_SUBSCRIPTION = 'RejectedAtSubscription'
    TERMINATED = 'Terminated'


LEGAL_TRANSITIONS = {
    None: {ContractState.SUBMITTED},
    ContractState.SUBMITTED: {ContractState.REJECTED_AT_SUBMISSION, ContractState.ACCEPTED},
    ContractState.ACCEPTED: {ContractState.SUBSCRIBED, ContractState.REJECTED_AT_SUBSCRIPTION},
    ContractState.SUBSCRIBED: {ContractState.SUBSCRIBED, ContractState.TERMINATED},
    ContractState.REJECTED_AT_SUBMISSION: set(),
    ContractState.REJECTED_AT_SUBSCRIPTION: set(),
    ContractState.TERMINATED: set(),
}


@dataclass
class ContractRecord:
    contract: Contract
    state: Optional[ContractState] = None
    transitions: List[dict] = field(default_factory=list)


@dataclass
class ComponentLedger:
    component_id: str
    contracts: Dict[str, ContractRecord] = field(default_factory=dict)
    subscribed: Optional[str] = None
    reservation: Optional[Reservation] = None
    history: List[dict] = field(default_factory=list)


def _conflict_json(conflict: Conflict) -> dict:
    entry = {'profile': conflict.profile_id, 'reason': conflict.reason.value}
    if conflict.available is not None:
        entry['available'] = conflict.available.components()
    return entry


def report_json(report: SubmissionReport) -> dict:
    return {
        'contract': report.contract_id,
        'accepted': report.accepted,
        'conflicting_clauses': [_conflict_json(conflict) for conflict in report.conflicting_clauses],
    }


class NegotiationLedger:
    """Per-component contract states and negotiation history."""

    def __init__(self, clock: StepClock):
        self._clock = clock
        self.components: Dict[str, ComponentLedger] = {}

    def component(self, component_id: str) -> ComponentLedger:
        if component_id not in self.components:
            self.components[component_id] = ComponentLedger(component_id)
        return self.components[component_id]

    def state(self, component_id: str, contract_id: str) -> Optional[ContractState]:
        record = self.component(component_id).contracts.get(contract_id)
        return record.state if record is not None else None

    def transition(self, component_id: str, contract_id: str, target: ContractState) -> int:
        """Move a contract to ``target`` and return the step number.

        Raises:
            IllegalTransition: If the state machine forbids the move
        """
        record = self.component(component_id).contracts[contract_id]
        if target not in LEGAL_TRANSITIONS[record.state]:
            raise IllegalTransition(contract_id, record.state or ContractState.SUBMITTED, target)
        step = self._clock.tick()
        record.transitions.append({'step': step, 'from': record.state.value if record.state else None,
                                   'to': target.value})
        record.state = target
        return step

    def subscribed_count(self, component_id: str) -> int:
        return sum(1 for record in self.component(component_id).contracts.values()
                   if record.state is ContractState.SUBSCRIBED)

    def export(self) -> dict:
        """JSON-ready history: states, transitions, reports and amendments."""
        return {
            component_id: {
                'subscribed': ledger.subscribed,
                'contracts': {
                    contract_id: {
                        'state': record.state.value if record.state else None,
                        'profiles': record.contract.profile_ids,
                        'transitions': list(record.transitions),
                    }
                    for contract_id, record in ledger.contracts.items()
                },
                'history': list(ledger.history),
            }
            for component_id, ledger in self.components.items()
        }


@dataclass(frozen=True)
class SubscriptionResult:
    contract_id: str
    state: ContractState
    reservation: Optional[Reservation] = None
    report: Optional[SubmissionReport] = None

    @property
    def subscribed(self) -> bool:
        return self.state is ContractState.SUBSCRIBED


class ContractManager:
    """Mediates between components, the broker and the containers.

    Args:
        broker: Authority over the platform capacity
        sanctions: Platform sanctions armed in every configured container
        clock: Logical clock timestamping the ledger
    """

    def __init__(self, broker: ResourceBroker, sanctions: Sequence[Sanction] = (),
                 clock: Optional[StepClock] = None):
        self.broker = broker
        self.sanctions = tuple(sanctions)
        self.clock = clock or StepClock()
        self.ledger = NegotiationLedger(self.clock)
        self.containers = {}
        self._locks: Dict[str, threading.RLock] = {}
        self._guard = threading.Lock()

    def attach(self, component_id: str, container):
        """Register the container configured when ``component_id`` subscribes."""
        self.containers[component_id] = container

    def _lock(self, component_id: str) -> threading.RLock:
        with self._guard:
            return self._locks.setdefault(component_id, threading.RLock())

    def submit(self, component_id: str, contract: Contract) -> SubmissionReport:
        """Have the broker evaluate ``contract`` without reserving anything.

        Raises:
            InvalidContract: If the contract breaks its own invariants
            DuplicateContractId: If the component already submitted this id
        """
        issues = validate_contract(contract)
        if issues:
            details = ', '.join(f"{issue.code.value} {issue.detail}".rstrip() for issue in issues)
            raise InvalidContract(f"{contract.id}: {details}")
        with self._lock(component_id):
            ledger = self.ledger.component(component_id)
            if contract.id in ledger.contracts:
                raise DuplicateContractId(f"{component_id} already submitted {contract.id!r}")
            ledger.contracts[contract.id] = ContractRecord(contract)
            self.ledger.transition(component_id, contract.id, ContractState.SUBMITTED)

            report = self.broker.evaluate(contract)
            if not report.accepted:
                conflicts = self.broker.get_conflicting_clauses(contract)
                report = SubmissionReport(contract.id, False, tuple(conflicts))
            target = ContractState.ACCEPTED if report.accepted else ContractState.REJECTED_AT_SUBMISSION
            step = self.ledger.transition(component_id, contract.id, target)
            ledger.history.append({'step': step, 'event': 'submitted', 'report': report_json(report)})
            logger.info(f"{component_id} submitted {contract.id}: {target.value}")
            return report

    def subscribe(self, component_id: str, contract_id: str) -> SubscriptionResult:
        """Re-evaluate an accepted contract and reserve its resources.

        On success the component's container, when attached, is configured
        with the contract and the platform sanctions.

        Raises:
            UnknownContract: If the contract was never submitted
            NotAccepted: If the contract is not in the Accepted state
            AlreadySubscribedComponent: If the component holds a subscription
            AlreadyConfigured: If the attached container already ran a contract
        """
        with self._lock(component_id):
            ledger = self.ledger.component(component_id)
            record = ledger.contracts.get(contract_id)
            if record is None:
                raise UnknownContract(f"{component_id} never submitted {contract_id!r}")
            if ledger.subscribed is not None:
                raise AlreadySubscribedComponent(f"{component_id} already subscribed {ledger.subscribed!r}")
            if record.state is not ContractState.ACCEPTED:
                raise NotAccepted(f"{contract_id!r} is {record.state.value}")
            container = self.containers.get(component_id)
            if container is not None and container.state is not ContainerState.CREATED:
                raise AlreadyConfigured(f"container of {component_id!r} is {container.state.value}")

            outcome = self.broker.subscribe(record.contract, holder=component_id)
            if isinstance(outcome, SubmissionReport):
                step = self.ledger.transition(component_id, contract_id, ContractState.REJECTED_AT_SUBSCRIPTION)
                ledger.history.append({'step': step, 'event': 'subscription_refused',
                                       'report': report_json(outcome)})
                logger.info(f"{component_id} could not subscribe {contract_id}")
                return SubscriptionResult(contract_id, ContractState.REJECTED_AT_SUBSCRIPTION, report=outcome)

            step = self.ledger.transition(component_id, contract_id, ContractState.SUBSCRIBED)
            ledger.subscribed = contract_id
            ledger.reservation = outcome
            ledger.history.append({'step': step, 'event': 'subscribed', 'contract': contract_id,
                                   'reserved': [{'entry': index, 'quota': quota.components()}
                                                for index, quota in outcome.deductions]})
            logger.info(f"{component_id} subscribed {contract_id}")
            if container is not None:
                container.configure(record.contract, self.sanctions)
            return SubscriptionResult(contract_id, ContractState.SUBSCRIBED, reservation=outcome)

    def amend(self, component_id: str, amendment: Amendment) -> SubmissionReport:
        """Renegotiate the subscribed contract.

        On acceptance the amended contract replaces the subscribed one and
        the container's monitors follow it; on rejection nothing changes.

        Raises:
            NoSubscribedContract: If the amendment does not target the subscribed contract
        """
        with self._lock(component_id):
            ledger = self.ledger.component(component_id)
            if ledger.subscribed is None or ledger.subscribed != amendment.contract_id:
                raise NoSubscribedContract(
                    f"{component_id} has no subscribed contract {amendment.contract_id!r}")
            record = ledger.contracts[ledger.subscribed]
            issues = validate_contract(apply_amendment(record.contract, amendment))
            if issues:
                raise InvalidAmendment(f"amendment {amendment.id or ''} breaks {amendment.contract_id}: "
                                       f"{', '.join(issue.code.value for issue in issues)}")
            report, reservation, amended = self.broker.evaluate_amendment(
                record.contract, ledger.reservation, amendment)
            entry = {'event': 'amendment', 'amendment': amendment.id, 'report': report_json(report)}
            if not report.accepted:
                entry['step'] = self.clock.tick()
                ledger.history.append(entry)
                logger.info(f"{component_id}: amendment {amendment.id or ''} of {amendment.contract_id} rejected")
                return report

            record.contract = amended
            ledger.reservation = reservation
            entry['step'] = self.ledger.transition(component_id, amended.id, ContractState.SUBSCRIBED)
            entry['profiles'] = amended.profile_ids
            ledger.history.append(entry)
            logger.info(f"{component_id}: amendment {amendment.id or ''} of {amended.id} accepted")
            container = self.containers.get(component_id)
            if container is not None:
                container.reconfigure(amended, amendment.id)
            return report

    def terminate(self, component_id: str):
        """Release the reservation and stop enforcing the subscribed contract.

        Raises:
            NoSubscribedContract: If the component holds no subscription
        """
        with self._lock(component_id):
            ledger = self.ledger.component(component_id)
            if ledger.subscribed is None:
                raise NoSubscribedContract(f"{component_id} has no subscribed contract")
            contract_id = ledger.subscribed
            self.broker.release(ledger.reservation)
            step = self.ledger.transition(component_id, contract_id, ContractState.TERMINATED)
            ledger.history.append({'step': step, 'event': 'terminated', 'contract': contract_id})
            ledger.subscribed = None
            ledger.reservation = None
            logger.info(f"{component_id} terminated {contract_id}")
            container = self.containers.get(component_id)
            if container is not None:
                container.stop()

    def subscribed_contract(self, component_id: str) -> Optional[Contract]:
        ledger = self.ledger.component(component_id)
        if ledger.subscribed is None:
            return None
        return ledger.contracts[ledger.subscribed].contract

    def export(self) -> dict:
        return self.ledger.export()
