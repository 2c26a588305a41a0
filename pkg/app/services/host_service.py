"""Service module for the host platform.

The host loads a scenario, builds the broker, the contract manager and one
container per component, runs the negotiation phase and then interleaves the
components' scripts step by step. Everything is driven by logical steps, so
the same scenario always yields the same trace and the same report.
"""

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Deque, Dict, List, Optional, Sequence

from ..errors import HandleClosed, JamusError, SchemaError
from ..models import db
from ..models.contract import Contract, validate_contract
from ..models.resource import ResourceEvent
from ..models.run_record import RunRecord
from ..models.scenario import SCHEMA_VERSION, ComponentSpec, Scenario, ScriptStep, StepOp, check_references
from ..utils.codec import load_scenario
from ..utils.trace import StepClock, render_trace
from .broker_service import PlatformCapacity, ResourceBroker, SubmissionReport, evaluate
from .container_service import DEFAULT_HOME, Container, ContainerState
from .negotiation_service import ContractManager, report_json
from .resource_service import ResourceHandle
from .sanction_service import Reaction

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_SCHEMA = 2
EXIT_SANCTIONED = 3


@dataclass
class RunReport:
    """Outcome of one scenario run; ``to_json`` is what the CLI writes."""

    scenario: str
    seed: Optional[int]
    negotiation: dict
    containers: Dict[str, dict]
    violations: List[dict]
    warnings: List[dict]
    sanctions_applied: List[dict]
    capacity: list
    step_errors: List[dict]
    events: List[ResourceEvent] = field(default_factory=list, repr=False)
    trace_path: Optional[str] = None

    @property
    def trace_text(self) -> str:
        return render_trace(self.events)

    @property
    def trace_sha256(self) -> str:
        return hashlib.sha256(self.trace_text.encode('utf-8')).hexdigest()

    @property
    def exit_status(self) -> int:
        return EXIT_SANCTIONED if self.sanctions_applied else EXIT_OK

    def to_json(self) -> dict:
        return {
            'schema_version': SCHEMA_VERSION,
            'scenario': self.scenario,
            'seed': self.seed,
            'negotiation': self.negotiation,
            'containers': self.containers,
            'violations': self.violations,
            'warnings': self.warnings,
            'sanctions_applied': self.sanctions_applied,
            'capacity': self.capacity,
            'step_errors': self.step_errors,
            'trace': {'path': self.trace_path, 'events': len(self.events), 'sha256': self.trace_sha256},
            'exit_status': self.exit_status,
        }


def _reaction(spec: ComponentSpec) -> Optional[Reaction]:
    if spec.on_warning is None:
        return None
    if spec.on_warning.kind == 'terminate':
        return Reaction.terminate()
    return Reaction.amend(spec.amendment(spec.on_warning.amendment))


class ComponentRunner:
    """Plays the script of one component inside its container."""

    def __init__(self, spec: ComponentSpec, container: Container, manager: ContractManager,
                 step_errors: List[dict]):
        self.spec = spec
        self.container = container
        self.manager = manager
        self.handles: Dict[str, ResourceHandle] = {}
        self.finished = False
        self._next = 0
        self._errors = step_errors
        self._pending: Deque[Reaction] = container.inbox.pending

    def has_work(self) -> bool:
        if self.finished:
            return False
        return bool(self._pending) or self._next < len(self.spec.script)

    def step(self):
        """Run the queued warning reaction, or else the next script step."""
        container = self.container
        container.clock.tick()
        if container.state is ContainerState.CREATED:
            self._record(None, None, 'NotConfigured', f"{self.spec.id} never started: no subscribed contract")
            self.finished = True
            return
        if container.state is ContainerState.STOPPED:
            self.finished = True
            return

        if self._pending:
            reaction = self._pending.popleft()
            try:
                self._react(reaction)
            except JamusError as e:
                self._record('on_warning', reaction.kind, type(e).__name__, str(e))
            return

        index = self._next
        self._next += 1
        step = self.spec.script[index]
        try:
            self._perform(step)
        except JamusError as e:
            self._record(index, step.op.value, type(e).__name__, str(e))

    def _record(self, index, op, error, message):
        logger.warning(f"{self.spec.id}: step {index} ({op}) failed: {error}: {message}")
        self._errors.append({'component': self.spec.id, 'step': index, 'op': op,
                             'error': error, 'message': message})

    def _react(self, reaction: Reaction):
        if reaction.kind == 'terminate':
            self.manager.terminate(self.spec.id)
        else:
            self.manager.amend(self.spec.id, reaction.amendment)

    def _handle(self, alias: str) -> ResourceHandle:
        handle = self.handles.get(alias)
        if handle is None:
            raise HandleClosed(f"handle {alias!r} was never opened")
        return handle

    def _perform(self, step: ScriptStep):
        container = self.container
        if step.op is StepOp.OPEN_FILE:
            self.handles[step.alias] = container.open_file(step.path, step.mode)
        elif step.op is StepOp.OPEN_SOCKET:
            self.handles[step.alias] = container.open_socket(step.host, step.port)
        elif step.op is StepOp.READ:
            container.read(self._handle(step.handle), step.bytes)
        elif step.op is StepOp.WRITE:
            container.write(self._handle(step.handle), step.bytes)
        elif step.op is StepOp.SEND:
            container.send(self._handle(step.handle), step.bytes)
        elif step.op is StepOp.RECEIVE:
            container.receive(self._handle(step.handle), step.bytes)
        elif step.op is StepOp.CLOSE:
            container.close(self._handle(step.handle))
        elif step.op is StepOp.ALLOCATE:
            container.allocate(step.bytes)
        elif step.op is StepOp.FREE:
            container.free(step.bytes)
        elif step.op is StepOp.AMEND:
            self.manager.amend(self.spec.id, self.spec.amendment(step.amendment))
        elif step.op is StepOp.TERMINATE:
            self.manager.terminate(self.spec.id)


class HostService:
    """Service class for running, checking and recording scenarios."""

    @staticmethod
    def load(path) -> Scenario:
        """Load and cross-check a scenario file.

        Raises:
            SchemaError: If the file is not valid JSON or breaks the schema
            ScenarioError: If it refers to something it does not define
        """
        scenario = load_scenario(path)
        check_references(scenario)
        return scenario

    @staticmethod
    def build_broker(scenario: Scenario) -> ResourceBroker:
        return ResourceBroker(PlatformCapacity.from_profiles(
            [(entry.pattern, entry.permission, entry.quota) for entry in scenario.capacity]))

    @staticmethod
    def run(scenario: Scenario, seed: Optional[int] = None, default_home: str = DEFAULT_HOME) -> RunReport:
        """Run a scenario to completion.

        Components negotiate in declaration order: each submits all its
        contracts, then subscribes the chosen one. Script steps are then
        interleaved round-robin, or in a seeded random order when ``seed``
        is given. Live resources are closed at the end of the run.

        Args:
            scenario: The scenario to run
            seed: Seed of the random interleaving, ``None`` for round-robin
            default_home: Home directory when the scenario declares none

        Returns:
            RunReport: Negotiation history, usage, enforcement log and trace
        """
        check_references(scenario)
        clock = StepClock()
        broker = HostService.build_broker(scenario)
        manager = ContractManager(broker, scenario.sanctions, clock)
        events: List[ResourceEvent] = []
        step_errors: List[dict] = []
        home = scenario.home or default_home

        runners = []
        for spec in scenario.components:
            container = Container(spec.id, broker, clock, home, spec.files, sink=events.append)
            container.inbox.handler = _reaction(spec)
            manager.attach(spec.id, container)
            runners.append(ComponentRunner(spec, container, manager, step_errors))

        for spec in scenario.components:
            for contract in spec.contracts:
                manager.submit(spec.id, contract)
            if spec.subscribe is not None:
                try:
                    manager.subscribe(spec.id, spec.subscribe)
                except JamusError as e:
                    step_errors.append({'component': spec.id, 'step': 'subscribe', 'op': 'subscribe',
                                        'error': type(e).__name__, 'message': str(e)})

        rng = random.Random(seed) if seed is not None else None
        while True:
            active = [runner for runner in runners if runner.has_work()]
            if not active:
                break
            if rng is None:
                for runner in active:
                    if runner.has_work():
                        runner.step()
            else:
                rng.choice(active).step()

        for runner in runners:
            runner.container.env.shutdown()

        containers = {runner.spec.id: runner.container for runner in runners}
        report = RunReport(
            scenario=scenario.name,
            seed=seed,
            negotiation=manager.export(),
            containers={cid: container.usage_report() for cid, container in containers.items()},
            violations=[
                {'component': v.component_id, 'step': v.step, 'kind': v.kind.value, 'profile': v.profile_id,
                 'descriptor': str(v.descriptor), 'access': v.access.value, 'amount': v.amount}
                for container in containers.values() for v in container.violations
            ],
            warnings=[
                {'component': w.component_id, 'step': w.step, 'reason': w.reason, 'sanction': w.sanction,
                 'descriptor': str(w.descriptor), 'count': w.count, 'threshold': w.threshold}
                for container in containers.values() for w in container.inbox.warnings
            ],
            sanctions_applied=[
                {'component': cid, 'sanction': sanction.label, 'action': sanction.action.value}
                for cid, container in containers.items() if container.engine is not None
                for sanction in container.engine.applied
            ],
            capacity=broker.snapshot(),
            step_errors=step_errors,
            events=events,
        )
        logger.info(f"Scenario {scenario.name} finished: {len(report.violations)} violation(s), "
                    f"{len(report.sanctions_applied)} sanction(s), exit {report.exit_status}")
        return report

    @staticmethod
    def check(contract: Contract, capacity: Sequence) -> SubmissionReport:
        """Offline admission check of one contract against a capacity.

        Raises:
            SchemaError: If the contract breaks its own invariants
        """
        issues = validate_contract(contract)
        if issues:
            raise SchemaError(', '.join(f"{issue.code.value} {issue.detail}".rstrip() for issue in issues))
        platform = PlatformCapacity.from_profiles([(entry.pattern, entry.permission, entry.quota)
                                                   for entry in capacity])
        return evaluate(platform, contract)

    @staticmethod
    def check_json(report: SubmissionReport) -> dict:
        return report_json(report)

    @staticmethod
    def record(report: RunReport, scenario_path) -> RunRecord:
        """Store a run in the history database."""
        digest = hashlib.sha256(Path(scenario_path).read_bytes()).hexdigest()
        record = RunRecord(
            scenario=report.scenario,
            scenario_sha256=digest,
            seed=report.seed,
            exit_status=report.exit_status,
            trace_sha256=report.trace_sha256,
            violations=len(report.violations),
            warnings=len(report.warnings),
            sanctions=len(report.sanctions_applied),
            report=json.dumps(report.to_json(), sort_keys=True),
        )
        db.session.add(record)
        db.session.commit()
        return record

    @staticmethod
    def history(limit: int = 20) -> List[RunRecord]:
        return RunRecord.query.order_by(RunRecord.created_at.desc(), RunRecord.id.desc()).limit(limit).all()
