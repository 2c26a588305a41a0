"""Service module for offline trace verification.

``verify_trace`` replays a trace written by ``host run`` against the
scenario that produced it. It keeps its own plain bookkeeping (current
contract, live resources, per-profile usage, allocated memory, sanction
counters and platform capacity) and derives, for every creation and every
access, the outcome the contracts and sanctions call for. Any line that
disagrees, or that breaks the ordering of a resource's lifecycle, is
reported as a discrepancy. It shares no code with the containers.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set

from ..errors import JamusError
from ..models.contract import QUOTA_FIELDS, apply_amendment, parse_permission, select_most_specific
from ..models.resource import AccessKind, EventType, ResourceDescriptor, ResourceKind, Verdict
from ..models.sanction import SanctionAction, SanctionKind
from ..models.scenario import ComponentSpec, Scenario
from ..utils.trace import TraceLine

logger = logging.getLogger(__name__)

CREATION_FLOW = {
    EventType.REGISTRY_BROADCAST, EventType.TRACKER_NOTIFIED, EventType.MONITOR_LIST_QUERIED,
    EventType.MONITOR_SELECTED, EventType.VIOLATION, EventType.WARNING, EventType.SANCTION_APPLIED,
    EventType.HANDLE_LOCKED,
}
ACCESS_FLOW = {
    EventType.MONITOR_NOTIFIED, EventType.VIOLATION, EventType.WARNING, EventType.SANCTION_APPLIED,
    EventType.HANDLE_LOCKED, EventType.CAPACITY_DENIED,
}
ENFORCEMENT = (EventType.VIOLATION, EventType.WARNING, EventType.SANCTION_APPLIED, EventType.CAPACITY_DENIED)


@dataclass(frozen=True)
class Discrepancy:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


def _route(contract, descriptor):
    return select_most_specific([p for p in contract.profiles if p.pattern.matches(descriptor)], lambda p: p.pattern)


class SanctionModel:
    """Violation counters of one component, kept sanction by sanction."""

    def __init__(self, sanctions):
        self.sanctions = list(sanctions)
        self.count = [0] * len(self.sanctions)
        self.applied = [False] * len(self.sanctions)

    def _matching(self, descriptor) -> List[int]:
        return [i for i, sanction in enumerate(self.sanctions) if sanction.pattern.matches(descriptor)]

    def standing(self, descriptor) -> Optional[Verdict]:
        hits = [i for i in self._matching(descriptor) if self.applied[i]]
        if not hits:
            return None
        if any(self.sanctions[i].action is SanctionAction.LOCK for i in hits):
            return Verdict.LOCK
        return Verdict.REJECT

    def locked(self, descriptor) -> bool:
        return any(self.applied[i] and self.sanctions[i].action is SanctionAction.LOCK
                   for i in self._matching(descriptor))

    def violate(self, descriptor):
        """Return (verdict, warned, applied now) for one violation."""
        matching = self._matching(descriptor)
        if not matching:
            return Verdict.REJECT, False, False
        i = select_most_specific(matching, lambda index: self.sanctions[index].pattern)
        sanction = self.sanctions[i]
        action = Verdict(sanction.action.value)
        if sanction.kind is SanctionKind.IMMEDIATE:
            newly = sanction.action is SanctionAction.LOCK and not self.applied[i]
            self.applied[i] = self.applied[i] or newly
            return action, False, newly
        if self.applied[i]:
            return action, False, False
        self.count[i] += 1
        if self.count[i] >= sanction.threshold:
            self.applied[i] = True
            return action, False, True
        return Verdict.REJECT, True, False

    def conformant(self, descriptor):
        for i in self._matching(descriptor):
            if self.sanctions[i].kind is SanctionKind.DEFERRED and not self.applied[i]:
                self.count[i] = 0


class CapacityModel:
    """Remaining quota and best-effort usage per capacity entry, as plain dicts."""

    def __init__(self, entries):
        self.patterns = [entry.pattern for entry in entries]
        self.remaining = [dict(entry.quota.components()) for entry in entries]
        self.best_effort = [{name: 0 for name in entry.quota.components()} for entry in entries]

    def entry_for(self, pattern) -> Optional[int]:
        covering = [i for i, candidate in enumerate(self.patterns) if candidate.covers(pattern)]
        return select_most_specific(covering, lambda i: self.patterns[i])

    def reserve(self, contract, sign: int):
        for profile in contract.profiles:
            if not profile.reserved:
                continue
            i = self.entry_for(profile.pattern)
            for name, value in profile.quota.components().items():
                self.remaining[i][name] -= sign * value

    def best_effort_allows(self, profile, access: AccessKind, amount: int) -> bool:
        i = self.entry_for(profile.pattern)
        if i is None:
            return False
        name = QUOTA_FIELDS.get(access)
        if name is None or access is AccessKind.FREE:
            return True
        return amount <= self.remaining[i][name] - self.best_effort[i][name]

    def consume(self, profile, access: AccessKind, amount: int):
        i = self.entry_for(profile.pattern)
        name = QUOTA_FIELDS.get(access)
        if i is None or name is None:
            return
        if access is AccessKind.FREE:
            self.best_effort[i][name] = max(0, self.best_effort[i][name] - amount)
        else:
            self.best_effort[i][name] += amount


@dataclass
class Expectation:
    line: int
    creation: bool
    descriptor: str
    verdict: Verdict
    access: Optional[str] = None
    amount: Optional[int] = None
    profile: object = None
    violation: bool = False
    warning: bool = False
    sanction: bool = False
    capacity: bool = False
    seen: Set[EventType] = field(default_factory=set)


class ComponentModel:
    def __init__(self, spec: ComponentSpec, sanctions):
        self.spec = spec
        self.contract = None
        self.running = False
        self.sequence = 0
        self.live: Counter = Counter()
        self.usage: Dict[str, Dict[str, int]] = {}
        self.allocated = 0
        self.sanctions = SanctionModel(sanctions)
        self.pending: Optional[Expectation] = None

    def start(self, contract):
        self.contract = contract
        self.running = True
        self.usage = {profile.id: {name: 0 for name in profile.quota.components()} for profile in contract.profiles}

    def amend(self, amended):
        kinds = {profile.id: profile.kind for profile in self.contract.profiles}
        usage = {}
        for profile in amended.profiles:
            if kinds.get(profile.id) is profile.kind:
                usage[profile.id] = self.usage[profile.id]
            else:
                usage[profile.id] = {name: 0 for name in profile.quota.components()}
        self.contract = amended
        self.usage = usage


class TraceVerifier:
    """Replays trace lines one by one and collects discrepancies."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.capacity = CapacityModel(scenario.capacity)
        self.components = {spec.id: ComponentModel(spec, scenario.sanctions) for spec in scenario.components}
        self.discrepancies: List[Discrepancy] = []

    def report(self, line: int, message: str):
        self.discrepancies.append(Discrepancy(line, message))

    def verify(self, lines: List[TraceLine]) -> List[Discrepancy]:
        for line in lines:
            self.feed(line)
        self.finish(lines[-1].line_number if lines else 1)
        return self.discrepancies

    def feed(self, line: TraceLine):
        component = self.components.get(line.component_id)
        if component is None:
            self.report(line.line_number, f"unknown component {line.component_id!r}")
            return
        if line.sequence_number != component.sequence + 1:
            self.report(line.line_number, f"sequence number {line.sequence_number} follows {component.sequence}")
        component.sequence = line.sequence_number

        pending = component.pending
        if pending is not None:
            if pending.creation:
                if line.type is EventType.VETOED:
                    self._resolve(component, line, allowed=False)
                    return
                if line.type is EventType.MONITOR_SUBSCRIBED:
                    self._resolve(component, line, allowed=True)
                    return
                if line.type in CREATION_FLOW:
                    pending.seen.add(line.type)
                    return
            else:
                if line.type in (EventType.ACCESS_COMPLETED, EventType.ACCESS_DENIED):
                    self._resolve(component, line, allowed=line.type is EventType.ACCESS_COMPLETED)
                    return
                if line.type in ACCESS_FLOW:
                    pending.seen.add(line.type)
                    return
            what = 'creation' if pending.creation else 'access'
            self.report(pending.line, f"{what} on {pending.descriptor} has no outcome")
            component.pending = None

        handler = getattr(self, f"_on_{line.type.name.lower()}", None)
        if handler is not None:
            handler(component, line)

    def finish(self, last_line: int):
        for component in self.components.values():
            if component.pending is not None:
                self.report(component.pending.line, f"{component.pending.descriptor} has no outcome")
                component.pending = None
            for descriptor, count in sorted(component.live.items()):
                if count > 0:
                    self.report(last_line, f"{descriptor} of {component.spec.id} never destroyed")

    # lifecycle lines

    def _descriptor(self, line: TraceLine) -> Optional[ResourceDescriptor]:
        try:
            return ResourceDescriptor.parse(line.subject or '')
        except (ValueError, JamusError):
            self.report(line.line_number, f"malformed descriptor {line.subject!r}")
            return None

    def _on_component_started(self, component: ComponentModel, line: TraceLine):
        contract_id = (line.subject or '').partition(':')[2]
        contract = component.spec.contract(contract_id)
        if contract is None or component.running:
            self.report(line.line_number, f"unexpected start under {contract_id!r}")
            return
        component.start(contract)
        self.capacity.reserve(contract, +1)

    def _on_contract_amended(self, component: ComponentModel, line: TraceLine):
        amendment_id = (line.subject or '').partition(':')[2]
        amendment = component.spec.amendment(amendment_id)
        if amendment is None or not component.running:
            self.report(line.line_number, f"unexpected amendment {amendment_id!r}")
            return
        try:
            amended = apply_amendment(component.contract, amendment)
        except JamusError as e:
            self.report(line.line_number, f"amendment {amendment_id!r} cannot apply: {e}")
            return
        self.capacity.reserve(component.contract, -1)
        self.capacity.reserve(amended, +1)
        component.amend(amended)

    def _on_contract_terminated(self, component: ComponentModel, line: TraceLine):
        if not component.running:
            self.report(line.line_number, "termination without a running contract")
            return
        self.capacity.reserve(component.contract, -1)
        component.running = False

    def _on_destroyed(self, component: ComponentModel, line: TraceLine):
        if component.live[line.subject] <= 0:
            self.report(line.line_number, f"Destroyed {line.subject} without a live Created")
            return
        component.live[line.subject] -= 1

    def _on_created(self, component: ComponentModel, line: TraceLine):
        descriptor = self._descriptor(line)
        if descriptor is None:
            return
        if not component.running:
            self.report(line.line_number, f"{descriptor} created outside a running contract")
            return
        component.live[line.subject] += 1
        mode = parse_permission(descriptor.kind, line.access or 'none')

        expectation = Expectation(line.line_number, True, line.subject, Verdict.ALLOW)
        if component.sanctions.locked(descriptor):
            expectation.verdict = Verdict.LOCK
        else:
            profile = _route(component.contract, descriptor)
            wanted = [name for name, flag in mode.flags().items() if flag]
            if profile is None or not all(profile.permission.flags()[name] for name in wanted):
                self._expect_violation(component, descriptor, expectation)
        component.pending = expectation

    # accesses

    def _on_access_requested(self, component: ComponentModel, line: TraceLine):
        descriptor = self._descriptor(line)
        if descriptor is None:
            return
        if component.live[line.subject] <= 0:
            self.report(line.line_number, f"access on {line.subject} without a live Created")
        try:
            access = AccessKind(line.access)
        except ValueError:
            self.report(line.line_number, f"unknown access {line.access!r}")
            return
        if access.resource_kind is not descriptor.kind:
            self.report(line.line_number, f"{access.value} does not apply to {line.subject}")
            return
        amount = line.amount
        if amount is None:
            self.report(line.line_number, 'access without an amount')
            return
        expectation = Expectation(line.line_number, False, line.subject, Verdict.ALLOW, access.value, amount)
        component.pending = expectation

        standing = component.sanctions.standing(descriptor)
        if standing is not None:
            expectation.verdict = standing
            return
        profile = _route(component.contract, descriptor) if component.contract is not None else None
        expectation.profile = profile
        if profile is None or not profile.permission.grants(access) \
                or self._over_quota(component, profile, access, amount):
            self._expect_violation(component, descriptor, expectation)
        elif not profile.reserved and not self.capacity.best_effort_allows(profile, access, amount):
            expectation.verdict = Verdict.REJECT
            expectation.capacity = True

    def _over_quota(self, component: ComponentModel, profile, access: AccessKind, amount: int) -> bool:
        name = QUOTA_FIELDS.get(access)
        if name is None or access is AccessKind.FREE:
            return False
        used = component.allocated if profile.kind is ResourceKind.MEMORY else component.usage[profile.id][name]
        return used + amount > profile.quota.components()[name]

    def _expect_violation(self, component: ComponentModel, descriptor, expectation: Expectation):
        verdict, warned, applied = component.sanctions.violate(descriptor)
        expectation.verdict = verdict
        expectation.violation = True
        expectation.warning = warned
        expectation.sanction = applied

    def _resolve(self, component: ComponentModel, line: TraceLine, allowed: bool):
        expectation = component.pending
        component.pending = None
        what = 'creation' if expectation.creation else 'access'
        expected_allowed = expectation.verdict is Verdict.ALLOW
        at = line.line_number
        if allowed and not expected_allowed:
            self.report(at, f"{what} on {expectation.descriptor} allowed, expected {expectation.verdict.value}")
        elif not allowed and expected_allowed:
            self.report(at, f"{what} on {expectation.descriptor} denied, expected allow")
        elif not allowed and line.verdict is not expectation.verdict:
            got = line.verdict.value if line.verdict else '-'
            self.report(at, f"{what} on {expectation.descriptor} denied with {got}, "
                            f"expected {expectation.verdict.value}")
        if allowed and not expectation.creation and line.verdict is not Verdict.ALLOW:
            self.report(at, "completed access must carry the allow verdict")

        for flag, event_type in zip(
                (expectation.violation, expectation.warning, expectation.sanction, expectation.capacity),
                ENFORCEMENT):
            if flag and event_type not in expectation.seen:
                self.report(at, f"missing {event_type.value} for {what} on {expectation.descriptor}")
            elif not flag and event_type in expectation.seen:
                self.report(at, f"unexpected {event_type.value} for {what} on {expectation.descriptor}")

        if expectation.creation:
            return
        if line.subject != expectation.descriptor or line.access != expectation.access \
                or line.amount != expectation.amount:
            self.report(at, f"outcome does not match the request at line {expectation.line}")
            return
        if allowed and expected_allowed:
            self._charge(component, expectation)

    def _charge(self, component: ComponentModel, expectation: Expectation):
        access = AccessKind(expectation.access)
        profile = expectation.profile
        amount = expectation.amount
        if access is AccessKind.ALLOCATE:
            component.allocated += amount
        elif access is AccessKind.FREE:
            component.allocated -= amount
        elif access in QUOTA_FIELDS:
            component.usage[profile.id][QUOTA_FIELDS[access]] += amount
        if not profile.reserved:
            self.capacity.consume(profile, access, amount)
        component.sanctions.conformant(ResourceDescriptor.parse(expectation.descriptor))

    # lines that only make sense inside a creation or an access

    def _unexpected(self, component: ComponentModel, line: TraceLine):
        self.report(line.line_number, f"{line.type.value} outside any creation or access")

    _on_access_completed = _unexpected
    _on_access_denied = _unexpected
    _on_vetoed = _unexpected
    _on_violation = _unexpected
    _on_warning = _unexpected
    _on_sanction_applied = _unexpected
    _on_capacity_denied = _unexpected
    _on_monitor_notified = _unexpected


def verify_trace(lines: List[TraceLine], scenario: Scenario) -> List[Discrepancy]:
    """Replay ``lines`` against ``scenario``; an empty list means the trace is sound."""
    discrepancies = TraceVerifier(scenario).verify(lines)
    logger.info(f"Verified {len(lines)} trace line(s): {len(discrepancies)} discrepancy(ies)")
    return discrepancies
