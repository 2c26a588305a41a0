"""Service module for violation management.

Each container owns a ``SanctionEngine`` configured with the platform's
sanctions. Immediate sanctions act on the first violation. Deferred
sanctions count consecutive violations, warn the component until the
threshold is reached, then apply their action for good. A conformant
access on a matching resource resets the count.
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Deque, List, Optional, Sequence, Tuple

from typing_extensions import Self

from ..models.contract import Amendment, select_most_specific
from ..models.resource import AccessKind, AccessVerdict, EventType, ResourceDescriptor, Verdict
from ..models.sanction import (
    ComponentWarning,
    Sanction,
    SanctionAction,
    SanctionKind,
    ViolationEvent,
)
from ..utils.trace import EventLog, StepClock

logger = logging.getLogger(__name__)


@dataclass
class ViolationCounter:
    sanction: Sanction
    count: int = 0
    warnings: int = 0
    applied: bool = False


class SanctionEngine:
    """Turns violations into verdicts for one component.

    Args:
        component_id: Component whose violations are judged
        sanctions: Platform sanctions, in configuration order
        log: Container event log receiving Warning and SanctionApplied lines
        clock: Logical clock stamping warnings
        on_applied: Called with a sanction when it becomes permanent
    """

    def __init__(self, component_id: str, sanctions: Sequence[Sanction], log: EventLog,
                 clock: Optional[StepClock] = None,
                 on_applied: Optional[Callable[[Sanction], None]] = None):
        self.component_id = component_id
        self.counters = [ViolationCounter(sanction) for sanction in sanctions]
        self._log = log
        self._clock = clock or StepClock()
        self._on_applied = on_applied
        self.applied: List[Sanction] = []

    def select(self, descriptor: ResourceDescriptor) -> Optional[ViolationCounter]:
        return select_most_specific(
            (counter for counter in self.counters if counter.sanction.pattern.matches(descriptor)),
            lambda counter: counter.sanction.pattern,
        )

    def on_violation(self, violation: ViolationEvent) -> Tuple[AccessVerdict, Optional[ComponentWarning]]:
        """Return the verdict for a violating access and the warning, if any.

        The violating access itself is always denied.
        """
        counter = self.select(violation.descriptor)
        reason = f"{violation.kind.value} on {violation.descriptor}"
        if counter is None:
            return AccessVerdict.reject(reason), None

        sanction = counter.sanction
        reason = f"{reason}, sanction {sanction.label}"
        if sanction.kind is SanctionKind.IMMEDIATE:
            if sanction.action is SanctionAction.LOCK and not counter.applied:
                self._apply(counter)
            return sanction.action.verdict(reason), None

        if counter.applied:
            return sanction.action.verdict(reason), None
        counter.count += 1
        if counter.count >= sanction.threshold:
            self._apply(counter)
            return sanction.action.verdict(reason), None

        counter.warnings += 1
        warning = ComponentWarning(
            component_id=self.component_id,
            reason='sanction',
            descriptor=violation.descriptor,
            step=self._clock.tick(),
            sanction=sanction.label,
            count=counter.count,
            threshold=sanction.threshold,
        )
        self._log.emit(EventType.WARNING, f"sanction:{sanction.label}", access=violation.access,
                       amount=counter.count, verdict=Verdict.REJECT)
        return AccessVerdict.reject(f"{reason} (warning {counter.count}/{sanction.threshold})"), warning

    def on_conformant_access(self, descriptor: ResourceDescriptor, access: AccessKind):
        """Reset the consecutive count of matching deferred sanctions."""
        for counter in self.counters:
            if (counter.sanction.kind is SanctionKind.DEFERRED and not counter.applied
                    and counter.sanction.pattern.matches(descriptor)):
                counter.count = 0

    def locks(self, descriptor: ResourceDescriptor) -> bool:
        return any(counter.applied and counter.sanction.action is SanctionAction.LOCK
                   and counter.sanction.pattern.matches(descriptor) for counter in self.counters)

    def standing_verdict(self, descriptor: ResourceDescriptor) -> Optional[AccessVerdict]:
        """Verdict of a permanently applied sanction covering ``descriptor``."""
        matching = [counter for counter in self.counters
                    if counter.applied and counter.sanction.pattern.matches(descriptor)]
        if not matching:
            return None
        for counter in matching:
            if counter.sanction.action is SanctionAction.LOCK:
                return AccessVerdict.lock(f"{descriptor} locked by sanction {counter.sanction.label}")
        return AccessVerdict.reject(f"{descriptor} rejected by sanction {matching[0].sanction.label}")

    def _apply(self, counter: ViolationCounter):
        counter.applied = True
        self.applied.append(counter.sanction)
        sanction = counter.sanction
        self._log.emit(EventType.SANCTION_APPLIED, f"sanction:{sanction.label}",
                       verdict=Verdict(sanction.action.value))
        logger.error(f"{self.component_id}: sanction {sanction.label} applied ({sanction.action.value})")
        if self._on_applied is not None:
            self._on_applied(sanction)


@dataclass(frozen=True)
class Reaction:
    """What a component does when warned: amend its contract or terminate."""

    kind: str
    amendment: Optional[Amendment] = None

    @classmethod
    def amend(cls, amendment: Amendment) -> Self:
        return cls('amend', amendment)

    @classmethod
    def terminate(cls) -> Self:
        return cls('terminate')


class ComponentInbox:
    """Warnings received by a component and its declared reaction."""

    def __init__(self, component_id: str, handler: Optional[Reaction] = None):
        self.component_id = component_id
        self.handler = handler
        self.warnings: List[ComponentWarning] = []
        self.pending: Deque[Reaction] = deque()


def deliver_warning(inbox: ComponentInbox, warning: ComponentWarning) -> Optional[Reaction]:
    """Append ``warning`` to the inbox and schedule the component's reaction.

    Only sanction warnings trigger the declared handler; the reaction is
    queued so the host runs it as the component's next step.
    """
    inbox.warnings.append(warning)
    logger.warning(f"{inbox.component_id}: warning on {warning.descriptor} ({warning.reason}, "
                   f"{warning.count}/{warning.threshold})")
    if warning.reason != 'sanction' or inbox.handler is None:
        return None
    inbox.pending.append(inbox.handler)
    return inbox.handler
