"""Service module for per-component supervision.

A ``Container`` hosts one component behind its own virtual resource
environment. Configuring it with a subscribed contract registers the
resource tracker on the registry and instantiates one resource monitor per
contract profile. From then on every resource the component creates is
routed by the tracker to the most specific monitor, which checks each access
against the profile's permission and quota and reports violations to the
sanction engine.
"""

import logging
import time
from enum import Enum
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple

from ..errors import AlreadyConfigured, NotConfigured
from ..models.contract import (
    Contract,
    FilePattern,
    FilePermission,
    FileQuota,
    MemoryQuota,
    ResourceUtilisationProfile,
    permits,
    zero_quota,
)
from ..models.resource import (
    AccessKind,
    AccessVerdict,
    EventType,
    HandleState,
    ResourceDescriptor,
    ResourceEvent,
    ResourceKind,
    Verdict,
)
from ..models.sanction import ComponentWarning, Sanction, SanctionAction, ViolationEvent, ViolationKind
from ..utils.trace import EventLog, StepClock
from .broker_service import ResourceBroker
from .resource_service import ResourceHandle, Subscription, VirtualEnvironment
from .sanction_service import ComponentInbox, SanctionEngine, deliver_warning

logger = logging.getLogger(__name__)

DEFAULT_HOME = '/home/jamus'


def _profile_label(profile: ResourceUtilisationProfile) -> str:
    return f"profile:{profile.id}"


class ResourceMonitor:
    """Keeps the usage ledger of one profile and checks the accesses routed to it."""

    kind: ClassVar[ResourceKind]

    def __init__(self, profile: ResourceUtilisationProfile, container: 'Container'):
        self.profile = profile
        self.usage = zero_quota(profile.kind)
        self._container = container
        self._subscriptions: Dict[int, Subscription] = {}

    @property
    def name(self) -> str:
        return type(self).__name__

    @property
    def handle_ids(self) -> List[int]:
        return sorted(self._subscriptions)

    def supervises(self, handle: ResourceHandle) -> bool:
        return handle.handle_id in self._subscriptions

    def supervise(self, handle: ResourceHandle):
        if handle.handle_id not in self._subscriptions:
            self._subscriptions[handle.handle_id] = handle.register_listener(self.on_event)

    def release(self, handle: ResourceHandle):
        subscription = self._subscriptions.pop(handle.handle_id, None)
        if subscription is not None:
            subscription.cancel()

    def retire(self):
        for subscription in self._subscriptions.values():
            subscription.cancel()
        self._subscriptions.clear()

    def on_event(self, event: ResourceEvent, handle: ResourceHandle) -> Optional[AccessVerdict]:
        if event.type is EventType.ACCESS_REQUESTED:
            return self.check_access(event, handle)
        if event.type is EventType.ACCESS_COMPLETED:
            self.charge(handle, AccessKind(event.access), event.amount)
        elif event.type is EventType.DESTROYED:
            self._subscriptions.pop(handle.handle_id, None)
        return None

    def check_access(self, event: ResourceEvent, handle: ResourceHandle) -> Optional[AccessVerdict]:
        """Allow iff the profile permits the access and the quota has room.

        Returns ``None`` for Allow; the ledger is charged only when the
        access completes.
        """
        container = self._container
        access = AccessKind(event.access)
        amount = event.amount
        container.log.emit(EventType.MONITOR_NOTIFIED, handle.descriptor, handle.handle_id, access, amount)

        standing = container.engine.standing_verdict(handle.descriptor)
        if standing is not None:
            return standing
        if not permits(self.profile, access):
            return container.violation(self.profile, handle, access, amount, ViolationKind.PERMISSION)
        headroom = self.profile.quota.headroom(self.usage, access)
        if headroom is not None and amount > headroom:
            return container.violation(self.profile, handle, access, amount, ViolationKind.QUOTA)
        broker = container.broker
        if not self.profile.reserved and broker is not None \
                and not broker.best_effort_allows(self.profile, access, amount):
            return container.capacity_denied(handle, access, amount)
        return None

    def charge(self, handle: ResourceHandle, access: AccessKind, amount: int):
        self.usage = self.usage.charged(access, amount)
        broker = self._container.broker
        if not self.profile.reserved and broker is not None:
            broker.consume_best_effort(self.profile, access, amount)
        self._container.engine.on_conformant_access(handle.descriptor, access)

    def snapshot(self) -> dict:
        return {
            'id': self.profile.id,
            'monitor': self.name,
            'pattern': str(self.profile.pattern),
            'policy': self.profile.policy.value,
            'quota': self.profile.quota.components(),
            'consumed': self.usage.components(),
            'handles': len(self._subscriptions),
        }


class FileMonitor(ResourceMonitor):
    kind = ResourceKind.FILE


class SocketMonitor(ResourceMonitor):
    kind = ResourceKind.SOCKET


class MemoryMonitor(ResourceMonitor):
    """Bounds the amount of memory the component holds at any time."""

    kind = ResourceKind.MEMORY

    def __init__(self, profile: ResourceUtilisationProfile, container: 'Container'):
        super().__init__(profile, container)
        # the pool may already hold memory when the profile is added by amendment
        self.usage = MemoryQuota(container.env.allocated)


MONITOR_TYPES = {monitor.kind: monitor for monitor in (FileMonitor, SocketMonitor, MemoryMonitor)}


class ApplicationMonitor:
    """Extracts the profiles of the subscribed contract and owns their monitors."""

    def __init__(self, container: 'Container'):
        self._container = container
        self.contract: Optional[Contract] = None
        self._monitors: Dict[str, ResourceMonitor] = {}

    def monitors(self) -> List[ResourceMonitor]:
        if self.contract is None:
            return []
        return [self._monitors[profile_id] for profile_id in self.contract.profile_ids]

    def monitor(self, profile_id: str) -> Optional[ResourceMonitor]:
        return self._monitors.get(profile_id)

    def select(self, descriptor: ResourceDescriptor) -> Optional[ResourceMonitor]:
        if self.contract is None:
            return None
        profile = self.contract.route(descriptor)
        return self._monitors[profile.id] if profile is not None else None

    def instantiate(self, contract: Contract):
        self.contract = contract
        for profile in contract.profiles:
            self._monitors[profile.id] = self._create(profile)

    def reconfigure(self, contract: Contract) -> Tuple[List[ResourceMonitor], List[ResourceMonitor]]:
        """Switch to an amended contract.

        Monitors of profiles kept under the same id and kind keep their
        ledger and take the new profile; the others are retired or created.
        """
        retired, added = [], []
        kept: Dict[str, ResourceMonitor] = {}
        for profile in contract.profiles:
            current = self._monitors.get(profile.id)
            if current is not None and current.kind is profile.kind:
                current.profile = profile
                kept[profile.id] = current
        for profile_id, monitor in self._monitors.items():
            if profile_id not in kept:
                monitor.retire()
                retired.append(monitor)
                self._container.log.emit(EventType.MONITOR_RETIRED, _profile_label(monitor.profile),
                                         access=monitor.name)

        self._monitors = kept
        self.contract = contract
        for profile in contract.profiles:
            if profile.id not in kept:
                monitor = self._create(profile)
                self._monitors[profile.id] = monitor
                added.append(monitor)
        return retired, added

    def _create(self, profile: ResourceUtilisationProfile) -> ResourceMonitor:
        monitor = MONITOR_TYPES[profile.kind](profile, self._container)
        self._container.log.emit(EventType.MONITOR_INSTANTIATED, _profile_label(profile), access=monitor.name)
        return monitor


def _mode_accesses(mode) -> List[AccessKind]:
    return [AccessKind(name) for name, wanted in mode.flags().items() if wanted]


class ResourceTracker:
    """Registry listener routing every new resource to its monitor."""

    def __init__(self, container: 'Container'):
        self._container = container
        self.subscription: Optional[Subscription] = None

    def register(self):
        self.subscription = self._container.registry.register_listener(self.on_event)
        self._container.log.emit(EventType.TRACKER_REGISTERED, 'tracker')

    def unregister(self):
        if self.subscription is not None:
            self.subscription.cancel()
            self.subscription = None

    def on_event(self, event: ResourceEvent, handle: ResourceHandle) -> Optional[AccessVerdict]:
        if event.type is not EventType.CREATED:
            return None
        self._container.log.emit(EventType.TRACKER_NOTIFIED, handle.descriptor, handle.handle_id)
        return self.route_creation(event, handle)

    def route_creation(self, event: ResourceEvent, handle: ResourceHandle) -> Optional[AccessVerdict]:
        """Hand ``handle`` to the monitor whose profile matches it most specifically.

        Creations on a locked pattern are vetoed outright. A resource that no
        profile matches, or whose mode asks for a flag its profile lacks, is
        a permission violation and its creation is refused.
        """
        container = self._container
        descriptor = handle.descriptor
        if container.engine.locks(descriptor):
            return container.engine.standing_verdict(descriptor)

        monitors = container.app_monitor.monitors()
        container.log.emit(EventType.MONITOR_LIST_QUERIED, descriptor, handle.handle_id, amount=len(monitors))
        monitor = container.app_monitor.select(descriptor)
        requested = _mode_accesses(handle.mode)
        if monitor is None:
            logger.info(f"{container.component_id}: no profile governs {descriptor}")
            return container.violation(None, handle, requested[0], 0, ViolationKind.PERMISSION)

        container.log.emit(EventType.MONITOR_SELECTED, _profile_label(monitor.profile), handle.handle_id,
                           access=monitor.name)
        for access in requested:
            if not monitor.profile.permission.grants(access):
                return container.violation(monitor.profile, handle, access, 0, ViolationKind.PERMISSION)
        monitor.supervise(handle)
        container.log.emit(EventType.MONITOR_SUBSCRIBED, _profile_label(monitor.profile), handle.handle_id)
        return None


class ContainerState(str, Enum):
    CREATED = 'created'
    RUNNING = 'running'
    STOPPED = 'stopped'


class Container:
    """Supervision cell of one hosted component.

    Args:
        component_id: The hosted component
        broker: Broker consulted for best-effort capacity; ``None`` skips the check
        clock: Global logical clock stamping violations and warnings
        home: Directory ``~`` denotes in the component's namespace
        files: Files present in the namespace before start, path -> size
        sink: Receives every event of this container, for the host trace
        keep_events: Keep events in memory on ``log.events``
    """

    def __init__(self, component_id: str, broker: Optional[ResourceBroker] = None,
                 clock: Optional[StepClock] = None, home: str = DEFAULT_HOME,
                 files: Optional[Dict[str, int]] = None, sink=None, keep_events: bool = True):
        self.component_id = component_id
        self.broker = broker
        self.clock = clock or StepClock()
        self.log = EventLog(component_id, sink, keep_events)
        self.env = VirtualEnvironment(component_id, self.log, home, files)
        self.registry = self.env.registry
        self.tracker = ResourceTracker(self)
        self.app_monitor = ApplicationMonitor(self)
        self.engine: Optional[SanctionEngine] = None
        self.inbox = ComponentInbox(component_id)
        self.violations: List[ViolationEvent] = []
        self.capacity_denials = 0
        self.state = ContainerState.CREATED
        self._unmatched: Dict[int, Subscription] = {}

    @property
    def contract(self) -> Optional[Contract]:
        return self.app_monitor.contract

    # configuration

    def configure(self, contract: Contract, sanctions: Sequence[Sanction] = ()):
        """Wire the tracker, instantiate the monitors and start the component.

        Raises:
            AlreadyConfigured: If the container was configured before
        """
        if self.state is not ContainerState.CREATED:
            raise AlreadyConfigured(f"container of {self.component_id!r} is already configured")
        self.engine = SanctionEngine(self.component_id, sanctions, self.log, self.clock,
                                     on_applied=self._on_sanction_applied)
        self.tracker.register()
        self.app_monitor.instantiate(contract)
        self.log.emit(EventType.COMPONENT_STARTED, f"contract:{contract.id}")
        self.state = ContainerState.RUNNING
        logger.info(f"{self.component_id}: started under {contract.id} with "
                    f"{len(contract.profiles)} monitor(s)")

    def reconfigure(self, contract: Contract, amendment_id: Optional[str] = None):
        """Enforce an amended contract and re-route every live resource."""
        self._require_running()
        subject = f"amendment:{amendment_id}" if amendment_id else f"contract:{contract.id}"
        self.log.emit(EventType.CONTRACT_AMENDED, subject)
        self.app_monitor.reconfigure(contract)
        self.reroute()

    def reroute(self):
        for handle in self.registry.live_handles():
            if handle.state is HandleState.CLOSED:
                continue
            current = next((m for m in self.app_monitor.monitors() if m.supervises(handle)), None)
            target = self.app_monitor.select(handle.descriptor)
            if target is not None and target is current:
                continue
            if target is None and handle.handle_id in self._unmatched:
                continue
            if current is not None:
                current.release(handle)
            unmatched = self._unmatched.pop(handle.handle_id, None)
            if unmatched is not None:
                unmatched.cancel()
            if target is None:
                self._unmatched[handle.handle_id] = handle.register_listener(self._deny_unmatched)
                continue
            target.supervise(handle)
            self.log.emit(EventType.MONITOR_SELECTED, _profile_label(target.profile), handle.handle_id,
                          access=target.name)
            self.log.emit(EventType.MONITOR_SUBSCRIBED, _profile_label(target.profile), handle.handle_id)

    def stop(self):
        """Stop enforcing: close every resource and retire the monitors."""
        self._require_running()
        self.env.shutdown()
        for monitor in self.app_monitor.monitors():
            monitor.retire()
            self.log.emit(EventType.MONITOR_RETIRED, _profile_label(monitor.profile), access=monitor.name)
        self.tracker.unregister()
        self.log.emit(EventType.CONTRACT_TERMINATED, f"contract:{self.contract.id}")
        self.state = ContainerState.STOPPED
        logger.info(f"{self.component_id}: stopped")

    def _require_running(self):
        if self.state is not ContainerState.RUNNING:
            raise NotConfigured(f"container of {self.component_id!r} is {self.state.value}")

    # enforcement

    def violation(self, profile: Optional[ResourceUtilisationProfile], handle: ResourceHandle,
                  access: AccessKind, amount: int, kind: ViolationKind) -> AccessVerdict:
        event = ViolationEvent(
            component_id=self.component_id,
            profile_id=profile.id if profile is not None else None,
            descriptor=handle.descriptor,
            access=access,
            amount=amount,
            kind=kind,
            step=self.clock.tick(),
        )
        self.violations.append(event)
        self.log.emit(EventType.VIOLATION, handle.descriptor, handle.handle_id, access, amount)
        logger.warning(f"{self.component_id}: {kind.value} on {handle.descriptor} ({access.value} {amount})")
        verdict, warning = self.engine.on_violation(event)
        if warning is not None:
            deliver_warning(self.inbox, warning)
        return verdict

    def capacity_denied(self, handle: ResourceHandle, access: AccessKind, amount: int) -> AccessVerdict:
        """Deny a best-effort access the platform can no longer serve.

        The component is not at fault: no violation is recorded and it is
        warned instead.
        """
        self.capacity_denials += 1
        self.log.emit(EventType.CAPACITY_DENIED, handle.descriptor, handle.handle_id, access, amount,
                      Verdict.REJECT)
        deliver_warning(self.inbox, ComponentWarning(self.component_id, 'capacity', handle.descriptor,
                                                     self.clock.tick()))
        return AccessVerdict.reject(f"platform capacity exhausted for {handle.descriptor}")

    def _deny_unmatched(self, event: ResourceEvent, handle: ResourceHandle) -> Optional[AccessVerdict]:
        if event.type is EventType.ACCESS_REQUESTED:
            standing = self.engine.standing_verdict(handle.descriptor)
            if standing is not None:
                return standing
            return self.violation(None, handle, AccessKind(event.access), event.amount, ViolationKind.PERMISSION)
        if event.type is EventType.DESTROYED:
            self._unmatched.pop(handle.handle_id, None)
        return None

    def _on_sanction_applied(self, sanction: Sanction):
        if sanction.action is not SanctionAction.LOCK:
            return
        for handle in self.registry.live_handles():
            if handle.state is HandleState.OPEN and sanction.pattern.matches(handle.descriptor):
                self.env.lock(handle)

    # component-facing resource operations

    def open_file(self, path: str, mode: FilePermission) -> ResourceHandle:
        self._require_running()
        return self.env.open_file(path, mode)

    def open_socket(self, host: str, port: int) -> ResourceHandle:
        self._require_running()
        return self.env.open_socket(host, port)

    def read(self, handle: ResourceHandle, amount: int) -> AccessVerdict:
        self._require_running()
        return self.env.access(handle, AccessKind.READ, amount)

    def write(self, handle: ResourceHandle, amount: int) -> AccessVerdict:
        self._require_running()
        return self.env.access(handle, AccessKind.WRITE, amount)

    def send(self, handle: ResourceHandle, amount: int) -> AccessVerdict:
        self._require_running()
        return self.env.access(handle, AccessKind.SEND, amount)

    def receive(self, handle: ResourceHandle, amount: int) -> AccessVerdict:
        self._require_running()
        return self.env.access(handle, AccessKind.RECEIVE, amount)

    def allocate(self, amount: int) -> AccessVerdict:
        self._require_running()
        return self.env.allocate(amount)

    def free(self, amount: int) -> AccessVerdict:
        self._require_running()
        return self.env.free(amount)

    def close(self, handle: ResourceHandle):
        self._require_running()
        self.env.close(handle)

    # reporting

    def usage_report(self) -> dict:
        """Snapshot of every monitor ledger and of the enforcement counters."""
        return {
            'component': self.component_id,
            'state': self.state.value,
            'contract': self.contract.id if self.contract is not None else None,
            'profiles': [monitor.snapshot() for monitor in self.app_monitor.monitors()],
            'allocated': self.env.allocated,
            'violations': len(self.violations),
            'capacity_denials': self.capacity_denials,
            'warnings': len(self.inbox.warnings),
            'sanctions_applied': [sanction.label for sanction in self.engine.applied] if self.engine else [],
        }


def configure(container: Container, contract: Contract, sanctions: Sequence[Sanction] = ()):
    container.configure(contract, sanctions)


def route_creation(tracker: ResourceTracker, created_event: ResourceEvent) -> Optional[AccessVerdict]:
    handle = tracker._container.registry.handle(created_event.handle_id)
    return tracker.route_creation(created_event, handle)


def check_access(monitor: ResourceMonitor, access_requested_event: ResourceEvent) -> AccessVerdict:
    handle = monitor._container.registry.handle(access_requested_event.handle_id)
    return monitor.check_access(access_requested_event, handle) or AccessVerdict.allow()


def usage_report(container: Container) -> dict:
    return container.usage_report()


def measure_monitor_overhead(iterations: int = 10 ** 6, max_monitors: int = 4) -> Dict[int, float]:
    """Measure the cost of supervising a file with 1..``max_monitors`` monitors.

    Every run reads one byte ``iterations`` times from the same virtual
    file. Returns, per monitor count, the extra time per attached monitor
    relative to the unsupervised run.
    """
    path = '~/bench/data'
    mode = FilePermission(read=True)

    def timed(monitor_count: int) -> float:
        container = Container('bench', files={path: 0}, keep_events=False)
        if monitor_count:
            profiles = [
                ResourceUtilisationProfile(f"m{index}", FilePattern('~/bench'), FilePermission.ALL,
                                           FileQuota(read_bytes=iterations))
                for index in range(monitor_count)
            ]
            container.configure(Contract('bench', tuple(profiles)))
            handle = container.open_file(path, mode)
            for monitor in container.app_monitor.monitors():
                if not monitor.supervises(handle):
                    monitor.supervise(handle)
        else:
            handle = container.env.open_file(path, mode)

        started = time.perf_counter()
        for _ in range(iterations):
            container.env.access(handle, AccessKind.READ, 1)
        return time.perf_counter() - started

    baseline = timed(0)
    overheads = {}
    for count in range(1, max_monitors + 1):
        overheads[count] = (timed(count) - baseline) / (count * baseline)
        logger.info(f"{count} monitor(s): {overheads[count]:.1%} per monitor")
    return overheads
