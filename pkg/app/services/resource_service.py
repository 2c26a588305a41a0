"""Service module for the virtual resource layer.

Each container owns one ``VirtualEnvironment``: an in-memory filesystem,
byte-counting sockets and a memory ledger. Every resource object announces
its creation and destruction to the environment's ``ResourceRegistry`` and
every access to the listeners registered on its handle. Listeners answer
with verdicts, which lets the supervision layer veto, reject or lock
without the resource layer knowing anything about contracts.
"""

import itertools
import logging
from typing import Callable, Dict, List, Optional

from ..errors import (
    FreeUnderflow,
    HandleClosed,
    HandleLocked,
    InvalidEndpoint,
    InvalidPath,
    KindMismatch,
    Vetoed,
)
from ..models.contract import FilePermission, SocketPermission, MemoryPermission, is_valid_host
from ..models.resource import (
    HOME,
    AccessKind,
    AccessVerdict,
    EventType,
    HandleState,
    ResourceDescriptor,
    ResourceEvent,
    Verdict,
    normalize_path,
)
from ..utils.trace import EventLog

logger = logging.getLogger(__name__)

Listener = Callable[[ResourceEvent, 'ResourceHandle'], Optional[AccessVerdict]]


class Subscription:
    """Registration of a listener; ``cancel()`` stops deliveries."""

    def __init__(self, listeners: List[Listener], listener: Listener):
        self._listeners = listeners
        self.listener = listener
        self.active = True

    def cancel(self):
        if self.active:
            self._listeners.remove(self.listener)
            self.active = False


class ResourceHandle:
    """A reified resource opened by the component."""

    def __init__(self, handle_id: int, descriptor: ResourceDescriptor, mode):
        self.handle_id = handle_id
        self.descriptor = descriptor
        self.mode = mode
        self.state = HandleState.OPEN
        self.transferred: Dict[AccessKind, int] = {}
        self._listeners: List[Listener] = []

    def register_listener(self, listener: Listener) -> Subscription:
        self._listeners.append(listener)
        return Subscription(self._listeners, listener)

    def listeners(self) -> List[Listener]:
        return list(self._listeners)

    def __repr__(self):
        return f'<ResourceHandle {self.handle_id}: {self.descriptor} {self.state.value}>'


class ResourceRegistry:
    """Index of the live resources created in one container.

    Holds exactly the handles whose Created event was emitted and whose
    Destroyed event was not.
    """

    def __init__(self, log: EventLog):
        self._log = log
        self._handles: Dict[int, ResourceHandle] = {}
        self._listeners: List[Listener] = []

    def register_listener(self, listener: Listener) -> Subscription:
        self._listeners.append(listener)
        return Subscription(self._listeners, listener)

    def live_handles(self) -> List[ResourceHandle]:
        return [self._handles[key] for key in sorted(self._handles)]

    def handle(self, handle_id: int) -> Optional[ResourceHandle]:
        return self._handles.get(handle_id)

    def __contains__(self, handle: ResourceHandle) -> bool:
        return self._handles.get(handle.handle_id) is handle

    def announce_created(self, handle: ResourceHandle) -> AccessVerdict:
        """Record a new resource and let every registry listener answer."""
        self._handles[handle.handle_id] = handle
        created = self._log.emit(EventType.CREATED, handle.descriptor, handle.handle_id,
                                 access=handle.mode.label)
        self._log.emit(EventType.REGISTRY_BROADCAST, handle.descriptor, handle.handle_id)
        answers = [listener(created, handle) for listener in list(self._listeners)]
        return AccessVerdict.combine(answers)

    def announce_destroyed(self, handle: ResourceHandle, verdict: Optional[Verdict] = None):
        self._handles.pop(handle.handle_id, None)
        destroyed = self._log.emit(EventType.DESTROYED, handle.descriptor, handle.handle_id, verdict=verdict)
        for listener in list(self._listeners) + handle.listeners():
            listener(destroyed, handle)


class VirtualEnvironment:
    """The simulated resources of one component.

    Args:
        component_id: Owner of every resource created here
        log: Event log numbering this container's events
        home: Absolute directory that ``~`` denotes
        files: Files present before start, as canonical path -> size
    """

    def __init__(self, component_id: str, log: EventLog, home: str = '/home/jamus',
                 files: Optional[Dict[str, int]] = None):
        self.component_id = component_id
        self.log = log
        self.home = normalize_path(home)
        self.registry = ResourceRegistry(log)
        self.files: Dict[str, int] = {}
        self.allocated = 0
        self._memory_handle: Optional[ResourceHandle] = None
        self._ids = itertools.count(1)
        for path, size in (files or {}).items():
            self.files[self.canonical_path(path)] = size

    def canonical_path(self, path: str) -> str:
        """Normalize ``path`` and express paths under the home with ``~``.

        Raises:
            InvalidPath: If the path is not normalizable
        """
        normalized = normalize_path(path)
        if normalized == self.home:
            return HOME
        if self.home != '/' and normalized.startswith(self.home + '/'):
            return HOME + normalized[len(self.home):]
        return normalized

    # creation

    def _create(self, descriptor: ResourceDescriptor, mode) -> ResourceHandle:
        handle = ResourceHandle(next(self._ids), descriptor, mode)
        verdict = self.registry.announce_created(handle)
        if not verdict.allowed:
            handle.state = HandleState.CLOSED
            self.log.emit(EventType.VETOED, descriptor, handle.handle_id, verdict=verdict.outcome)
            self.registry.announce_destroyed(handle, verdict.outcome)
            logger.warning(f"{self.component_id}: creation of {descriptor} vetoed ({verdict.reason})")
            raise Vetoed(descriptor, verdict)
        return handle

    def open_file(self, path: str, mode: FilePermission) -> ResourceHandle:
        """Open a virtual file; opening for write creates it when absent.

        Raises:
            InvalidPath: For malformed paths or a read-only open of a missing file
            Vetoed: If an interceptor refused the creation
        """
        canonical = self.canonical_path(path)
        exists = canonical in self.files
        if not exists and not mode.write:
            raise InvalidPath(f"no such file {canonical!r}")
        handle = self._create(ResourceDescriptor.file(canonical), mode)
        if not exists:
            self.files[canonical] = 0
        return handle

    def open_socket(self, host: str, port: int) -> ResourceHandle:
        """Connect a byte-counting socket to a scripted peer."""
        if not is_valid_host(host):
            raise InvalidEndpoint(f"invalid host {host!r}")
        if isinstance(port, bool) or not isinstance(port, int) or not 1 <= port <= 65535:
            raise InvalidEndpoint(f"port {port!r} outside 1..65535")
        return self._create(ResourceDescriptor.socket(host, port), SocketPermission(connect=True))

    def _memory(self) -> ResourceHandle:
        if self._memory_handle is None or self._memory_handle.state is HandleState.CLOSED:
            self._memory_handle = self._create(ResourceDescriptor.memory(self.component_id),
                                               MemoryPermission(allocate=True))
        return self._memory_handle

    # accesses

    def access(self, handle: ResourceHandle, access: AccessKind, amount: int) -> AccessVerdict:
        """Perform an access through the interceptor pipeline.

        A rejected access changes no ledger. A locking verdict moves the
        handle to Locked.

        Raises:
            HandleClosed: If the handle is closed (HandleLocked if locked)
            KindMismatch: If the access does not apply to the resource kind
        """
        if handle.state is HandleState.CLOSED:
            raise HandleClosed(f"{handle.descriptor} is closed")
        if handle.state is HandleState.LOCKED:
            raise HandleLocked(f"{handle.descriptor} is locked")
        if access.resource_kind is not handle.descriptor.kind:
            raise KindMismatch(f"{access.value} does not apply to {handle.descriptor}")
        if isinstance(amount, bool) or not isinstance(amount, int) or amount < 0:
            raise ValueError(f"amount must be a non-negative byte count, got {amount!r}")

        requested = self.log.emit(EventType.ACCESS_REQUESTED, handle.descriptor, handle.handle_id,
                                  access, amount)
        verdict = AccessVerdict.combine([listener(requested, handle) for listener in handle.listeners()])
        if not verdict.allowed:
            self.log.emit(EventType.ACCESS_DENIED, handle.descriptor, handle.handle_id, access, amount,
                          verdict.outcome)
            if verdict.outcome is Verdict.LOCK:
                self.lock(handle)
            return verdict

        self._apply(handle, access, amount)
        completed = self.log.emit(EventType.ACCESS_COMPLETED, handle.descriptor, handle.handle_id,
                                  access, amount, Verdict.ALLOW)
        for listener in handle.listeners():
            listener(completed, handle)
        return verdict

    def _apply(self, handle: ResourceHandle, access: AccessKind, amount: int):
        handle.transferred[access] = handle.transferred.get(access, 0) + amount
        if access is AccessKind.WRITE:
            self.files[handle.descriptor.path] += amount
        elif access is AccessKind.ALLOCATE:
            self.allocated += amount
        elif access is AccessKind.FREE:
            self.allocated -= amount

    def allocate(self, amount: int) -> AccessVerdict:
        if isinstance(amount, bool) or not isinstance(amount, int) or amount <= 0:
            raise ValueError(f"allocation must be a positive byte count, got {amount!r}")
        return self.access(self._memory(), AccessKind.ALLOCATE, amount)

    def free(self, amount: int) -> AccessVerdict:
        if isinstance(amount, bool) or not isinstance(amount, int) or amount <= 0:
            raise ValueError(f"free must be a positive byte count, got {amount!r}")
        if amount > self.allocated:
            raise FreeUnderflow(amount, self.allocated)
        return self.access(self._memory(), AccessKind.FREE, amount)

    # lifecycle

    def lock(self, handle: ResourceHandle):
        if handle.state is HandleState.OPEN:
            handle.state = HandleState.LOCKED
            self.log.emit(EventType.HANDLE_LOCKED, handle.descriptor, handle.handle_id, verdict=Verdict.LOCK)

    def close(self, handle: ResourceHandle):
        if handle.state is HandleState.CLOSED:
            raise HandleClosed(f"{handle.descriptor} is already closed")
        handle.state = HandleState.CLOSED
        self.registry.announce_destroyed(handle)

    def shutdown(self):
        """Close every live handle, in creation order."""
        for handle in self.registry.live_handles():
            self.close(handle)

    def snapshot(self) -> dict:
        """Copy of every ledger, for before/after comparisons."""
        return {
            'files': dict(self.files),
            'allocated': self.allocated,
            'handles': {
                handle.handle_id: (handle.state, dict(handle.transferred))
                for handle in self.registry.live_handles()
            },
        }


def register_listener(target, listener: Listener) -> Subscription:
    """Register ``listener`` on a registry or a handle."""
    return target.register_listener(listener)

