"""Value types of the virtual resource layer.

Descriptors identify reified resources, events describe their lifecycle and
every access made through them, and verdicts are what interceptors answer
when an access or a creation is announced.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Union

from typing_extensions import Self

from ..errors import InvalidPath

HOME = '~'


class ResourceKind(str, Enum):
    FILE = 'file'
    SOCKET = 'socket'
    MEMORY = 'memory'


class AccessKind(str, Enum):
    READ = 'read'
    WRITE = 'write'
    CONNECT = 'connect'
    ACCEPT = 'accept'
    SEND = 'send'
    RECEIVE = 'receive'
    ALLOCATE = 'allocate'
    FREE = 'free'

    @property
    def resource_kind(self) -> ResourceKind:
        return _ACCESS_RESOURCE_KINDS[self]


_ACCESS_RESOURCE_KINDS = {
    AccessKind.READ: ResourceKind.FILE,
    AccessKind.WRITE: ResourceKind.FILE,
    AccessKind.CONNECT: ResourceKind.SOCKET,
    AccessKind.ACCEPT: ResourceKind.SOCKET,
    AccessKind.SEND: ResourceKind.SOCKET,
    AccessKind.RECEIVE: ResourceKind.SOCKET,
    AccessKind.ALLOCATE: ResourceKind.MEMORY,
    AccessKind.FREE: ResourceKind.MEMORY,
}


def normalize_path(path: str) -> str:
    """Return the normalized form of an absolute or ``~``-rooted path.

    ``.`` segments and repeated separators are dropped, a trailing
    separator is removed (except for the root) and any ``..`` segment is
    refused.

    Raises:
        InvalidPath: If the path is empty, relative or climbs with ``..``
    """
    if not isinstance(path, str) or not path:
        raise InvalidPath("empty path")
    if path == HOME or path.startswith(HOME + '/'):
        root, rest = HOME, path[1:]
    elif path.startswith('/'):
        root, rest = '/', path
    else:
        raise InvalidPath(f"path {path!r} must be absolute or start with '~/'")

    segments = [segment for segment in rest.split('/') if segment not in ('', '.')]
    if '..' in segments:
        raise InvalidPath(f"path {path!r} contains a '..' segment")
    if root == '/':
        return '/' + '/'.join(segments)
    return '/'.join([HOME, *segments])


def path_segments(path: str) -> tuple:
    """Split a normalized path into its root and name segments."""
    if path == '/':
        return ('/',)
    if path.startswith('/'):
        return ('/', *path[1:].split('/'))
    return tuple(path.split('/'))


@dataclass(frozen=True)
class ResourceDescriptor:
    """Identity of a reified resource.

    Files are identified by their normalized path, sockets by their remote
    endpoint and memory by the component owning the pool.
    """

    kind: ResourceKind
    path: Optional[str] = None
    host: Optional[str] = None
    port: Optional[int] = None
    owner: Optional[str] = None

    @classmethod
    def file(cls, path: str) -> Self:
        return cls(ResourceKind.FILE, path=normalize_path(path))

    @classmethod
    def socket(cls, host: str, port: int) -> Self:
        return cls(ResourceKind.SOCKET, host=host, port=port)

    @classmethod
    def memory(cls, owner: str) -> Self:
        return cls(ResourceKind.MEMORY, owner=owner)

    @classmethod
    def parse(cls, text: str) -> Self:
        """Inverse of ``str()``, used when reading traces back."""
        kind, _, identity = text.partition(':')
        if kind == ResourceKind.FILE.value:
            return cls.file(identity)
        if kind == ResourceKind.SOCKET.value:
            host, _, port = identity.rpartition(':')
            return cls.socket(host, int(port))
        if kind == ResourceKind.MEMORY.value:
            return cls.memory(identity)
        raise ValueError(f"not a resource descriptor: {text!r}")

    def __str__(self):
        if self.kind is ResourceKind.FILE:
            return f"file:{self.path}"
        if self.kind is ResourceKind.SOCKET:
            return f"socket:{self.host}:{self.port}"
        return f"memory:{self.owner}"


class HandleState(str, Enum):
    OPEN = 'open'
    LOCKED = 'locked'
    CLOSED = 'closed'


class Verdict(str, Enum):
    ALLOW = 'allow'
    REJECT = 'reject'
    LOCK = 'lock'


@dataclass(frozen=True)
class AccessVerdict:
    outcome: Verdict
    reason: str = ''

    @classmethod
    def allow(cls) -> Self:
        return cls(Verdict.ALLOW)

    @classmethod
    def reject(cls, reason: str) -> Self:
        return cls(Verdict.REJECT, reason)

    @classmethod
    def lock(cls, reason: str) -> Self:
        return cls(Verdict.LOCK, reason)

    @property
    def allowed(self) -> bool:
        return self.outcome is Verdict.ALLOW

    @staticmethod
    def combine(verdicts: Iterable[Optional['AccessVerdict']]) -> 'AccessVerdict':
        """Compose interceptor answers given in registration order.

        The first Lock wins over any Reject; otherwise the first Reject
        wins; ``None`` answers count as Allow.
        """
        first_reject = None
        for verdict in verdicts:
            if verdict is None or verdict.allowed:
                continue
            if verdict.outcome is Verdict.LOCK:
                return verdict
            if first_reject is None:
                first_reject = verdict
        return first_reject or AccessVerdict.allow()


class EventType(str, Enum):
    """Trace variants, in the spelling used by trace files."""

    # resource lifecycle and accesses
    CREATED = 'Created'
    ACCESS_REQUESTED = 'AccessRequested'
    ACCESS_COMPLETED = 'AccessCompleted'
    ACCESS_DENIED = 'AccessDenied'
    VETOED = 'Vetoed'
    HANDLE_LOCKED = 'HandleLocked'
    DESTROYED = 'Destroyed'
    # container supervision flow
    TRACKER_REGISTERED = 'TrackerRegistered'
    MONITOR_INSTANTIATED = 'MonitorInstantiated'
    MONITOR_RETIRED = 'MonitorRetired'
    COMPONENT_STARTED = 'ComponentStarted'
    REGISTRY_BROADCAST = 'RegistryBroadcast'
    TRACKER_NOTIFIED = 'TrackerNotified'
    MONITOR_LIST_QUERIED = 'MonitorListQueried'
    MONITOR_SELECTED = 'MonitorSelected'
    MONITOR_SUBSCRIBED = 'MonitorSubscribed'
    MONITOR_NOTIFIED = 'MonitorNotified'
    # enforcement
    VIOLATION = 'Violation'
    WARNING = 'Warning'
    SANCTION_APPLIED = 'SanctionApplied'
    CAPACITY_DENIED = 'CapacityDenied'
    # contract lifecycle
    CONTRACT_AMENDED = 'ContractAmended'
    CONTRACT_TERMINATED = 'ContractTerminated'


@dataclass(frozen=True)
class ResourceEvent:
    """One entry of a container's event stream.

    ``subject`` is what the trace prints in the descriptor column: a
    ``ResourceDescriptor`` for resource events, or a label such as
    ``profile:r1`` or ``contract:contract2`` for supervision events.
    """

    sequence_number: int
    component_id: str
    type: EventType
    subject: Union[ResourceDescriptor, str, None] = None
    handle_id: Optional[int] = None
    access: Optional[str] = None
    amount: Optional[int] = None
    verdict: Optional[Verdict] = None
