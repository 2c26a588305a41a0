"""Contract data model.

Contracts are sets of resource utilisation profiles. A profile binds a
resource pattern to the access permission, the quota and the availability
policy the component asks for. Amendments are ordered lists of clauses that
add, remove or modify profiles of a subscribed contract.

All types here are immutable values and every operation is a pure function,
so contracts can be handed between containers and the broker freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Callable, ClassVar, Iterable, List, Optional, TypeVar, Union

import validators

from ..errors import (
    ContractIdMismatch,
    DuplicateProfileId,
    InvalidAmendment,
    InvalidPath,
    InvalidPattern,
    InvalidQuota,
    KindMismatch,
    UnknownTargetProfile,
)
from .resource import (
    AccessKind,
    ResourceDescriptor,
    ResourceKind,
    normalize_path,
    path_segments,
)

KO = 1024
MO = 1024 * 1024

ANY_PORT = None
"""Port value of a socket pattern that accepts every port."""


# Patterns

@dataclass(frozen=True)
class FilePattern:
    """A file subtree, matched segment by segment."""

    path_prefix: str
    kind: ClassVar[ResourceKind] = ResourceKind.FILE

    def __post_init__(self):
        try:
            normalized = normalize_path(self.path_prefix)
        except InvalidPath as e:
            raise InvalidPattern(str(e)) from e
        object.__setattr__(self, 'path_prefix', normalized)

    def specificity(self) -> int:
        return len(path_segments(self.path_prefix))

    def matches(self, descriptor: ResourceDescriptor) -> bool:
        if descriptor.kind is not ResourceKind.FILE:
            return False
        prefix = path_segments(self.path_prefix)
        return path_segments(descriptor.path)[:len(prefix)] == prefix

    def covers(self, other: 'ResourcePattern') -> bool:
        if other.kind is not ResourceKind.FILE:
            return False
        prefix = path_segments(self.path_prefix)
        return path_segments(other.path_prefix)[:len(prefix)] == prefix

    def __str__(self):
        return f"file:{self.path_prefix}"


@dataclass(frozen=True)
class SocketPattern:
    """A family of remote endpoints; ``*`` matches every host."""

    host_glob: str = '*'
    port: Optional[int] = ANY_PORT
    kind: ClassVar[ResourceKind] = ResourceKind.SOCKET

    def __post_init__(self):
        if self.host_glob != '*' and not is_valid_host(self.host_glob):
            raise InvalidPattern(f"invalid host {self.host_glob!r}")
        if self.port is not ANY_PORT and not (
                isinstance(self.port, int) and not isinstance(self.port, bool)
                and 1 <= self.port <= 65535):
            raise InvalidPattern(f"port {self.port!r} outside 1..65535")

    def specificity(self) -> int:
        return int(self.host_glob != '*') + int(self.port is not ANY_PORT)

    def matches(self, descriptor: ResourceDescriptor) -> bool:
        if descriptor.kind is not ResourceKind.SOCKET:
            return False
        return (self.host_glob in ('*', descriptor.host)
                and self.port in (ANY_PORT, descriptor.port))

    def covers(self, other: 'ResourcePattern') -> bool:
        if other.kind is not ResourceKind.SOCKET:
            return False
        host_ok = self.host_glob == '*' or self.host_glob == other.host_glob
        port_ok = self.port is ANY_PORT or self.port == other.port
        return host_ok and port_ok

    def __str__(self):
        port = '*' if self.port is ANY_PORT else self.port
        return f"socket:{self.host_glob}:{port}"


@dataclass(frozen=True)
class MemoryPattern:
    """The component's whole memory pool."""

    kind: ClassVar[ResourceKind] = ResourceKind.MEMORY

    def specificity(self) -> int:
        return 0

    def matches(self, descriptor: ResourceDescriptor) -> bool:
        return descriptor.kind is ResourceKind.MEMORY

    def covers(self, other: 'ResourcePattern') -> bool:
        return other.kind is ResourceKind.MEMORY

    def __str__(self):
        return "memory:*"


ResourcePattern = Union[FilePattern, SocketPattern, MemoryPattern]


def is_valid_host(host: str) -> bool:
    return bool(validators.hostname(host, may_have_port=False))


def matches(pattern: ResourcePattern, descriptor: ResourceDescriptor) -> bool:
    """Tell whether ``descriptor`` belongs to the family ``pattern`` names."""
    return pattern.matches(descriptor)


T = TypeVar('T')


def select_most_specific(candidates: Iterable[T], pattern_of: Callable[[T], ResourcePattern]) -> Optional[T]:
    """Pick the candidate whose pattern is the most specific.

    Ties are broken by the lexicographic order of the pattern text so that
    the choice never depends on declaration order.
    """
    best = None
    best_key = None
    for candidate in candidates:
        pattern = pattern_of(candidate)
        key = (-pattern.specificity(), str(pattern))
        if best_key is None or key < best_key:
            best, best_key = candidate, key
    return best


# Permissions

class _Flags:
    def flags(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def any_set(self) -> bool:
        return any(self.flags().values())

    def covers(self, other) -> bool:
        if type(other) is not type(self):
            return False
        mine = self.flags()
        return all(mine[name] for name, wanted in other.flags().items() if wanted)

    @property
    def label(self) -> str:
        return '+'.join(name for name, value in self.flags().items() if value) or 'none'


@dataclass(frozen=True)
class FilePermission(_Flags):
    read: bool = False
    write: bool = False
    kind: ClassVar[ResourceKind] = ResourceKind.FILE
    ALL: ClassVar['FilePermission']

    def grants(self, access: AccessKind) -> bool:
        return self.read if access is AccessKind.READ else self.write


@dataclass(frozen=True)
class SocketPermission(_Flags):
    connect: bool = False
    accept: bool = False
    kind: ClassVar[ResourceKind] = ResourceKind.SOCKET
    ALL: ClassVar['SocketPermission']

    def grants(self, access: AccessKind) -> bool:
        if access is AccessKind.CONNECT:
            return self.connect
        if access is AccessKind.ACCEPT:
            return self.accept
        # traffic on an established socket
        return self.connect or self.accept


@dataclass(frozen=True)
class MemoryPermission(_Flags):
    allocate: bool = False
    kind: ClassVar[ResourceKind] = ResourceKind.MEMORY
    ALL: ClassVar['MemoryPermission']

    def grants(self, access: AccessKind) -> bool:
        return self.allocate


FilePermission.ALL = FilePermission(read=True, write=True)
SocketPermission.ALL = SocketPermission(connect=True, accept=True)
MemoryPermission.ALL = MemoryPermission(allocate=True)

AccessPermission = Union[FilePermission, SocketPermission, MemoryPermission]

PERMISSION_TYPES = {
    ResourceKind.FILE: FilePermission,
    ResourceKind.SOCKET: SocketPermission,
    ResourceKind.MEMORY: MemoryPermission,
}


def parse_permission(kind: ResourceKind, label: str) -> AccessPermission:
    """Inverse of ``AccessPermission.label``."""
    permission_type = PERMISSION_TYPES[kind]
    names = set() if label == 'none' else set(label.split('+'))
    return permission_type(**{f.name: f.name in names for f in fields(permission_type)})


# Quotas

QUOTA_FIELDS = {
    AccessKind.READ: 'read_bytes',
    AccessKind.WRITE: 'write_bytes',
    AccessKind.SEND: 'sent_bytes',
    AccessKind.RECEIVE: 'received_bytes',
    AccessKind.ALLOCATE: 'bytes',
    AccessKind.FREE: 'bytes',
}


class _Components:
    def __post_init__(self):
        for name, value in self.components().items():
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise InvalidQuota(f"{type(self).__name__}.{name} must be a non-negative byte count, got {value!r}")

    def components(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def covers(self, other) -> bool:
        if type(other) is not type(self):
            return False
        mine = self.components()
        return all(mine[name] >= value for name, value in other.components().items())

    def __add__(self, other):
        theirs = other.components()
        return replace(self, **{name: value + theirs[name] for name, value in self.components().items()})

    def __sub__(self, other):
        theirs = other.components()
        return replace(self, **{name: value - theirs[name] for name, value in self.components().items()})

    def charged(self, access: AccessKind, amount: int):
        """Return this usage after ``amount`` bytes of ``access``.

        Frees give memory back; accesses without a byte counter (connect,
        accept) leave the usage unchanged.
        """
        name = QUOTA_FIELDS.get(access)
        if name is None:
            return self
        delta = -amount if access is AccessKind.FREE else amount
        return replace(self, **{name: getattr(self, name) + delta})

    def headroom(self, usage, access: AccessKind) -> Optional[int]:
        """Bytes of ``access`` still available given ``usage``."""
        name = QUOTA_FIELDS.get(access)
        if name is None or access is AccessKind.FREE:
            return None
        return getattr(self, name) - getattr(usage, name)


@dataclass(frozen=True)
class FileQuota(_Components):
    read_bytes: int = 0
    write_bytes: int = 0
    kind: ClassVar[ResourceKind] = ResourceKind.FILE


@dataclass(frozen=True)
class SocketQuota(_Components):
    sent_bytes: int = 0
    received_bytes: int = 0
    kind: ClassVar[ResourceKind] = ResourceKind.SOCKET


@dataclass(frozen=True)
class MemoryQuota(_Components):
    bytes: int = 0
    kind: ClassVar[ResourceKind] = ResourceKind.MEMORY


Quota = Union[FileQuota, SocketQuota, MemoryQuota]

QUOTA_TYPES = {
    ResourceKind.FILE: FileQuota,
    ResourceKind.SOCKET: SocketQuota,
    ResourceKind.MEMORY: MemoryQuota,
}


def zero_quota(kind: ResourceKind) -> Quota:
    return QUOTA_TYPES[kind]()


# Profiles and contracts

class AvailabilityPolicy(str, Enum):
    BEST_EFFORT = 'best_effort'
    RESERVATION = 'reservation'


@dataclass(frozen=True)
class ResourceUtilisationProfile:
    id: str
    pattern: ResourcePattern
    permission: AccessPermission
    quota: Quota
    policy: AvailabilityPolicy = AvailabilityPolicy.BEST_EFFORT

    @property
    def kind(self) -> ResourceKind:
        return self.pattern.kind

    def kinds_agree(self) -> bool:
        return self.pattern.kind is self.permission.kind is self.quota.kind

    @property
    def reserved(self) -> bool:
        return self.policy is AvailabilityPolicy.RESERVATION


def permits(profile: ResourceUtilisationProfile, access: AccessKind) -> bool:
    """Tell whether the profile's permission grants ``access``.

    Quotas are not consulted.

    Raises:
        KindMismatch: If ``access`` does not apply to the profile's resource kind
    """
    if access.resource_kind is not profile.kind:
        raise KindMismatch(f"{access.value} does not apply to {profile.kind.value} profile {profile.id!r}")
    return profile.permission.grants(access)


@dataclass(frozen=True)
class Contract:
    id: str
    profiles: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, 'profiles', tuple(self.profiles))

    @property
    def profile_ids(self) -> List[str]:
        return [profile.id for profile in self.profiles]

    def profile(self, profile_id: str) -> Optional[ResourceUtilisationProfile]:
        for profile in self.profiles:
            if profile.id == profile_id:
                return profile
        return None

    def route(self, descriptor: ResourceDescriptor) -> Optional[ResourceUtilisationProfile]:
        """Return the most specific profile governing ``descriptor``."""
        return select_most_specific(
            (profile for profile in self.profiles if profile.pattern.matches(descriptor)),
            lambda profile: profile.pattern,
        )


# Amendments

class AmendmentOp(str, Enum):
    ADD = 'add'
    REMOVE = 'remove'
    MODIFY = 'modify'


@dataclass(frozen=True)
class AmendmentClause:
    op: AmendmentOp
    profile: Optional[ResourceUtilisationProfile] = None
    target_profile_id: Optional[str] = None

    def __post_init__(self):
        needs_profile = self.op in (AmendmentOp.ADD, AmendmentOp.MODIFY)
        needs_target = self.op in (AmendmentOp.REMOVE, AmendmentOp.MODIFY)
        if needs_profile != (self.profile is not None):
            raise InvalidAmendment(f"{self.op.value} clause {'needs' if needs_profile else 'takes no'} profile")
        if needs_target != (self.target_profile_id is not None):
            raise InvalidAmendment(f"{self.op.value} clause {'needs' if needs_target else 'takes no'} target profile")


@dataclass(frozen=True)
class Amendment:
    contract_id: str
    clauses: tuple
    id: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'clauses', tuple(self.clauses))
        if not self.clauses:
            raise InvalidAmendment("an amendment needs at least one clause")


def apply_amendment(contract: Contract, amendment: Amendment) -> Contract:
    """Return the contract obtained by applying the clauses in order.

    MODIFY replaces the pattern, permission, quota and policy of its target
    and keeps the target's id. The input contract is left untouched.
    """
    if amendment.contract_id != contract.id:
        raise ContractIdMismatch(contract.id, amendment.contract_id)

    profiles = list(contract.profiles)
    for clause in amendment.clauses:
        ids = [profile.id for profile in profiles]
        if clause.op is AmendmentOp.ADD:
            if clause.profile.id in ids:
                raise DuplicateProfileId(clause.profile.id)
            profiles.append(clause.profile)
            continue
        if clause.target_profile_id not in ids:
            raise UnknownTargetProfile(clause.target_profile_id)
        index = ids.index(clause.target_profile_id)
        if clause.op is AmendmentOp.REMOVE:
            del profiles[index]
        else:
            profiles[index] = replace(clause.profile, id=clause.target_profile_id)
    return Contract(contract.id, tuple(profiles))


# Validation

class IssueCode(str, Enum):
    EMPTY_CONTRACT = 'EmptyContract'
    DUPLICATE_PROFILE_ID = 'DuplicateProfileId'
    KIND_MISMATCH = 'KindMismatch'
    EMPTY_PERMISSION = 'EmptyPermission'
    DUPLICATE_MEMORY_PROFILE = 'DuplicateMemoryProfile'


@dataclass(frozen=True)
class ValidationIssue:
    code: IssueCode
    profile_id: Optional[str] = None
    detail: str = ''


def validate_contract(contract: Contract) -> List[ValidationIssue]:
    """List every invariant the contract breaks; empty when it is sound."""
    issues = []
    if not contract.profiles:
        issues.append(ValidationIssue(IssueCode.EMPTY_CONTRACT, detail=f"contract {contract.id!r} has no profile"))

    seen = set()
    memory_profiles = []
    for profile in contract.profiles:
        if profile.id in seen:
            issues.append(ValidationIssue(IssueCode.DUPLICATE_PROFILE_ID, profile.id))
        seen.add(profile.id)
        if not profile.kinds_agree():
            issues.append(ValidationIssue(
                IssueCode.KIND_MISMATCH, profile.id,
                f"pattern {profile.pattern.kind.value}, permission {profile.permission.kind.value}, "
                f"quota {profile.quota.kind.value}",
            ))
        if not profile.permission.any_set():
            issues.append(ValidationIssue(IssueCode.EMPTY_PERMISSION, profile.id))
        if profile.kind is ResourceKind.MEMORY:
            memory_profiles.append(profile.id)

    if len(memory_profiles) > 1:
        issues.append(ValidationIssue(
            IssueCode.DUPLICATE_MEMORY_PROFILE, memory_profiles[1],
            f"memory profiles {', '.join(memory_profiles)} share one pool",
        ))
    return issues
