"""Sanction, violation and warning value types."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from typing_extensions import Self

from .contract import ResourcePattern
from .resource import AccessKind, AccessVerdict, ResourceDescriptor


class SanctionAction(str, Enum):
    REJECT = 'reject'
    LOCK = 'lock'

    def verdict(self, reason: str) -> AccessVerdict:
        if self is SanctionAction.LOCK:
            return AccessVerdict.lock(reason)
        return AccessVerdict.reject(reason)


class SanctionKind(str, Enum):
    IMMEDIATE = 'immediate'
    DEFERRED = 'deferred'


@dataclass(frozen=True)
class Sanction:
    """Platform rule applied to violations on resources matching ``pattern``.

    Immediate sanctions act on the first violation. Deferred sanctions warn
    the component ``threshold - 1`` times and act on the ``threshold``-th
    consecutive violation.
    """

    kind: SanctionKind
    pattern: ResourcePattern
    action: SanctionAction
    threshold: int = 1
    id: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.threshold, bool) or not isinstance(self.threshold, int) or self.threshold < 1:
            raise ValueError(f"sanction threshold must be >= 1, got {self.threshold!r}")
        if self.kind is SanctionKind.IMMEDIATE and self.threshold != 1:
            raise ValueError("immediate sanctions take no threshold")

    @classmethod
    def immediate(cls, pattern, action, id=None) -> Self:
        return cls(SanctionKind.IMMEDIATE, pattern, action, 1, id)

    @classmethod
    def deferred(cls, pattern, action, threshold, id=None) -> Self:
        return cls(SanctionKind.DEFERRED, pattern, action, threshold, id)

    @property
    def deferred_kind(self) -> bool:
        return self.kind is SanctionKind.DEFERRED

    @property
    def label(self) -> str:
        return self.id or f"{self.kind.value}:{self.pattern}"


class ViolationKind(str, Enum):
    QUOTA = 'QuotaViolation'
    PERMISSION = 'PermissionViolation'


@dataclass(frozen=True)
class ViolationEvent:
    component_id: str
    profile_id: Optional[str]
    descriptor: ResourceDescriptor
    access: AccessKind
    amount: int
    kind: ViolationKind
    step: int


@dataclass(frozen=True)
class ComponentWarning:
    """Notice sent to a component before a deferred sanction applies.

    ``reason`` is ``sanction`` for deferred-sanction warnings and
    ``capacity`` when a best-effort access was denied for lack of platform
    capacity.
    """

    component_id: str
    reason: str
    descriptor: ResourceDescriptor
    step: int
    sanction: Optional[str] = None
    count: int = 0
    threshold: int = 0
