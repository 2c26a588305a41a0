"""Service module for the resource broker.

The broker holds the platform capacity as a list of resource utilisation
profiles, decides whether contracts can be satisfied, reports the clauses
that cannot, and reserves quota for subscribed contracts by deducting the
quotas of their Reservation-policy profiles from the matching capacity
entries. Best-effort profiles are checked at admission and never deducted.

Every public operation runs under the broker lock, so calls coming from
different containers are atomic and linearizable.
"""

import copy
import itertools
import logging
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

from ..errors import AlreadyReleased, AlreadySubscribed, UnknownReservation
from ..models.contract import (
    AccessPermission,
    Amendment,
    Contract,
    Quota,
    ResourcePattern,
    ResourceUtilisationProfile,
    apply_amendment,
    select_most_specific,
    zero_quota,
)
from ..models.resource import AccessKind

logger = logging.getLogger(__name__)


@dataclass
class CapacityEntry:
    pattern: ResourcePattern
    permission: AccessPermission
    initial_quota: Quota
    remaining_quota: Quota = None
    best_effort_usage: Quota = None

    def __post_init__(self):
        if self.remaining_quota is None:
            self.remaining_quota = self.initial_quota
        if self.best_effort_usage is None:
            self.best_effort_usage = zero_quota(self.pattern.kind)


class PlatformCapacity:
    """Ledger of what the platform can still promise."""

    def __init__(self, entries: Sequence[CapacityEntry] = ()):
        self.entries: List[CapacityEntry] = list(entries)
        seen = set()
        for entry in self.entries:
            if entry.pattern in seen:
                raise ValueError(f"capacity pattern {entry.pattern} declared twice")
            seen.add(entry.pattern)

    @classmethod
    def from_profiles(cls, profiles: Sequence[Tuple[ResourcePattern, AccessPermission, Quota]]):
        return cls([CapacityEntry(pattern, permission, quota) for pattern, permission, quota in profiles])

    def match(self, pattern: ResourcePattern) -> Optional[int]:
        """Index of the most specific entry covering ``pattern``."""
        candidates = [index for index, entry in enumerate(self.entries) if entry.pattern.covers(pattern)]
        return select_most_specific(candidates, lambda index: self.entries[index].pattern)

    def remaining(self) -> List[Quota]:
        return [entry.remaining_quota for entry in self.entries]

    def snapshot(self) -> list:
        return [
            {
                'pattern': str(entry.pattern),
                'initial': entry.initial_quota.components(),
                'remaining': entry.remaining_quota.components(),
                'best_effort_usage': entry.best_effort_usage.components(),
            }
            for entry in self.entries
        ]


class ConflictReason(str, Enum):
    NO_MATCHING_CAPACITY = 'NoMatchingCapacity'
    PERMISSION_DENIED = 'PermissionDenied'
    QUOTA_EXCEEDED = 'QuotaExceeded'


@dataclass(frozen=True)
class Conflict:
    profile_id: str
    reason: ConflictReason
    available: Optional[Quota] = None


@dataclass(frozen=True)
class SubmissionReport:
    contract_id: str
    accepted: bool
    conflicting_clauses: Tuple[Conflict, ...] = ()


@dataclass
class Reservation:
    contract_id: str
    deductions: Tuple[Tuple[int, Quota], ...]
    holder: Optional[str] = None
    live: bool = True
    serial: int = 0

    def total_for(self, entry_index: int, kind) -> Quota:
        total = zero_quota(kind)
        for index, amount in self.deductions:
            if index == entry_index:
                total = total + amount
        return total


def _assess(capacity: PlatformCapacity, contract: Contract,
            base: Optional[List[Quota]] = None) -> Tuple[List[Conflict], List[Tuple[int, Quota]]]:
    """Check every clause against ``base`` (remaining quota by default).

    Reservation clauses are deducted from the working ledger as they are
    accepted, so later clauses of the same contract cannot count the same
    bytes twice.
    """
    net = list(base if base is not None else capacity.remaining())
    conflicts: List[Conflict] = []
    deductions: List[Tuple[int, Quota]] = []
    for profile in contract.profiles:
        index = capacity.match(profile.pattern)
        if index is None:
            conflicts.append(Conflict(profile.id, ConflictReason.NO_MATCHING_CAPACITY))
            continue
        entry = capacity.entries[index]
        if not entry.permission.covers(profile.permission):
            conflicts.append(Conflict(profile.id, ConflictReason.PERMISSION_DENIED))
            continue
        if not net[index].covers(profile.quota):
            conflicts.append(Conflict(profile.id, ConflictReason.QUOTA_EXCEEDED, net[index]))
            continue
        if profile.reserved:
            net[index] = net[index] - profile.quota
            deductions.append((index, profile.quota))
    return conflicts, deductions


def evaluate(capacity: PlatformCapacity, contract: Contract) -> SubmissionReport:
    """Decide whether every clause of ``contract`` can be satisfied.

    Capacity is left unchanged.
    """
    conflicts, _ = _assess(capacity, contract)
    return SubmissionReport(contract.id, not conflicts, tuple(conflicts))


def get_conflicting_clauses(capacity: PlatformCapacity, contract: Contract) -> List[Conflict]:
    return list(evaluate(capacity, contract).conflicting_clauses)


class ResourceBroker:
    """Admission control and reservation over one ``PlatformCapacity``."""

    def __init__(self, capacity: PlatformCapacity):
        self.capacity = capacity
        self._lock = threading.RLock()
        self._live: Dict[Tuple[Optional[str], str], Reservation] = {}
        self._serials = itertools.count(1)

    def evaluate(self, contract: Contract) -> SubmissionReport:
        with self._lock:
            return evaluate(self.capacity, contract)

    def get_conflicting_clauses(self, contract: Contract) -> List[Conflict]:
        with self._lock:
            return get_conflicting_clauses(self.capacity, contract)

    def subscribe(self, contract: Contract, holder: Optional[str] = None) -> Union[Reservation, SubmissionReport]:
        """Re-evaluate ``contract`` and reserve its Reservation clauses.

        Returns the reservation on success, or the submission report when
        the contract no longer fits; capacity is then unchanged.

        Raises:
            AlreadySubscribed: If the contract already holds a live reservation
        """
        with self._lock:
            key = (holder, contract.id)
            if key in self._live:
                raise AlreadySubscribed(f"contract {contract.id!r} already holds a reservation")
            conflicts, deductions = _assess(self.capacity, contract)
            if conflicts:
                logger.info(f"Subscription of {contract.id} refused: {len(conflicts)} conflicting clause(s)")
                return SubmissionReport(contract.id, False, tuple(conflicts))
            reservation = Reservation(contract.id, tuple(deductions), holder, serial=next(self._serials))
            self._deduct(reservation)
            self._live[key] = reservation
            logger.info(f"Reserved {len(deductions)} clause(s) for {contract.id}")
            return reservation

    def release(self, reservation: Reservation):
        """Give the reservation's deductions back to the capacity.

        Raises:
            AlreadyReleased: If the reservation is no longer live
        """
        with self._lock:
            if not reservation.live:
                raise AlreadyReleased(f"reservation of {reservation.contract_id!r} already released")
            key = (reservation.holder, reservation.contract_id)
            if self._live.get(key) is not reservation:
                raise UnknownReservation(f"reservation of {reservation.contract_id!r} was not issued here")
            self._restore(reservation)
            reservation.live = False
            del self._live[key]
            logger.info(f"Released reservation of {reservation.contract_id}")

    def evaluate_amendment(self, contract: Contract, reservation: Reservation,
                           amendment: Amendment) -> Tuple[SubmissionReport, Optional[Reservation], Contract]:
        """Evaluate an amendment of a subscribed contract.

        The amended contract is checked with the current reservation
        virtually released. On acceptance the old reservation is swapped for
        the new one atomically and returned with the amended contract; on
        rejection nothing changes and the reservation slot of the result
        is ``None``.
        """
        amended = apply_amendment(contract, amendment)
        with self._lock:
            if not reservation.live:
                raise AlreadyReleased(f"reservation of {reservation.contract_id!r} already released")
            base = self.capacity.remaining()
            for index, amount in reservation.deductions:
                base[index] = base[index] + amount
            conflicts, deductions = _assess(self.capacity, amended, base)
            report = SubmissionReport(amended.id, not conflicts, tuple(conflicts))
            if conflicts:
                return report, None, amended

            key = (reservation.holder, reservation.contract_id)
            self._restore(reservation)
            reservation.live = False
            replacement = Reservation(amended.id, tuple(deductions), reservation.holder,
                                      serial=next(self._serials))
            self._deduct(replacement)
            self._live[key] = replacement
            return report, replacement, amended

    def live_reservations(self) -> List[Reservation]:
        with self._lock:
            return sorted(self._live.values(), key=lambda reservation: reservation.serial)

    # best-effort runtime accounting

    def best_effort_allows(self, profile: ResourceUtilisationProfile, access: AccessKind, amount: int) -> bool:
        """Tell whether a best-effort access still fits the platform entry.

        Best-effort consumption is compared with the entry's unreserved
        quota, so reservations made by other components take precedence.
        """
        with self._lock:
            index = self.capacity.match(profile.pattern)
            if index is None:
                return False
            entry = self.capacity.entries[index]
            headroom = entry.remaining_quota.headroom(entry.best_effort_usage, access)
            return headroom is None or amount <= headroom

    def consume_best_effort(self, profile: ResourceUtilisationProfile, access: AccessKind, amount: int):
        with self._lock:
            index = self.capacity.match(profile.pattern)
            if index is not None:
                entry = self.capacity.entries[index]
                if access is AccessKind.FREE:
                    # usage never drops below zero
                    amount = min(amount, entry.best_effort_usage.bytes)
                entry.best_effort_usage = entry.best_effort_usage.charged(access, amount)

    def audit(self) -> bool:
        """Check initial = remaining + live deductions on every entry."""
        with self._lock:
            for index, entry in enumerate(self.capacity.entries):
                total = entry.remaining_quota
                for reservation in self._live.values():
                    total = total + reservation.total_for(index, entry.pattern.kind)
                if total != entry.initial_quota:
                    return False
            return True

    def snapshot(self) -> list:
        with self._lock:
            return copy.deepcopy(self.capacity.snapshot())

    def _deduct(self, reservation: Reservation):
        for index, amount in reservation.deductions:
            entry = self.capacity.entries[index]
            entry.remaining_quota = entry.remaining_quota - amount

    def _restore(self, reservation: Reservation):
        for index, amount in reservation.deductions:
            entry = self.capacity.entries[index]
            entry.remaining_quota = entry.remaining_quota + amount
