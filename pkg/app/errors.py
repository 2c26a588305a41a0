"""Exception hierarchy for the contract platform.

Every error raised by the platform derives from ``JamusError`` so that the
host can catch a failing script step without masking programming errors.
"""


class JamusError(Exception):
    """Base class for all platform errors."""


# Contracts

class ContractError(JamusError):
    """Raised for malformed contracts, profiles and amendments."""


class InvalidPattern(ContractError, ValueError):
    """A resource pattern violates its invariants."""


class InvalidQuota(ContractError, ValueError):
    """A quota carries a negative byte count."""


class InvalidAmendment(ContractError, ValueError):
    """An amendment or amendment clause is malformed."""


class InvalidContract(ContractError, ValueError):
    """A contract breaks one of its own invariants."""


class UnknownTargetProfile(ContractError):
    def __init__(self, profile_id):
        super().__init__(f"profile {profile_id!r} is not part of the contract")
        self.profile_id = profile_id


class ContractIdMismatch(ContractError):
    def __init__(self, expected, actual):
        super().__init__(f"amendment targets contract {actual!r}, not {expected!r}")
        self.expected = expected
        self.actual = actual


class DuplicateProfileId(ContractError):
    def __init__(self, profile_id):
        super().__init__(f"profile {profile_id!r} already exists in the contract")
        self.profile_id = profile_id


# Resources

class ResourceError(JamusError):
    """Raised by the virtual resource layer."""


class InvalidPath(ResourceError, ValueError):
    """A path is not normalized or lies outside the component namespace."""


class InvalidEndpoint(ResourceError, ValueError):
    """A socket endpoint has an invalid host or port."""


class Vetoed(ResourceError):
    """A resource creation was refused by an interceptor."""

    def __init__(self, descriptor, verdict):
        super().__init__(f"creation of {descriptor} vetoed: {verdict.reason}")
        self.descriptor = descriptor
        self.verdict = verdict


class HandleClosed(ResourceError):
    """An access was attempted on a handle that is no longer open."""


class HandleLocked(HandleClosed):
    """An access was attempted on a handle locked by a sanction."""


class KindMismatch(ResourceError, TypeError):
    """An access kind does not belong to the resource kind."""


class FreeUnderflow(ResourceError):
    def __init__(self, requested, allocated):
        super().__init__(f"cannot free {requested} bytes, only {allocated} allocated")
        self.requested = requested
        self.allocated = allocated


# Broker

class BrokerError(JamusError):
    """Raised by the resource broker."""


class AlreadySubscribed(BrokerError):
    """The contract already holds a live reservation."""


class AlreadyReleased(BrokerError):
    """The reservation was released before."""


class UnknownReservation(BrokerError):
    """The reservation was not issued by this broker."""


# Negotiation

class NegotiationError(JamusError):
    """Raised by the contract manager."""


class DuplicateContractId(NegotiationError):
    """The component already submitted a contract with this id."""


class UnknownContract(NegotiationError):
    """The component never submitted a contract with this id."""


class NotAccepted(NegotiationError):
    """The contract is not in the Accepted state."""


class AlreadySubscribedComponent(NegotiationError):
    """The component already holds a subscribed contract."""


class NoSubscribedContract(NegotiationError):
    """The component has no subscribed contract matching the request."""


class IllegalTransition(NegotiationError):
    def __init__(self, contract_id, current, target):
        super().__init__(f"contract {contract_id!r}: illegal transition {current.value} -> {target.value}")
        self.current = current
        self.target = target


# Container

class ContainerError(JamusError):
    """Raised by a component container."""


class AlreadyConfigured(ContainerError):
    """The container was configured before."""


class NotConfigured(ContainerError):
    """The container has no subscribed contract to enforce."""


# Host

class HostError(JamusError):
    """Raised while loading or running scenarios."""


class SchemaError(HostError):
    """A JSON document does not match its schema."""

    def __init__(self, message, path="", line=None):
        location = f"line {line}" if line is not None else (path or "/")
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line = line


class ScenarioError(HostError):
    """A scenario refers to something it does not define."""
