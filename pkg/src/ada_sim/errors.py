"""Exception taxonomy shared across the simulator."""

from __future__ import annotations


class SimError(Exception):
    """Base class for all ada-sim errors."""


class DocumentSyntaxError(SimError):
    """The document text is not well-formed (YAML scanner/parser failure)."""


class ValidationError(SimError):
    """A well-formed document or value violates an invariant.

    ``path`` points at the offending field, e.g. ``spec.rotationInterval``.
    """

    def __init__(self, message: str, *, path: str | None = None) -> None:
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class IpPoolExhausted(SimError):
    """No free address left in the simulation IP pool."""


class UnknownPod(SimError):
    """The pod uid does not exist or the pod is already terminated."""


class UnknownWorkload(SimError):
    """The workload name is not registered in the cluster state."""


class ContainerMismatch(SimError):
    """A mutation names a container that is not in the pod template."""


class MalformedLog(SimError):
    """An event log violates ordering or pairing constraints."""


class IncompatibleReports(SimError):
    """Two reports do not come from the same scenario."""
