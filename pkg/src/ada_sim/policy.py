"""Defense policy documents: rotation policies and context-mutation policies.

Both kinds are declared in YAML documents under apiVersion
``ADA.security.r6.dev/v1``. Parsing is strict: unknown fields are rejected,
because a silently ignored field in a security policy is a misconfiguration
waiting to be exploited. All parsed values are plain frozen dataclasses and
every operation here is a pure function, safe under any concurrency.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence, Union

import yaml

from .durations import format_duration, parse_duration
from .errors import DocumentSyntaxError, ValidationError

API_VERSION = "ADA.security.r6.dev/v1"
KIND_ROTATION = "RotationPolicy"
KIND_MUTATION = "ContextMutationPolicy"

_NAME_RE = re.compile(r"^[a-z0-9]([-a-z0-9.]*[a-z0-9])?$")


class Strategy(str, Enum):
    """Pod replacement strategy."""

    ROLLING_UPDATE = "RollingUpdate"
    RECREATE = "Recreate"


class TelemetrySource(str, Enum):
    """Origin of a telemetry trigger."""

    PROMETHEUS_ALERT = "PrometheusAlert"
    GATEKEEPER_VIOLATION = "GatekeeperViolation"


# Identifier key used in documents, per source kind (mirrors upstream tooling:
# alerts have a name, constraint violations have a constraint).
_TRIGGER_ID_KEY = {
    TelemetrySource.PROMETHEUS_ALERT: "name",
    TelemetrySource.GATEKEEPER_VIOLATION: "constraint",
}


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabelSelector:
    """Conjunction of exact label matches. Empty selector matches everything."""

    match_labels: Mapping[str, str] = field(default_factory=dict)

    def validate(self, *, path: str = "selector") -> None:
        for k, v in self.match_labels.items():
            if not isinstance(k, str) or not k:
                raise ValidationError("label keys must be non-empty strings", path=path)
            if not isinstance(v, str) or not v:
                raise ValidationError(
                    f"label value for {k!r} must be a non-empty string", path=path
                )


@dataclass(frozen=True)
class RotationPolicy:
    """Scheduled rotation: replace pods once they reach ``rotation_interval``."""

    name: str
    selector: LabelSelector
    rotation_interval_us: int
    strategy: Strategy
    max_surge: int = 1
    max_unavailable: int = 0

    def validate(self) -> None:
        _validate_name(self.name, path="metadata.name")
        self.selector.validate(path="spec.selector")
        if self.rotation_interval_us <= 0:
            raise ValidationError(
                "rotation interval must be > 0", path="spec.rotationInterval"
            )
        if self.max_surge < 0:
            raise ValidationError("must be >= 0", path="spec.maxSurge")
        if self.max_unavailable < 0:
            raise ValidationError("must be >= 0", path="spec.maxUnavailable")
        if (
            self.strategy is Strategy.ROLLING_UPDATE
            and self.max_surge == 0
            and self.max_unavailable == 0
        ):
            raise ValidationError(
                "RollingUpdate cannot make progress with maxSurge=0 and "
                "maxUnavailable=0",
                path="spec",
            )


@dataclass(frozen=True)
class TriggerSpec:
    """A telemetry condition that can fire a mutation policy."""

    source_kind: TelemetrySource
    identifier: str

    def validate(self, *, path: str = "trigger") -> None:
        if not isinstance(self.identifier, str) or not self.identifier:
            raise ValidationError("identifier must be non-empty", path=path)


@dataclass(frozen=True)
class ContainerImageUpdate:
    container_name: str
    new_image: str


@dataclass(frozen=True)
class ResourceAdjustment:
    container_name: str
    limits: Mapping[str, str] = field(default_factory=dict)
    requests: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class EnvPatch:
    container_name: str
    env: tuple[tuple[str, str], ...] = ()


MutationSpec = Union[ContainerImageUpdate, ResourceAdjustment, EnvPatch]


def _validate_mutation(mut: MutationSpec, *, path: str) -> None:
    if not mut.container_name:
        raise ValidationError("containerName must be non-empty", path=f"{path}.containerName")
    if isinstance(mut, ContainerImageUpdate):
        if not mut.new_image:
            raise ValidationError("newImage must be non-empty", path=f"{path}.newImage")
    elif isinstance(mut, ResourceAdjustment):
        if not mut.limits and not mut.requests:
            raise ValidationError(
                "at least one of limits/requests must be non-empty",
                path=f"{path}.resources",
            )
        for section_name, section in (("limits", mut.limits), ("requests", mut.requests)):
            for k, v in section.items():
                if not k:
                    raise ValidationError(
                        "resource names must be non-empty",
                        path=f"{path}.resources.{section_name}",
                    )
                if not isinstance(v, str):
                    raise ValidationError(
                        f"quantity for {k!r} must be a string",
                        path=f"{path}.resources.{section_name}",
                    )
    elif isinstance(mut, EnvPatch):
        seen: set[str] = set()
        for k, v in mut.env:
            if not k:
                raise ValidationError("env names must be non-empty", path=f"{path}.env")
            if not isinstance(v, str):
                raise ValidationError(
                    f"env value for {k!r} must be a string", path=f"{path}.env"
                )
            if k in seen:
                raise ValidationError(f"duplicate env key {k!r}", path=f"{path}.env")
            seen.add(k)


@dataclass(frozen=True)
class ContextMutationPolicy:
    """Telemetry-triggered pod-spec mutation, applied in document order."""

    name: str
    selector: LabelSelector
    triggers: tuple[TriggerSpec, ...]
    mutations: tuple[MutationSpec, ...]

    def validate(self) -> None:
        _validate_name(self.name, path="metadata.name")
        self.selector.validate(path="spec.selector")
        if not self.triggers:
            raise ValidationError(
                "at least one trigger is required", path="spec.triggers.telemetrySources"
            )
        if not self.mutations:
            raise ValidationError("at least one mutation is required", path="spec.mutations")
        for i, t in enumerate(self.triggers):
            t.validate(path=f"spec.triggers.telemetrySources[{i}]")
        for i, m in enumerate(self.mutations):
            _validate_mutation(m, path=f"spec.mutations[{i}]")


def _validate_name(name: object, *, path: str) -> None:
    if not isinstance(name, str) or not name:
        raise ValidationError("name must be a non-empty string", path=path)
    if not _NAME_RE.match(name):
        raise ValidationError(
            f"name {name!r} must be lowercase alphanumeric with '-' or '.'", path=path
        )


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------


def selector_matches(selector: LabelSelector, labels: Mapping[str, str]) -> bool:
    """True iff every (key, value) in the selector appears exactly in labels."""
    return all(labels.get(k) == v for k, v in selector.match_labels.items())


def trigger_fires(policy: ContextMutationPolicy, event) -> bool:
    """True iff any trigger of the policy matches the event (OR semantics).

    ``event`` needs ``source_kind`` and ``identifier`` attributes.
    """
    return any(
        t.source_kind == event.source_kind and t.identifier == event.identifier
        for t in policy.triggers
    )


# ---------------------------------------------------------------------------
# Strict document plumbing
# ---------------------------------------------------------------------------


def load_yaml_document(text: str) -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise DocumentSyntaxError(f"malformed document: {exc}") from exc
    if not isinstance(doc, dict):
        raise DocumentSyntaxError("document root must be a mapping")
    return doc


def _as_mapping(value: object, *, path: str) -> dict:
    if not isinstance(value, dict):
        raise ValidationError("expected a mapping", path=path)
    return value


def _as_sequence(value: object, *, path: str) -> list:
    if not isinstance(value, list):
        raise ValidationError("expected a list", path=path)
    return value


def _reject_unknown(mapping: Mapping, allowed: Sequence[str], *, path: str) -> None:
    unknown = [k for k in mapping if k not in allowed]
    if unknown:
        raise ValidationError(f"unknown field(s) {unknown}", path=path)


def _quantity(value: object, *, path: str) -> str:
    # YAML leaves quoted quantities as strings; a bare 0 arrives as an int.
    if isinstance(value, bool):
        raise ValidationError("quantities must be strings", path=path)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        if not value:
            raise ValidationError("quantity must be non-empty", path=path)
        return value
    raise ValidationError(f"quantity must be a string, got {value!r}", path=path)


def _string(value: object, *, path: str) -> str:
    if not isinstance(value, str):
        raise ValidationError(f"expected a string, got {value!r}", path=path)
    return value


def parse_selector(value: object, *, path: str) -> LabelSelector:
    mapping = _as_mapping(value, path=path)
    _reject_unknown(mapping, ("matchLabels",), path=path)
    raw = mapping.get("matchLabels", {})
    labels = _as_mapping(raw, path=f"{path}.matchLabels") if raw is not None else {}
    selector = LabelSelector(match_labels=dict(labels))
    selector.validate(path=f"{path}.matchLabels")
    return selector


def _parse_header(doc: Mapping, expected_kind: str) -> tuple[str, dict]:
    _reject_unknown(doc, ("apiVersion", "kind", "metadata", "spec"), path="")
    api = doc.get("apiVersion")
    if api != API_VERSION:
        raise ValidationError(
            f"unsupported apiVersion {api!r} (expected {API_VERSION!r})",
            path="apiVersion",
        )
    kind = doc.get("kind")
    if kind != expected_kind:
        raise ValidationError(
            f"unexpected kind {kind!r} (expected {expected_kind!r})", path="kind"
        )
    metadata = _as_mapping(doc.get("metadata"), path="metadata")
    _reject_unknown(metadata, ("name",), path="metadata")
    name = metadata.get("name")
    _validate_name(name, path="metadata.name")
    spec = _as_mapping(doc.get("spec"), path="spec")
    return name, spec


# ---------------------------------------------------------------------------
# Rotation policy documents
# ---------------------------------------------------------------------------

_ROTATION_SPEC_KEYS = ("selector", "rotationInterval", "strategy", "maxSurge", "maxUnavailable")


def parse_rotation_policy(text: str) -> RotationPolicy:
    """Parse and validate a RotationPolicy document."""
    doc = load_yaml_document(text)
    return rotation_policy_from_doc(doc)


def rotation_policy_from_doc(doc: Mapping) -> RotationPolicy:
    name, spec = _parse_header(doc, KIND_ROTATION)
    _reject_unknown(spec, _ROTATION_SPEC_KEYS, path="spec")
    if "selector" not in spec:
        raise ValidationError("selector is required", path="spec.selector")
    selector = parse_selector(spec["selector"], path="spec.selector")
    if "rotationInterval" not in spec:
        raise ValidationError("rotationInterval is required", path="spec.rotationInterval")
    interval_us = parse_duration(spec["rotationInterval"], path="spec.rotationInterval")
    raw_strategy = spec.get("strategy")
    try:
        strategy = Strategy(_string(raw_strategy, path="spec.strategy"))
    except ValueError:
        raise ValidationError(
            f"unknown strategy {raw_strategy!r}", path="spec.strategy"
        ) from None
    max_surge = spec.get("maxSurge", 1)
    max_unavailable = spec.get("maxUnavailable", 0)
    for field_name, value in (("maxSurge", max_surge), ("maxUnavailable", max_unavailable)):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError("expected an integer", path=f"spec.{field_name}")
    policy = RotationPolicy(
        name=name,
        selector=selector,
        rotation_interval_us=interval_us,
        strategy=strategy,
        max_surge=max_surge,
        max_unavailable=max_unavailable,
    )
    policy.validate()
    return policy


def serialize_rotation_policy(policy: RotationPolicy) -> str:
    doc = {
        "apiVersion": API_VERSION,
        "kind": KIND_ROTATION,
        "metadata": {"name": policy.name},
        "spec": {
            "selector": {"matchLabels": dict(policy.selector.match_labels)},
            "rotationInterval": format_duration(policy.rotation_interval_us),
            "strategy": policy.strategy.value,
            "maxSurge": policy.max_surge,
            "maxUnavailable": policy.max_unavailable,
        },
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)


# ---------------------------------------------------------------------------
# Context-mutation policy documents
# ---------------------------------------------------------------------------


def _parse_trigger(raw: object, *, path: str) -> TriggerSpec:
    mapping = _as_mapping(raw, path=path)
    raw_type = mapping.get("type")
    try:
        source = TelemetrySource(_string(raw_type, path=f"{path}.type"))
    except ValueError:
        raise ValidationError(
            f"unknown telemetry source type {raw_type!r}", path=f"{path}.type"
        ) from None
    id_key = _TRIGGER_ID_KEY[source]
    _reject_unknown(mapping, ("type", id_key), path=path)
    if id_key not in mapping:
        raise ValidationError(f"{id_key} is required", path=f"{path}.{id_key}")
    trigger = TriggerSpec(
        source_kind=source,
        identifier=_string(mapping[id_key], path=f"{path}.{id_key}"),
    )
    trigger.validate(path=path)
    return trigger


def _parse_resources(raw: object, *, path: str) -> tuple[dict, dict]:
    mapping = _as_mapping(raw, path=path)
    _reject_unknown(mapping, ("limits", "requests"), path=path)
    out = []
    for key in ("limits", "requests"):
        section = mapping.get(key, {})
        section = _as_mapping(section, path=f"{path}.{key}") if section is not None else {}
        out.append(
            {
                _string(k, path=f"{path}.{key}"): _quantity(v, path=f"{path}.{key}.{k}")
                for k, v in section.items()
            }
        )
    return out[0], out[1]


def _parse_env(raw: object, *, path: str) -> tuple[tuple[str, str], ...]:
    items = _as_sequence(raw, path=path)
    env = []
    for i, item in enumerate(items):
        mapping = _as_mapping(item, path=f"{path}[{i}]")
        _reject_unknown(mapping, ("name", "value"), path=f"{path}[{i}]")
        name = _string(mapping.get("name"), path=f"{path}[{i}].name")
        value = _quantity(mapping.get("value"), path=f"{path}[{i}].value")
        env.append((name, value))
    return tuple(env)


def _parse_mutation(raw: object, *, path: str) -> MutationSpec:
    mapping = _as_mapping(raw, path=path)
    mtype = mapping.get("type")
    container_path = f"{path}.containerName"
    if mtype == "ContainerImageUpdate":
        _reject_unknown(mapping, ("type", "containerName", "newImage"), path=path)
        mut: MutationSpec = ContainerImageUpdate(
            container_name=_string(mapping.get("containerName", ""), path=container_path),
            new_image=_string(mapping.get("newImage", ""), path=f"{path}.newImage"),
        )
    elif mtype == "ResourceAdjustment":
        _reject_unknown(mapping, ("type", "containerName", "resources"), path=path)
        if "resources" not in mapping:
            raise ValidationError("resources is required", path=f"{path}.resources")
        limits, requests = _parse_resources(mapping["resources"], path=f"{path}.resources")
        mut = ResourceAdjustment(
            container_name=_string(mapping.get("containerName", ""), path=container_path),
            limits=limits,
            requests=requests,
        )
    elif mtype == "EnvPatch":
        _reject_unknown(mapping, ("type", "containerName", "env"), path=path)
        if "env" not in mapping:
            raise ValidationError("env is required", path=f"{path}.env")
        mut = EnvPatch(
            container_name=_string(mapping.get("containerName", ""), path=container_path),
            env=_parse_env(mapping["env"], path=f"{path}.env"),
        )
    else:
        raise ValidationError(f"unknown mutation type {mtype!r}", path=f"{path}.type")
    _validate_mutation(mut, path=path)
    return mut


def parse_mutation_policy(text: str) -> ContextMutationPolicy:
    """Parse and validate a ContextMutationPolicy document."""
    doc = load_yaml_document(text)
    return mutation_policy_from_doc(doc)


def mutation_policy_from_doc(doc: Mapping) -> ContextMutationPolicy:
    name, spec = _parse_header(doc, KIND_MUTATION)
    _reject_unknown(spec, ("selector", "triggers", "mutations"), path="spec")
    if "selector" not in spec:
        raise ValidationError("selector is required", path="spec.selector")
    selector = parse_selector(spec["selector"], path="spec.selector")

    triggers_block = _as_mapping(spec.get("triggers"), path="spec.triggers")
    _reject_unknown(triggers_block, ("telemetrySources",), path="spec.triggers")
    sources = _as_sequence(
        triggers_block.get("telemetrySources"), path="spec.triggers.telemetrySources"
    )
    triggers = tuple(
        _parse_trigger(raw, path=f"spec.triggers.telemetrySources[{i}]")
        for i, raw in enumerate(sources)
    )

    mutations_raw = _as_sequence(spec.get("mutations"), path="spec.mutations")
    mutations = tuple(
        _parse_mutation(raw, path=f"spec.mutations[{i}]")
        for i, raw in enumerate(mutations_raw)
    )

    policy = ContextMutationPolicy(
        name=name, selector=selector, triggers=triggers, mutations=mutations
    )
    policy.validate()
    return policy


def _trigger_to_doc(trigger: TriggerSpec) -> dict:
    return {
        "type": trigger.source_kind.value,
        _TRIGGER_ID_KEY[trigger.source_kind]: trigger.identifier,
    }


def _mutation_to_doc(mut: MutationSpec) -> dict:
    if isinstance(mut, ContainerImageUpdate):
        return {
            "type": "ContainerImageUpdate",
            "containerName": mut.container_name,
            "newImage": mut.new_image,
        }
    if isinstance(mut, ResourceAdjustment):
        resources: dict = {}
        if mut.limits:
            resources["limits"] = dict(mut.limits)
        if mut.requests:
            resources["requests"] = dict(mut.requests)
        return {
            "type": "ResourceAdjustment",
            "containerName": mut.container_name,
            "resources": resources,
        }
    return {
        "type": "EnvPatch",
        "containerName": mut.container_name,
        "env": [{"name": k, "value": v} for k, v in mut.env],
    }


def serialize_mutation_policy(policy: ContextMutationPolicy) -> str:
    doc = {
        "apiVersion": API_VERSION,
        "kind": KIND_MUTATION,
        "metadata": {"name": policy.name},
        "spec": {
            "selector": {"matchLabels": dict(policy.selector.match_labels)},
            "triggers": {
                "telemetrySources": [_trigger_to_doc(t) for t in policy.triggers]
            },
            "mutations": [_mutation_to_doc(m) for m in policy.mutations],
        },
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)


def parse_policy(text: str) -> RotationPolicy | ContextMutationPolicy:
    """Parse either policy kind, dispatching on the document's ``kind``."""
    doc = load_yaml_document(text)
    kind = doc.get("kind")
    if kind == KIND_ROTATION:
        return rotation_policy_from_doc(doc)
    if kind == KIND_MUTATION:
        return mutation_policy_from_doc(doc)
    raise ValidationError(f"unknown policy kind {kind!r}", path="kind")
