"""The defense controller loop: scheduled rotation and telemetry reaction.

The controller is a pure decision layer over ClusterState. It tracks each
workload's oldest pod age against the matching rotation policies, reacts to
telemetry by mutating templates and forcing replacement, and leaves an audit
trail in the cluster event log for overhead accounting.

Pods are immutable: every mutation takes effect through template replacement,
never in place.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum

from .cluster import ClusterState, EventKind, PodTemplate
from .errors import ContainerMismatch, ValidationError
from .policy import (
    ContainerImageUpdate,
    ContextMutationPolicy,
    EnvPatch,
    LabelSelector,
    MutationSpec,
    ResourceAdjustment,
    RotationPolicy,
    Strategy,
    selector_matches,
    trigger_fires,
)

# Replacement parameters used when a forced rotation hits a workload that no
# rotation policy covers.
DEFAULT_REPLACEMENT = RotationPolicy(
    name="default-replacement",
    selector=LabelSelector(),
    rotation_interval_us=1,
    strategy=Strategy.ROLLING_UPDATE,
    max_surge=1,
    max_unavailable=0,
)


class RotationCause(str, Enum):
    SCHEDULED_INTERVAL = "ScheduledInterval"
    TELEMETRY_TRIGGER = "TelemetryTrigger"
    EMERGENCY_ANOMALY = "EmergencyAnomaly"


@dataclass(frozen=True)
class RotationDecision:
    workload: str
    due_at_us: int
    cause: RotationCause
    policy_name: str


@dataclass
class ControllerConfig:
    rotation_policies: list[RotationPolicy] = field(default_factory=list)
    mutation_policies: list[ContextMutationPolicy] = field(default_factory=list)
    reconcile_jitter_us: int = 0

    def __post_init__(self) -> None:
        if self.reconcile_jitter_us < 0:
            raise ValidationError("reconcileJitter must be >= 0", path="reconcileJitter")
        for kind, policies in (
            ("rotationPolicies", self.rotation_policies),
            ("mutationPolicies", self.mutation_policies),
        ):
            names = [p.name for p in policies]
            if len(names) != len(set(names)):
                raise ValidationError("policy names must be unique", path=kind)


def next_due_rotation(config: ControllerConfig, state: ClusterState) -> RotationDecision | None:
    """Earliest scheduled rotation across all matched workloads.

    For each workload matched by a rotation policy's selector, the due time is
    the oldest live pod's creation time plus the rotation interval (clamped to
    now, so an overdue workload is due immediately). Ties break on workload
    name, then policy name.
    """
    best: tuple[int, str, str] | None = None
    for name in sorted(state.workloads):
        workload = state.workloads[name]
        live = state.live_pods(name)
        if not live:
            continue
        oldest = live[0]
        for policy in config.rotation_policies:
            if not selector_matches(policy.selector, workload.template.labels):
                continue
            due = max(oldest.created_at_us + policy.rotation_interval_us, state.clock)
            candidate = (due, name, policy.name)
            if best is None or candidate < best:
                best = candidate
    if best is None:
        return None
    due, workload_name, policy_name = best
    return RotationDecision(
        workload=workload_name,
        due_at_us=due,
        cause=RotationCause.SCHEDULED_INTERVAL,
        policy_name=policy_name,
    )


def replacement_policy_for(
    config: ControllerConfig, state: ClusterState, workload: str
) -> RotationPolicy:
    """Rotation parameters governing a workload's replacement passes.

    When several rotation policies match, the shortest interval wins (the
    binding age cap); forced rotations on uncovered workloads fall back to a
    conservative RollingUpdate with surge 1.
    """
    w = state.workloads[workload]
    matching = [
        p
        for p in config.rotation_policies
        if selector_matches(p.selector, w.template.labels)
    ]
    if not matching:
        return DEFAULT_REPLACEMENT
    return min(matching, key=lambda p: (p.rotation_interval_us, p.name))


def execute_rotation(
    config: ControllerConfig,
    state: ClusterState,
    decision: RotationDecision,
    *,
    template: PodTemplate | None = None,
) -> list[tuple[int, int]]:
    """Run the replacement pass for a due decision and log RotationTriggered.

    ``template`` overrides the workload's current template (used by the
    revert-on-scheduled-rotation scenario flag).
    """
    if decision.due_at_us > state.clock:
        raise ValueError(
            f"decision due at {decision.due_at_us} executed at {state.clock}"
        )
    workload = state._workload(decision.workload)
    replacement = replacement_policy_for(config, state, decision.workload)
    target_template = template if template is not None else workload.template
    state.log_event(
        EventKind.ROTATION_TRIGGERED,
        decision.workload,
        {
            "cause": decision.cause.value,
            "policy": decision.policy_name,
            "strategy": replacement.strategy.value,
            "template_hash": target_template.template_hash(),
        },
    )
    return state.rolling_replace(
        decision.workload,
        target_template,
        replacement,
        cause=decision.cause.value,
        policy_name=decision.policy_name,
    )


def apply_mutations(template: PodTemplate, mutations: list[MutationSpec]) -> PodTemplate:
    """Apply mutations in order, returning a new template.

    Image updates replace the image. Resource adjustments replace only the
    listed resource keys and keep the rest. Env patches upsert: an existing
    key is overridden in place, new keys append in order.
    """
    current = template
    for mut in mutations:
        if mut.container_name != current.container_name:
            raise ContainerMismatch(
                f"mutation targets container {mut.container_name!r} but the "
                f"template defines {current.container_name!r}"
            )
        if isinstance(mut, ContainerImageUpdate):
            current = _replace(current, image=mut.new_image)
        elif isinstance(mut, ResourceAdjustment):
            limits = dict(current.resource_limits)
            limits.update(mut.limits)
            requests = dict(current.resource_requests)
            requests.update(mut.requests)
            current = _replace(current, resource_limits=limits, resource_requests=requests)
        elif isinstance(mut, EnvPatch):
            env = list(current.env)
            index = {k: i for i, (k, _) in enumerate(env)}
            for key, value in mut.env:
                if key in index:
                    env[index[key]] = (key, value)
                else:
                    index[key] = len(env)
                    env.append((key, value))
            current = _replace(current, env=tuple(env))
    return current


def _replace(template: PodTemplate, **changes) -> PodTemplate:
    return dataclasses.replace(template, **changes)


def handle_telemetry_event(
    config: ControllerConfig, state: ClusterState, event
) -> list[RotationDecision]:
    """React to one telemetry event: mutate matched templates, demand rotation.

    A mutation policy applies when any of its triggers matches the event and
    its selector matches the event's target labels; it then rewrites the
    template of every workload whose labels the selector matches. Each
    rewritten workload gets an immediate rotation decision, because a mutated
    template only takes effect through replacement. Unmatched events are
    logged by the caller and ignored here.
    """
    decisions: list[RotationDecision] = []
    for policy in config.mutation_policies:
        if not trigger_fires(policy, event):
            continue
        if not selector_matches(policy.selector, event.target_labels):
            continue
        for name in sorted(state.workloads):
            workload = state.workloads[name]
            if not selector_matches(policy.selector, workload.template.labels):
                continue
            state.log_event(
                EventKind.MUTATION_TRIGGERED,
                policy.name,
                {
                    "workload": name,
                    "source_kind": event.source_kind.value,
                    "identifier": event.identifier,
                },
            )
            workload.template = apply_mutations(workload.template, list(policy.mutations))
            state.log_event(
                EventKind.TEMPLATE_MUTATED,
                name,
                {
                    "policy": policy.name,
                    "template_hash": workload.template.template_hash(),
                },
            )
            decisions.append(
                RotationDecision(
                    workload=name,
                    due_at_us=state.clock,
                    cause=RotationCause.TELEMETRY_TRIGGER,
                    policy_name=policy.name,
                )
            )
    return decisions
