"""Simulated orchestrator state: workloads, pods, IPs, and the event log.

The simulation core is a discrete-event engine: a priority queue keyed by
(timestamp, monotone sequence number), no fixed tick. Everything stochastic
comes from one seeded ``random.Random`` stream per replication, so two runs
with the same seed produce byte-identical event logs.

The append-only event log is the single source of truth for metrics.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from enum import Enum
from random import Random
from typing import Callable, Iterable, Mapping

from .errors import IpPoolExhausted, UnknownPod, UnknownWorkload, ValidationError
from .policy import RotationPolicy, Strategy

# Suffix alphabet mirrors orchestrator convention (no vowels, no 0/1/l).
_SUFFIX_ALPHABET = "bcdfghjklmnpqrstvwxz2456789"
_SUFFIX_LEN = 5

# Simulated pod network: a /16 at 10.244.0.0 by default.
_IP_BASE = (10 << 24) | (244 << 16)

GPU_RESOURCE = "nvidia.com/gpu"


class PodPhase(str, Enum):
    PENDING = "Pending"
    RUNNING = "Running"
    TERMINATING = "Terminating"
    TERMINATED = "Terminated"


class EventKind(str, Enum):
    POD_CREATED = "PodCreated"
    POD_READY = "PodReady"
    POD_TERMINATING = "PodTerminating"
    POD_TERMINATED = "PodTerminated"
    TEMPLATE_MUTATED = "TemplateMutated"
    ROTATION_TRIGGERED = "RotationTriggered"
    MUTATION_TRIGGERED = "MutationTriggered"
    TELEMETRY_RECEIVED = "TelemetryReceived"
    COMPROMISE_ATTEMPTED = "CompromiseAttempted"
    COMPROMISE_ESTABLISHED = "CompromiseEstablished"
    COMPROMISE_DISRUPTED = "CompromiseDisrupted"
    KILL_CHAIN_STAGE_COMPLETED = "KillChainStageCompleted"
    KILL_CHAIN_COMPLETED = "KillChainCompleted"


@dataclass(frozen=True)
class PodTemplate:
    """Immutable pod spec. Single-container model."""

    container_name: str
    image: str
    resource_limits: Mapping[str, str] = field(default_factory=dict)
    resource_requests: Mapping[str, str] = field(default_factory=dict)
    env: tuple[tuple[str, str], ...] = ()
    labels: Mapping[str, str] = field(default_factory=dict)
    startup_delay_us: int = 0

    def validate(self) -> None:
        if not self.container_name:
            raise ValidationError("containerName must be non-empty", path="template.containerName")
        if not self.image:
            raise ValidationError("image must be non-empty", path="template.image")
        if self.startup_delay_us < 0:
            raise ValidationError("startupDelay must be >= 0", path="template.startupDelay")

    def template_hash(self) -> str:
        canonical = json.dumps(
            {
                "container": self.container_name,
                "image": self.image,
                "limits": dict(sorted(self.resource_limits.items())),
                "requests": dict(sorted(self.resource_requests.items())),
                "env": list(self.env),
                "labels": dict(sorted(self.labels.items())),
                "startup_delay_us": self.startup_delay_us,
            },
            sort_keys=True,
        )
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    def gpu_revoked(self) -> bool:
        return self.resource_limits.get(GPU_RESOURCE) == "0"


@dataclass
class PodInstance:
    uid: int
    name: str
    ip: int
    workload: str
    template: PodTemplate
    phase: PodPhase
    created_at_us: int
    ready_at_us: int | None = None
    terminated_at_us: int | None = None


@dataclass
class WorkloadSpec:
    name: str
    replicas: int
    template: PodTemplate

    def validate(self) -> None:
        if not self.name:
            raise ValidationError("workload name must be non-empty", path="workload.name")
        if self.replicas < 1:
            raise ValidationError("replicas must be >= 1", path="workload.replicas")
        self.template.validate()


@dataclass(frozen=True)
class ClusterEvent:
    time_us: int
    seq: int
    kind: EventKind
    subject: str
    detail: Mapping[str, str]

    def to_record(self) -> dict:
        return {
            "time_us": self.time_us,
            "seq": self.seq,
            "kind": self.kind.value,
            "subject": self.subject,
            "detail": dict(self.detail),
        }


def format_ip(ip: int) -> str:
    return f"{(ip >> 24) & 255}.{(ip >> 16) & 255}.{(ip >> 8) & 255}.{ip & 255}"


class ClusterState:
    """Mutable simulation state plus the shared discrete-event queue.

    Pod termination completion invokes the registered hooks, which is how the
    adversary observes rotations without the cluster knowing about attackers.
    """

    def __init__(
        self,
        seed: int,
        *,
        ip_pool_size: int = 65536,
        termination_grace_us: int = 0,
        horizon_us: int | None = None,
    ) -> None:
        if ip_pool_size < 1:
            raise ValidationError("ipPoolSize must be >= 1", path="ipPoolSize")
        if termination_grace_us < 0:
            raise ValidationError("terminationGrace must be >= 0", path="terminationGrace")
        self.clock: int = 0
        self.rng = Random(seed)
        self.seed = seed
        self.workloads: dict[str, WorkloadSpec] = {}
        self.original_templates: dict[str, PodTemplate] = {}
        self.pods: dict[int, PodInstance] = {}
        self.event_log: list[ClusterEvent] = []
        self.termination_grace_us = termination_grace_us
        self.horizon_us = horizon_us
        self.pod_termination_hooks: list[Callable[[int, int], None]] = []
        self.replacement_in_progress = False
        self._queue: list[tuple[int, int, Callable[[], None]]] = []
        self._queue_seq = 0
        self._log_seq = 0
        self._next_uid = 1
        self._free_ips = list(range(_IP_BASE, _IP_BASE + ip_pool_size))

    # -- event queue -------------------------------------------------------

    def schedule(self, at_us: int, action: Callable[[], None]) -> None:
        if at_us < self.clock:
            raise ValueError(f"cannot schedule in the past ({at_us} < {self.clock})")
        heapq.heappush(self._queue, (at_us, self._queue_seq, action))
        self._queue_seq += 1

    def next_event_time(self) -> int | None:
        return self._queue[0][0] if self._queue else None

    def pump_one(self) -> bool:
        """Dispatch the single earliest pending event. False when idle."""
        if not self._queue:
            return False
        at_us, _, action = heapq.heappop(self._queue)
        self.clock = at_us
        action()
        return True

    def run_until(self, deadline_us: int) -> None:
        """Dispatch every event with time <= deadline, then park the clock."""
        while self._queue and self._queue[0][0] <= deadline_us:
            self.pump_one()
        self.clock = max(self.clock, deadline_us)

    # -- event log ---------------------------------------------------------

    def log_event(self, kind: EventKind, subject: str, detail: Mapping[str, str]) -> ClusterEvent:
        event = ClusterEvent(
            time_us=self.clock,
            seq=self._log_seq,
            kind=kind,
            subject=subject,
            detail=dict(detail),
        )
        self._log_seq += 1
        self.event_log.append(event)
        return event

    def export_log(self) -> str:
        """Newline-delimited records: {time_us, seq, kind, subject, detail}."""
        return "".join(json.dumps(e.to_record()) + "\n" for e in self.event_log)

    def log_records(self) -> list[dict]:
        return [e.to_record() for e in self.event_log]

    # -- workloads and pods --------------------------------------------------

    def add_workload(self, spec: WorkloadSpec) -> None:
        spec.validate()
        if spec.name in self.workloads:
            raise ValidationError(f"duplicate workload {spec.name!r}", path="workloads")
        self.workloads[spec.name] = spec
        self.original_templates[spec.name] = spec.template

    def _workload(self, name: str) -> WorkloadSpec:
        try:
            return self.workloads[name]
        except KeyError:
            raise UnknownWorkload(f"unknown workload {name!r}") from None

    def pods_of(self, workload: str) -> list[PodInstance]:
        return [p for p in self.pods.values() if p.workload == workload]

    def live_pods(self, workload: str) -> list[PodInstance]:
        """Pods in Pending or Running, oldest first."""
        pods = [
            p
            for p in self.pods_of(workload)
            if p.phase in (PodPhase.PENDING, PodPhase.RUNNING)
        ]
        pods.sort(key=lambda p: (p.created_at_us, p.uid))
        return pods

    def running_pods(self) -> list[PodInstance]:
        pods = [p for p in self.pods.values() if p.phase is PodPhase.RUNNING]
        pods.sort(key=lambda p: p.uid)
        return pods

    def _draw_ip(self) -> int:
        if not self._free_ips:
            raise IpPoolExhausted("no free address in the simulation IP pool")
        idx = self.rng.randrange(len(self._free_ips))
        self._free_ips[idx], self._free_ips[-1] = self._free_ips[-1], self._free_ips[idx]
        return self._free_ips.pop()

    def _release_ip(self, ip: int) -> None:
        self._free_ips.append(ip)

    def spawn_pod(self, workload: str, *, initial: bool = False) -> int:
        """Create a Pending pod; it becomes Ready after the template's delay.

        Pods of the initial fleet (``initial=True``) are Ready at creation:
        the startup delay models replacement readiness, the fleet is assumed
        to pre-exist when the measurement window opens.
        """
        w = self._workload(workload)
        uid = self._next_uid
        self._next_uid += 1
        ip = self._draw_ip()
        suffix = "".join(
            self.rng.choice(_SUFFIX_ALPHABET) for _ in range(_SUFFIX_LEN)
        )
        pod = PodInstance(
            uid=uid,
            name=f"{w.name}-{suffix}",
            ip=ip,
            workload=w.name,
            template=w.template,
            phase=PodPhase.PENDING,
            created_at_us=self.clock,
        )
        self.pods[uid] = pod
        self.log_event(
            EventKind.POD_CREATED,
            str(uid),
            {
                "workload": w.name,
                "name": pod.name,
                "ip": format_ip(ip),
                "image": pod.template.image,
                "template_hash": pod.template.template_hash(),
            },
        )
        delay = 0 if initial else pod.template.startup_delay_us
        if delay == 0:
            self._mark_ready(uid)
        else:
            self.schedule(self.clock + delay, lambda: self._mark_ready(uid))
        return uid

    def _mark_ready(self, uid: int) -> None:
        pod = self.pods[uid]
        if pod.phase is not PodPhase.PENDING:
            return  # terminated while starting; readiness event is stale
        pod.phase = PodPhase.RUNNING
        pod.ready_at_us = self.clock
        self.log_event(
            EventKind.POD_READY, str(uid), {"workload": pod.workload, "ip": format_ip(pod.ip)}
        )

    def terminate_pod(self, uid: int, *, cause: str = "manual") -> None:
        pod = self.pods.get(uid)
        if pod is None or pod.phase is PodPhase.TERMINATED:
            raise UnknownPod(f"pod {uid} does not exist or is already terminated")
        if pod.phase is PodPhase.TERMINATING:
            return  # already shutting down within its grace period
        pod.phase = PodPhase.TERMINATING
        self.log_event(
            EventKind.POD_TERMINATING,
            str(uid),
            {"workload": pod.workload, "cause": cause},
        )
        if self.termination_grace_us == 0:
            self._complete_termination(uid, cause)
        else:
            self.schedule(
                self.clock + self.termination_grace_us,
                lambda: self._complete_termination(uid, cause),
            )

    def _complete_termination(self, uid: int, cause: str) -> None:
        pod = self.pods[uid]
        pod.phase = PodPhase.TERMINATED
        pod.terminated_at_us = self.clock
        self._release_ip(pod.ip)
        self.log_event(
            EventKind.POD_TERMINATED,
            str(uid),
            {
                "workload": pod.workload,
                "cause": cause,
                "created_at_us": str(pod.created_at_us),
                "lifetime_us": str(pod.terminated_at_us - pod.created_at_us),
            },
        )
        for hook in list(self.pod_termination_hooks):
            hook(uid, self.clock)

    # -- replacement ---------------------------------------------------------

    def ready_replica_count(self, workload: str, at_us: int) -> int:
        """Pods of the workload with ready_at <= at < terminated_at."""
        self._workload(workload)
        if at_us > self.clock:
            raise ValueError(f"cannot query the future ({at_us} > {self.clock})")
        count = 0
        for p in self.pods_of(workload):
            if p.ready_at_us is None or p.ready_at_us > at_us:
                continue
            if p.terminated_at_us is not None and p.terminated_at_us <= at_us:
                continue
            count += 1
        return count

    def _window_live_count(self, workload: str) -> int:
        """Pods created and not yet fully terminated (counts Terminating)."""
        return sum(
            1
            for p in self.pods_of(workload)
            if p.phase is not PodPhase.TERMINATED
        )

    def _running_count(self, workload: str) -> int:
        return sum(1 for p in self.pods_of(workload) if p.phase is PodPhase.RUNNING)

    def _pump_for_pass(self) -> bool:
        nxt = self.next_event_time()
        if nxt is None:
            return False
        if self.horizon_us is not None and nxt > self.horizon_us:
            return False
        return self.pump_one()

    def rolling_replace(
        self,
        workload: str,
        new_template: PodTemplate,
        policy: RotationPolicy,
        *,
        cause: str = "manual",
        policy_name: str | None = None,
    ) -> list[tuple[int, int]]:
        """Replace every live pod of the workload with pods from new_template.

        Oldest pod goes first. RollingUpdate honours max_surge/max_unavailable
        at every step; Recreate terminates all old pods before creating any
        replacement. Runs the event queue forward until the pass completes (or
        the horizon cuts it off), so interleaved events fire in order.
        """
        w = self._workload(workload)
        new_template.validate()
        old = self.live_pods(workload)
        w.template = new_template
        pairs: list[tuple[int, int]] = []
        created: list[int] = []
        if not old:
            return pairs
        self.replacement_in_progress = True
        try:
            if policy.strategy is Strategy.RECREATE:
                for p in old:
                    self.terminate_pod(p.uid, cause=cause)
                while any(self.pods[p.uid].phase is not PodPhase.TERMINATED for p in old):
                    if not self._pump_for_pass():
                        break
                if all(self.pods[p.uid].phase is PodPhase.TERMINATED for p in old):
                    created = [self.spawn_pod(workload) for _ in old]
            else:
                remaining = [p.uid for p in old]
                while True:
                    progress = True
                    while progress:
                        progress = False
                        # Scale up within the surge budget.
                        while (
                            len(created) < len(old)
                            and self._window_live_count(workload)
                            < w.replicas + policy.max_surge
                        ):
                            created.append(self.spawn_pod(workload))
                            progress = True
                        # Scale down within the availability budget. Pending
                        # old pods are never serving, so they go for free.
                        while remaining:
                            victim = self.pods[remaining[0]]
                            if victim.phase is not PodPhase.PENDING:
                                budget = self._running_count(workload) - (
                                    w.replicas - policy.max_unavailable
                                )
                                if budget <= 0:
                                    break
                            remaining.pop(0)
                            self.terminate_pod(victim.uid, cause=cause)
                            progress = True
                    if not remaining and len(created) == len(old):
                        break
                    if not self._pump_for_pass():
                        break
            pairs = list(zip([p.uid for p in old], created))
        finally:
            self.replacement_in_progress = False
        return pairs
