"""The attacker model: staged kill chain bound to one pod instance.

An attacker binds to a single Running pod, works through its kill-chain
stages, and loses all instance-bound progress whenever that pod is destroyed.
Dwell samples (compromise to loss-or-objective) feed the metrics module
through the event log.

All stage durations for a binding are drawn when the binding is established,
so the random stream position is a function of the attempt count alone. That
keeps outcomes comparable across runs that differ only in rotation cadence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from random import Random
from typing import Union

from .cluster import ClusterState, EventKind, PodPhase
from .errors import ValidationError
from .policy import LabelSelector, selector_matches


# ---------------------------------------------------------------------------
# Duration distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    duration_us: int


@dataclass(frozen=True)
class Exponential:
    mean_us: int


@dataclass(frozen=True)
class UniformDist:
    low_us: int
    high_us: int


DurationDist = Union[Deterministic, Exponential, UniformDist]


def sample_us(dist: DurationDist, rng: Random) -> int:
    if isinstance(dist, Deterministic):
        return dist.duration_us
    if isinstance(dist, Exponential):
        return max(0, round(rng.expovariate(1.0 / dist.mean_us)))
    return rng.randrange(dist.low_us, dist.high_us)


def validate_dist(dist: DurationDist, *, path: str, strict_positive: bool) -> None:
    if isinstance(dist, Deterministic):
        if dist.duration_us < 0 or (strict_positive and dist.duration_us == 0):
            raise ValidationError("duration must be positive", path=path)
    elif isinstance(dist, Exponential):
        if dist.mean_us <= 0:
            raise ValidationError("mean must be positive", path=path)
    else:
        if dist.low_us < 0:
            raise ValidationError("low must be >= 0", path=path)
        if dist.low_us >= dist.high_us:
            raise ValidationError("low must be < high", path=path)


# ---------------------------------------------------------------------------
# Attacker configuration and state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AtTime:
    at_us: int


@dataclass(frozen=True)
class PoissonArrival:
    mean_interarrival_us: int


Arrival = Union[AtTime, PoissonArrival]


@dataclass(frozen=True)
class StageSpec:
    name: str
    duration: DurationDist

    def validate(self, *, path: str = "stage") -> None:
        if not self.name:
            raise ValidationError("stage name must be non-empty", path=f"{path}.name")
        validate_dist(self.duration, path=f"{path}.duration", strict_positive=True)


@dataclass(frozen=True)
class AttackerConfig:
    arrival: Arrival
    kill_chain: tuple[StageSpec, ...]
    retry_delay: DurationDist
    target_selector: LabelSelector = field(default_factory=LabelSelector)
    requires_gpu: bool = False
    repeat_after_completion: bool = False

    def validate(self) -> None:
        if not self.kill_chain:
            raise ValidationError("killChain must be non-empty", path="attacker.killChain")
        for i, stage in enumerate(self.kill_chain):
            stage.validate(path=f"attacker.killChain[{i}]")
        validate_dist(self.retry_delay, path="attacker.retryDelay", strict_positive=False)
        if isinstance(self.arrival, AtTime):
            if self.arrival.at_us < 0:
                raise ValidationError("atTime must be >= 0", path="attacker.arrival")
        else:
            if self.arrival.mean_interarrival_us <= 0:
                raise ValidationError(
                    "meanInterarrival must be positive", path="attacker.arrival"
                )
        self.target_selector.validate(path="attacker.targetSelector")


@dataclass
class AttackerState:
    bound_pod: int | None = None
    stage_index: int = 0
    stage_completes_at_us: int | None = None
    compromise_established_at_us: int | None = None
    attempts: int = 0
    disruptions: int = 0
    completions: int = 0
    starved_attempts: int = 0
    dwell_samples_us: list[int] = field(default_factory=list)


class Attacker:
    """Event-driven attacker runtime wired into one ClusterState."""

    def __init__(
        self,
        config: AttackerConfig,
        cluster: ClusterState,
        rng: Random,
        *,
        volume_remnants_survive: bool = False,
    ) -> None:
        config.validate()
        self.config = config
        self.cluster = cluster
        self.rng = rng
        self.state = AttackerState()
        self.volume_remnants_survive = volume_remnants_survive
        self._binding_serial = 0
        self._stage_durations: list[int] = []
        self._latent_pod: int | None = None
        self._resume_stage = 0
        self._done = False
        cluster.pod_termination_hooks.append(self.on_pod_terminated)

    def start(self) -> None:
        """Schedule the first compromise attempt per the arrival process."""
        if isinstance(self.config.arrival, AtTime):
            at = self.config.arrival.at_us
        else:
            gap = self.rng.expovariate(1.0 / self.config.arrival.mean_interarrival_us)
            at = max(0, round(gap))
        self.cluster.schedule(
            max(at, self.cluster.clock), lambda: self.attempt_compromise(self.cluster.clock)
        )

    # -- operations ----------------------------------------------------------

    def _eligible_pods(self):
        pods = []
        for pod in self.cluster.running_pods():
            if not selector_matches(self.config.target_selector, pod.template.labels):
                continue
            if self.config.requires_gpu and pod.template.gpu_revoked():
                continue
            pods.append(pod)
        return pods

    def attempt_compromise(self, at_us: int) -> bool:
        """Try to bind a uniformly random eligible Running pod."""
        if self._done or self.state.bound_pod is not None:
            return False
        st = self.state
        st.attempts += 1
        eligible = self._eligible_pods()
        if not eligible:
            st.starved_attempts += 1
            self.cluster.log_event(
                EventKind.COMPROMISE_ATTEMPTED,
                "attacker",
                {"attempt": str(st.attempts), "outcome": "starved"},
            )
            # A zero retry delay would spin forever on the same timestamp.
            delay = max(sample_us(self.config.retry_delay, self.rng), 1)
            self.cluster.schedule(
                at_us + delay, lambda: self.attempt_compromise(self.cluster.clock)
            )
            return False
        pod = eligible[self.rng.randrange(len(eligible))]
        start_stage = self._resume_stage if self.volume_remnants_survive else 0
        self._resume_stage = 0
        self._stage_durations = [
            sample_us(stage.duration, self.rng)
            for stage in self.config.kill_chain[start_stage:]
        ]
        self._binding_serial += 1
        st.bound_pod = pod.uid
        st.stage_index = start_stage
        st.compromise_established_at_us = at_us
        self.cluster.log_event(
            EventKind.COMPROMISE_ATTEMPTED,
            "attacker",
            {"attempt": str(st.attempts), "outcome": "established"},
        )
        self.cluster.log_event(
            EventKind.COMPROMISE_ESTABLISHED,
            str(pod.uid),
            {
                "workload": pod.workload,
                "attempt": str(st.attempts),
                "start_stage": str(start_stage),
            },
        )
        self._schedule_stage(at_us)
        return True

    def _schedule_stage(self, now_us: int) -> None:
        st = self.state
        offset = st.stage_index - (len(self.config.kill_chain) - len(self._stage_durations))
        duration = self._stage_durations[offset]
        st.stage_completes_at_us = now_us + duration
        serial = self._binding_serial
        self.cluster.schedule(st.stage_completes_at_us, lambda: self.advance(serial))

    def advance(self, binding_serial: int) -> None:
        """Complete the current stage; finish the chain past the last stage."""
        st = self.state
        if binding_serial != self._binding_serial or st.bound_pod is None:
            return  # binding was disrupted; stale stage event
        at_us = self.cluster.clock
        stage = self.config.kill_chain[st.stage_index]
        self.cluster.log_event(
            EventKind.KILL_CHAIN_STAGE_COMPLETED,
            str(st.bound_pod),
            {"stage": stage.name, "index": str(st.stage_index)},
        )
        st.stage_index += 1
        if st.stage_index < len(self.config.kill_chain):
            self._schedule_stage(at_us)
            return
        dwell = at_us - st.compromise_established_at_us
        st.completions += 1
        st.dwell_samples_us.append(dwell)
        completed_pod = st.bound_pod
        self.cluster.log_event(
            EventKind.KILL_CHAIN_COMPLETED,
            str(completed_pod),
            {"dwell_us": str(dwell), "attempt": str(st.attempts)},
        )
        self._unbind()
        if self.config.repeat_after_completion:
            # The objective on this instance is achieved; the attacker lies
            # low and strikes the replacement once this pod is rotated away.
            self._latent_pod = completed_pod
        else:
            self._done = True

    def on_pod_terminated(self, uid: int, at_us: int) -> None:
        """Disruption path: rotation of the bound pod wipes all progress."""
        st = self.state
        if self._latent_pod == uid:
            self._latent_pod = None
            delay = sample_us(self.config.retry_delay, self.rng)
            self.cluster.schedule(
                at_us + delay, lambda: self.attempt_compromise(self.cluster.clock)
            )
            return
        if st.bound_pod != uid:
            return
        dwell = at_us - st.compromise_established_at_us
        stage_reached = st.stage_index
        st.disruptions += 1
        st.dwell_samples_us.append(dwell)
        self.cluster.log_event(
            EventKind.COMPROMISE_DISRUPTED,
            str(uid),
            {
                "dwell_us": str(dwell),
                "stage_reached": str(stage_reached),
                "attempt": str(st.attempts),
            },
        )
        if self.volume_remnants_survive:
            self._resume_stage = stage_reached
        self._unbind()
        delay = sample_us(self.config.retry_delay, self.rng)
        self.cluster.schedule(
            at_us + delay, lambda: self.attempt_compromise(self.cluster.clock)
        )

    def _unbind(self) -> None:
        st = self.state
        st.bound_pod = None
        st.stage_completes_at_us = None
        st.compromise_established_at_us = None
        self._stage_durations = []
