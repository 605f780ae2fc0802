"""Reproducible experiment scripts and the replication runner.

A scenario document pins everything a run needs: workloads, policies, a
scripted telemetry timeline, the attacker configuration, horizon, seed, and
replication count. Replication r runs with seed + r; replications are
independent and executed in order, so results are deterministic and the list
is stable under any execution strategy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from random import Random
from typing import Mapping

from . import metrics as metrics_mod
from .adversary import (
    Attacker,
    AttackerConfig,
    AtTime,
    Deterministic,
    DurationDist,
    Exponential,
    PoissonArrival,
    StageSpec,
    UniformDist,
)
from .cluster import ClusterState, EventKind, PodTemplate, WorkloadSpec
from .controller import (
    ControllerConfig,
    RotationCause,
    RotationDecision,
    execute_rotation,
    handle_telemetry_event,
    next_due_rotation,
)
from .durations import parse_duration
from .errors import ValidationError
from .policy import (
    API_VERSION,
    ContextMutationPolicy,
    LabelSelector,
    RotationPolicy,
    TelemetrySource,
    _as_mapping,
    _as_sequence,
    _quantity,
    _reject_unknown,
    _string,
    load_yaml_document,
    mutation_policy_from_doc,
    parse_selector,
    rotation_policy_from_doc,
)

KIND_SCENARIO = "Scenario"

# Attacker RNG stream is derived from the replication seed by a fixed affine
# map so attacker draws do not shift when cluster randomness changes.
_ATTACKER_SEED_SALT = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class TelemetryEvent:
    time_us: int
    source_kind: TelemetrySource
    identifier: str
    target_labels: Mapping[str, str] = field(default_factory=dict)


@dataclass
class ScenarioScript:
    name: str
    horizon_us: int
    seed: int
    workloads: list[WorkloadSpec]
    rotation_policies: list[RotationPolicy] = field(default_factory=list)
    mutation_policies: list[ContextMutationPolicy] = field(default_factory=list)
    telemetry: list[TelemetryEvent] = field(default_factory=list)
    attacker: AttackerConfig | None = None
    replications: int = 1
    ada_enabled: bool = True
    reconcile_jitter_us: int = 0
    termination_grace_us: int = 0
    ip_pool_size: int = 65536
    revert_template_on_scheduled: bool = False
    volume_remnants_survive: bool = False

    def validate(self) -> None:
        if not self.name:
            raise ValidationError("scenario name must be non-empty", path="metadata.name")
        if self.horizon_us <= 0:
            raise ValidationError("horizon must be > 0", path="spec.horizon")
        if self.replications < 1:
            raise ValidationError("replications must be >= 1", path="spec.replications")
        if not self.workloads:
            raise ValidationError("at least one workload is required", path="spec.workloads")
        names = [w.name for w in self.workloads]
        if len(names) != len(set(names)):
            raise ValidationError("workload names must be unique", path="spec.workloads")
        for w in self.workloads:
            w.validate()
        last = -1
        for i, ev in enumerate(self.telemetry):
            if ev.time_us < 0 or ev.time_us > self.horizon_us:
                raise ValidationError(
                    "telemetry time outside [0, horizon]", path=f"spec.telemetry[{i}].time"
                )
            if ev.time_us < last:
                raise ValidationError(
                    "telemetry timeline must be sorted by time",
                    path=f"spec.telemetry[{i}].time",
                )
            last = ev.time_us
        # Reuse the controller config validation for policy name uniqueness.
        ControllerConfig(
            rotation_policies=self.rotation_policies,
            mutation_policies=self.mutation_policies,
            reconcile_jitter_us=self.reconcile_jitter_us,
        )
        if self.attacker is not None:
            self.attacker.validate()


# ---------------------------------------------------------------------------
# Document parsing
# ---------------------------------------------------------------------------


_SPEC_KEYS = (
    "horizon",
    "seed",
    "replications",
    "adaEnabled",
    "reconcileJitter",
    "terminationGrace",
    "ipPoolSize",
    "revertTemplateOnScheduledRotation",
    "volumeRemnantsSurvive",
    "workloads",
    "rotationPolicies",
    "mutationPolicies",
    "telemetry",
    "attacker",
)


def _parse_template(raw: object, *, path: str) -> PodTemplate:
    mapping = _as_mapping(raw, path=path)
    _reject_unknown(
        mapping,
        ("containerName", "image", "labels", "resources", "env", "startupDelay"),
        path=path,
    )
    labels_raw = mapping.get("labels", {}) or {}
    labels = {
        _string(k, path=f"{path}.labels"): _string(v, path=f"{path}.labels.{k}")
        for k, v in _as_mapping(labels_raw, path=f"{path}.labels").items()
    }
    limits: dict[str, str] = {}
    requests: dict[str, str] = {}
    if "resources" in mapping:
        resources = _as_mapping(mapping["resources"], path=f"{path}.resources")
        _reject_unknown(resources, ("limits", "requests"), path=f"{path}.resources")
        for key, target in (("limits", limits), ("requests", requests)):
            section = resources.get(key, {}) or {}
            for k, v in _as_mapping(section, path=f"{path}.resources.{key}").items():
                target[k] = _quantity(v, path=f"{path}.resources.{key}.{k}")
    env: list[tuple[str, str]] = []
    for i, item in enumerate(mapping.get("env", []) or []):
        entry = _as_mapping(item, path=f"{path}.env[{i}]")
        _reject_unknown(entry, ("name", "value"), path=f"{path}.env[{i}]")
        env.append(
            (
                _string(entry.get("name"), path=f"{path}.env[{i}].name"),
                _quantity(entry.get("value"), path=f"{path}.env[{i}].value"),
            )
        )
    startup = mapping.get("startupDelay", "0s")
    template = PodTemplate(
        container_name=_string(mapping.get("containerName"), path=f"{path}.containerName"),
        image=_string(mapping.get("image"), path=f"{path}.image"),
        resource_limits=limits,
        resource_requests=requests,
        env=tuple(env),
        labels=labels,
        startup_delay_us=parse_duration(startup, path=f"{path}.startupDelay"),
    )
    template.validate()
    return template


def _parse_workload(raw: object, *, path: str) -> WorkloadSpec:
    mapping = _as_mapping(raw, path=path)
    _reject_unknown(mapping, ("name", "replicas", "template"), path=path)
    replicas = mapping.get("replicas", 1)
    if isinstance(replicas, bool) or not isinstance(replicas, int):
        raise ValidationError("replicas must be an integer", path=f"{path}.replicas")
    spec = WorkloadSpec(
        name=_string(mapping.get("name"), path=f"{path}.name"),
        replicas=replicas,
        template=_parse_template(mapping.get("template"), path=f"{path}.template"),
    )
    spec.validate()
    return spec


def _parse_dist(raw: object, *, path: str) -> DurationDist:
    mapping = _as_mapping(raw, path=path)
    keys = list(mapping)
    if keys == ["deterministic"]:
        return Deterministic(parse_duration(mapping["deterministic"], path=f"{path}.deterministic"))
    if keys == ["exponential"]:
        inner = _as_mapping(mapping["exponential"], path=f"{path}.exponential")
        _reject_unknown(inner, ("mean",), path=f"{path}.exponential")
        return Exponential(parse_duration(inner.get("mean"), path=f"{path}.exponential.mean"))
    if keys == ["uniform"]:
        inner = _as_mapping(mapping["uniform"], path=f"{path}.uniform")
        _reject_unknown(inner, ("low", "high"), path=f"{path}.uniform")
        return UniformDist(
            low_us=parse_duration(inner.get("low"), path=f"{path}.uniform.low"),
            high_us=parse_duration(inner.get("high"), path=f"{path}.uniform.high"),
        )
    raise ValidationError(
        "expected exactly one of deterministic/exponential/uniform", path=path
    )


def _parse_attacker(raw: object, *, path: str) -> AttackerConfig:
    mapping = _as_mapping(raw, path=path)
    _reject_unknown(
        mapping,
        (
            "arrival",
            "killChain",
            "retryDelay",
            "targetSelector",
            "requiresGpu",
            "repeatAfterCompletion",
        ),
        path=path,
    )
    arrival_raw = _as_mapping(mapping.get("arrival"), path=f"{path}.arrival")
    arrival_keys = list(arrival_raw)
    if arrival_keys == ["atTime"]:
        arrival = AtTime(parse_duration(arrival_raw["atTime"], path=f"{path}.arrival.atTime"))
    elif arrival_keys == ["poisson"]:
        inner = _as_mapping(arrival_raw["poisson"], path=f"{path}.arrival.poisson")
        _reject_unknown(inner, ("meanInterarrival",), path=f"{path}.arrival.poisson")
        arrival = PoissonArrival(
            parse_duration(
                inner.get("meanInterarrival"),
                path=f"{path}.arrival.poisson.meanInterarrival",
            )
        )
    else:
        raise ValidationError(
            "expected exactly one of atTime/poisson", path=f"{path}.arrival"
        )
    stages = []
    for i, item in enumerate(_as_sequence(mapping.get("killChain"), path=f"{path}.killChain")):
        entry = _as_mapping(item, path=f"{path}.killChain[{i}]")
        _reject_unknown(entry, ("name", "duration"), path=f"{path}.killChain[{i}]")
        stages.append(
            StageSpec(
                name=_string(entry.get("name"), path=f"{path}.killChain[{i}].name"),
                duration=_parse_dist(entry.get("duration"), path=f"{path}.killChain[{i}].duration"),
            )
        )
    selector = LabelSelector()
    if "targetSelector" in mapping:
        selector = parse_selector(mapping["targetSelector"], path=f"{path}.targetSelector")
    if "retryDelay" not in mapping:
        raise ValidationError("retryDelay is required", path=f"{path}.retryDelay")
    config = AttackerConfig(
        arrival=arrival,
        kill_chain=tuple(stages),
        retry_delay=_parse_dist(mapping["retryDelay"], path=f"{path}.retryDelay"),
        target_selector=selector,
        requires_gpu=bool(mapping.get("requiresGpu", False)),
        repeat_after_completion=bool(mapping.get("repeatAfterCompletion", False)),
    )
    config.validate()
    return config


def _parse_telemetry_event(raw: object, *, path: str) -> TelemetryEvent:
    mapping = _as_mapping(raw, path=path)
    raw_type = mapping.get("type")
    try:
        source = TelemetrySource(_string(raw_type, path=f"{path}.type"))
    except ValueError:
        raise ValidationError(
            f"unknown telemetry source type {raw_type!r}", path=f"{path}.type"
        ) from None
    id_key = "name" if source is TelemetrySource.PROMETHEUS_ALERT else "constraint"
    _reject_unknown(mapping, ("time", "type", id_key, "targetLabels"), path=path)
    labels_raw = mapping.get("targetLabels", {}) or {}
    labels = {
        _string(k, path=f"{path}.targetLabels"): _string(v, path=f"{path}.targetLabels.{k}")
        for k, v in _as_mapping(labels_raw, path=f"{path}.targetLabels").items()
    }
    return TelemetryEvent(
        time_us=parse_duration(mapping.get("time"), path=f"{path}.time"),
        source_kind=source,
        identifier=_string(mapping.get(id_key), path=f"{path}.{id_key}"),
        target_labels=labels,
    )


def _parse_policy_entry(raw: object, *, path: str, base_dir: Path | None, parser):
    mapping = _as_mapping(raw, path=path)
    if list(mapping) == ["file"]:
        rel = _string(mapping["file"], path=f"{path}.file")
        base = base_dir if base_dir is not None else Path.cwd()
        text = (base / rel).read_text(encoding="utf-8")
        return parser(load_yaml_document(text))
    return parser(mapping)


def load_scenario(text: str, *, base_dir: Path | None = None) -> ScenarioScript:
    """Parse and validate a scenario document.

    ``base_dir`` resolves relative policy file references; it defaults to the
    current working directory.
    """
    doc = load_yaml_document(text)
    _reject_unknown(doc, ("apiVersion", "kind", "metadata", "spec"), path="")
    if doc.get("apiVersion") != API_VERSION:
        raise ValidationError(
            f"unsupported apiVersion {doc.get('apiVersion')!r}", path="apiVersion"
        )
    if doc.get("kind") != KIND_SCENARIO:
        raise ValidationError(
            f"unexpected kind {doc.get('kind')!r} (expected {KIND_SCENARIO!r})", path="kind"
        )
    metadata = _as_mapping(doc.get("metadata"), path="metadata")
    _reject_unknown(metadata, ("name",), path="metadata")
    name = _string(metadata.get("name"), path="metadata.name")
    spec = _as_mapping(doc.get("spec"), path="spec")
    _reject_unknown(spec, _SPEC_KEYS, path="spec")

    horizon_us = parse_duration(spec.get("horizon"), path="spec.horizon")
    seed = spec.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ValidationError("seed must be an integer", path="spec.seed")
    replications = spec.get("replications", 1)
    if isinstance(replications, bool) or not isinstance(replications, int):
        raise ValidationError("replications must be an integer", path="spec.replications")

    workloads = [
        _parse_workload(raw, path=f"spec.workloads[{i}]")
        for i, raw in enumerate(_as_sequence(spec.get("workloads"), path="spec.workloads"))
    ]
    rotation_policies = [
        _parse_policy_entry(
            raw,
            path=f"spec.rotationPolicies[{i}]",
            base_dir=base_dir,
            parser=rotation_policy_from_doc,
        )
        for i, raw in enumerate(spec.get("rotationPolicies", []) or [])
    ]
    mutation_policies = [
        _parse_policy_entry(
            raw,
            path=f"spec.mutationPolicies[{i}]",
            base_dir=base_dir,
            parser=mutation_policy_from_doc,
        )
        for i, raw in enumerate(spec.get("mutationPolicies", []) or [])
    ]
    telemetry = [
        _parse_telemetry_event(raw, path=f"spec.telemetry[{i}]")
        for i, raw in enumerate(spec.get("telemetry", []) or [])
    ]
    attacker = None
    if "attacker" in spec and spec["attacker"] is not None:
        attacker = _parse_attacker(spec["attacker"], path="spec.attacker")

    ip_pool_size = spec.get("ipPoolSize", 65536)
    if isinstance(ip_pool_size, bool) or not isinstance(ip_pool_size, int):
        raise ValidationError("ipPoolSize must be an integer", path="spec.ipPoolSize")

    script = ScenarioScript(
        name=name,
        horizon_us=horizon_us,
        seed=seed,
        workloads=workloads,
        rotation_policies=rotation_policies,
        mutation_policies=mutation_policies,
        telemetry=telemetry,
        attacker=attacker,
        replications=replications,
        ada_enabled=bool(spec.get("adaEnabled", True)),
        reconcile_jitter_us=parse_duration(
            spec.get("reconcileJitter", "0s"), path="spec.reconcileJitter"
        ),
        termination_grace_us=parse_duration(
            spec.get("terminationGrace", "0s"), path="spec.terminationGrace"
        ),
        ip_pool_size=ip_pool_size,
        revert_template_on_scheduled=bool(
            spec.get("revertTemplateOnScheduledRotation", False)
        ),
        volume_remnants_survive=bool(spec.get("volumeRemnantsSurvive", False)),
    )
    script.validate()
    return script


def load_scenario_file(path: str | Path) -> ScenarioScript:
    path = Path(path)
    return load_scenario(path.read_text(encoding="utf-8"), base_dir=path.parent)


# ---------------------------------------------------------------------------
# Simulation driver
# ---------------------------------------------------------------------------


class Simulation:
    """One replication: wires cluster, controller, attacker, and telemetry."""

    def __init__(self, script: ScenarioScript, seed: int) -> None:
        self.script = script
        self.state = ClusterState(
            seed,
            ip_pool_size=script.ip_pool_size,
            termination_grace_us=script.termination_grace_us,
            horizon_us=script.horizon_us,
        )
        self.config = ControllerConfig(
            rotation_policies=script.rotation_policies,
            mutation_policies=script.mutation_policies,
            reconcile_jitter_us=script.reconcile_jitter_us,
        )
        self.attacker: Attacker | None = None
        if script.attacker is not None:
            attacker_rng = Random((seed ^ _ATTACKER_SEED_SALT) & (2**63 - 1))
            self.attacker = Attacker(
                script.attacker,
                self.state,
                attacker_rng,
                volume_remnants_survive=script.volume_remnants_survive,
            )
        self._deferred: list[RotationDecision] = []
        self._wake_generation = 0

    def run(self) -> ClusterState:
        state = self.state
        for workload in self.script.workloads:
            state.add_workload(workload)
            for _ in range(workload.replicas):
                state.spawn_pod(workload.name, initial=True)
        for event in self.script.telemetry:
            state.schedule(event.time_us, self._telemetry_action(event))
        if self.attacker is not None:
            self.attacker.start()
        if self.script.ada_enabled:
            self._reschedule_wake()
        state.run_until(self.script.horizon_us)
        return state

    # -- controller wiring ---------------------------------------------------

    def _telemetry_action(self, event: TelemetryEvent):
        def fire() -> None:
            state = self.state
            state.log_event(
                EventKind.TELEMETRY_RECEIVED,
                event.identifier,
                {
                    "source_kind": event.source_kind.value,
                    "identifier": event.identifier,
                    "target_labels": ",".join(
                        f"{k}={v}" for k, v in sorted(event.target_labels.items())
                    ),
                },
            )
            if not self.script.ada_enabled:
                return
            decisions = handle_telemetry_event(self.config, state, event)
            for decision in decisions:
                self._execute_or_defer(decision)

        return fire

    def _reschedule_wake(self) -> None:
        self._wake_generation += 1
        generation = self._wake_generation
        decision = next_due_rotation(self.config, self.state)
        if decision is None:
            return
        at = decision.due_at_us + self.config.reconcile_jitter_us
        self.state.schedule(max(at, self.state.clock), lambda: self._on_wake(generation))

    def _on_wake(self, generation: int) -> None:
        if generation != self._wake_generation:
            return  # superseded by a later reschedule
        if self.state.replacement_in_progress:
            # Every pass ends inside _run_rotation, which re-derives the next
            # due rotation, so a wake that lands mid-pass can simply drop.
            return
        decision = next_due_rotation(self.config, self.state)
        if (
            decision is not None
            and decision.due_at_us + self.config.reconcile_jitter_us <= self.state.clock
        ):
            self._run_rotation(decision)
        else:
            self._reschedule_wake()

    def _execute_or_defer(self, decision: RotationDecision) -> None:
        if self.state.replacement_in_progress:
            self._deferred.append(decision)
        else:
            self._run_rotation(decision)

    def _run_rotation(self, decision: RotationDecision) -> None:
        template = None
        if (
            self.script.revert_template_on_scheduled
            and decision.cause is RotationCause.SCHEDULED_INTERVAL
        ):
            template = self.state.original_templates[decision.workload]
        execute_rotation(self.config, self.state, decision, template=template)
        while self._deferred:
            execute_rotation(self.config, self.state, self._deferred.pop(0))
        self._reschedule_wake()


def run(script: ScenarioScript) -> list[tuple[list[dict], metrics_mod.MetricsReport]]:
    """Execute every replication; replication r uses seed script.seed + r.

    Returns one (event log records, report) pair per replication, in order.
    """
    results = []
    for r in range(script.replications):
        sim = Simulation(script, script.seed + r)
        state = sim.run()
        records = state.log_records()
        report = metrics_mod.compute_report(records, script)
        results.append((records, report))
    return results
