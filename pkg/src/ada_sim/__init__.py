"""ada-sim: deterministic moving-target-defense simulator and policy engine.

Scheduled pod rotation plus telemetry-triggered manifest mutation, measured
against a configurable attacker kill-chain model at desk scale.
"""

from .adversary import (
    Attacker,
    AttackerConfig,
    AttackerState,
    AtTime,
    Deterministic,
    Exponential,
    PoissonArrival,
    StageSpec,
    UniformDist,
)
from .cluster import (
    ClusterEvent,
    ClusterState,
    EventKind,
    PodInstance,
    PodPhase,
    PodTemplate,
    WorkloadSpec,
)
from .controller import (
    ControllerConfig,
    RotationCause,
    RotationDecision,
    apply_mutations,
    execute_rotation,
    handle_telemetry_event,
    next_due_rotation,
)
from .errors import (
    ContainerMismatch,
    DocumentSyntaxError,
    IncompatibleReports,
    IpPoolExhausted,
    MalformedLog,
    SimError,
    UnknownPod,
    UnknownWorkload,
    ValidationError,
)
from .metrics import MetricsReport, aggregate_report, compare, compute_report
from .policy import (
    ContainerImageUpdate,
    ContextMutationPolicy,
    EnvPatch,
    LabelSelector,
    MutationSpec,
    ResourceAdjustment,
    RotationPolicy,
    Strategy,
    TelemetrySource,
    TriggerSpec,
    parse_mutation_policy,
    parse_policy,
    parse_rotation_policy,
    selector_matches,
    serialize_mutation_policy,
    serialize_rotation_policy,
    trigger_fires,
)
from .scenario import ScenarioScript, Simulation, TelemetryEvent, load_scenario, run

__version__ = "0.1.0"
