"""Security and service metrics computed from event logs.

Everything here is a pure function of (log records, scenario script);
recomputation always yields an identical report. Definitions:

* TTE (time-to-evict): pod lifetime for pods terminated by a scheduled
  rotation; the target value is the rotation interval.
* Dwell: attacker time on a pod from compromise to disruption or objective
  completion, from the adversary events.
* Availability: time-weighted fraction of the horizon during which the ready
  pod count is at least the replica count, per workload; the aggregate is the
  fraction of the horizon where every workload is fully ready.
* Churn: rotations per simulated hour, the resource-overhead proxy.
* p95 is nearest-rank on the sorted samples.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .durations import US_PER_HOUR
from .errors import IncompatibleReports, MalformedLog

_POD_EVENTS = ("PodCreated", "PodReady", "PodTerminating", "PodTerminated")


@dataclass(frozen=True)
class StatBlock:
    count: int
    mean_us: float | None
    min_us: int | None
    max_us: int | None
    p95_us: int | None

    def to_doc(self) -> dict:
        return {
            "count": self.count,
            "mean_us": self.mean_us,
            "min_us": self.min_us,
            "max_us": self.max_us,
            "p95_us": self.p95_us,
        }


@dataclass(frozen=True)
class KillChainStats:
    attempts: int
    established: int
    disruptions: int
    completions: int
    completion_rate: float | None

    def to_doc(self) -> dict:
        return {
            "attempts": self.attempts,
            "established": self.established,
            "disruptions": self.disruptions,
            "completions": self.completions,
            "completion_rate": self.completion_rate,
        }


@dataclass(frozen=True)
class MetricsReport:
    tte: StatBlock
    dwell: StatBlock
    kill_chain: KillChainStats
    availability: float
    availability_by_workload: Mapping[str, float]
    max_zero_ready_gap_us: int
    rotation_count: int
    mutation_count: int
    controller_action_count: int
    churn_rate_per_hour: float
    effort_ratio: float | None = None
    tte_samples_us: tuple[int, ...] = field(default=(), repr=False)
    dwell_samples_us: tuple[int, ...] = field(default=(), repr=False)

    def to_doc(self) -> dict:
        return {
            "tte": self.tte.to_doc(),
            "dwell": self.dwell.to_doc(),
            "kill_chain": self.kill_chain.to_doc(),
            "availability": self.availability,
            "availability_by_workload": dict(self.availability_by_workload),
            "max_zero_ready_gap_us": self.max_zero_ready_gap_us,
            "rotation_count": self.rotation_count,
            "mutation_count": self.mutation_count,
            "controller_action_count": self.controller_action_count,
            "churn_rate_per_hour": self.churn_rate_per_hour,
            "effort_ratio": self.effort_ratio,
        }


def nearest_rank_p95(sorted_samples: Sequence[int]) -> int | None:
    if not sorted_samples:
        return None
    rank = math.ceil(0.95 * len(sorted_samples))
    return sorted_samples[rank - 1]


def stat_block(samples: Iterable[int]) -> StatBlock:
    ordered = sorted(samples)
    if not ordered:
        return StatBlock(count=0, mean_us=None, min_us=None, max_us=None, p95_us=None)
    return StatBlock(
        count=len(ordered),
        mean_us=sum(ordered) / len(ordered),
        min_us=ordered[0],
        max_us=ordered[-1],
        p95_us=nearest_rank_p95(ordered),
    )


# ---------------------------------------------------------------------------
# Log validation and extraction
# ---------------------------------------------------------------------------


def _check_log(records: Sequence[Mapping]) -> None:
    last_key = (-1, -1)
    created: set[str] = set()
    terminated: set[str] = set()
    for rec in records:
        for fld in ("time_us", "seq", "kind", "subject", "detail"):
            if fld not in rec:
                raise MalformedLog(f"record missing field {fld!r}: {rec!r}")
        key = (rec["time_us"], rec["seq"])
        if key <= last_key:
            raise MalformedLog(f"log not sorted by (time_us, seq) at {rec!r}")
        last_key = key
        kind = rec["kind"]
        subject = rec["subject"]
        if kind == "PodCreated":
            if subject in created:
                raise MalformedLog(f"pod {subject} created twice")
            created.add(subject)
        elif kind in ("PodReady", "PodTerminating", "PodTerminated"):
            if subject not in created:
                raise MalformedLog(f"{kind} for unknown pod {subject}")
            if subject in terminated:
                raise MalformedLog(f"{kind} for terminated pod {subject}")
            if kind == "PodTerminated":
                terminated.add(subject)


def _availability(
    records: Sequence[Mapping], workload: str, replicas: int, horizon_us: int
) -> tuple[float, int]:
    """(availability, max zero-ready gap) for one workload.

    Replays the ready-count step function; readiness spans
    [PodReady, PodTerminated).
    """
    ready_uids = {r["subject"] for r in records if r["kind"] == "PodReady"}
    deltas: list[tuple[int, int, int]] = []
    for rec in records:
        if rec["kind"] == "PodReady" and rec["detail"].get("workload") == workload:
            deltas.append((rec["time_us"], rec["seq"], 1))
        elif rec["kind"] == "PodTerminated" and rec["detail"].get("workload") == workload:
            # Pods that never became ready do not change the ready count.
            if rec["subject"] in ready_uids:
                deltas.append((rec["time_us"], rec["seq"], -1))
    ready = 0
    prev_time = 0
    available_us = 0
    zero_gap_start: int | None = 0
    max_zero_gap = 0
    for time_us, _, delta in deltas:
        span_end = min(time_us, horizon_us)
        if span_end > prev_time:
            if ready >= replicas:
                available_us += span_end - prev_time
            if ready == 0 and zero_gap_start is not None:
                max_zero_gap = max(max_zero_gap, span_end - zero_gap_start)
        if time_us > horizon_us:
            break
        new_ready = ready + delta
        if new_ready == 0 and ready > 0:
            zero_gap_start = time_us
        elif new_ready > 0:
            zero_gap_start = None
        ready = new_ready
        prev_time = max(prev_time, min(time_us, horizon_us))
    if horizon_us > prev_time:
        if ready >= replicas:
            available_us += horizon_us - prev_time
        if ready == 0 and zero_gap_start is not None:
            max_zero_gap = max(max_zero_gap, horizon_us - zero_gap_start)
    return available_us / horizon_us, max_zero_gap


def _aggregate_availability(
    records: Sequence[Mapping], replicas_by_workload: Mapping[str, int], horizon_us: int
) -> float:
    """Fraction of the horizon where every workload is at full readiness."""
    ready = {name: 0 for name in replicas_by_workload}
    ready_uids = {r["subject"] for r in records if r["kind"] == "PodReady"}
    deltas: list[tuple[int, int, str, int]] = []
    for rec in records:
        workload = rec["detail"].get("workload")
        if workload not in ready:
            continue
        if rec["kind"] == "PodReady":
            deltas.append((rec["time_us"], rec["seq"], workload, 1))
        elif rec["kind"] == "PodTerminated" and rec["subject"] in ready_uids:
            deltas.append((rec["time_us"], rec["seq"], workload, -1))
    prev_time = 0
    available_us = 0

    def all_ready() -> bool:
        return all(ready[name] >= replicas_by_workload[name] for name in ready)

    for time_us, _, workload, delta in deltas:
        span_end = min(time_us, horizon_us)
        if span_end > prev_time and all_ready():
            available_us += span_end - prev_time
        if time_us > horizon_us:
            break
        ready[workload] += delta
        prev_time = max(prev_time, min(time_us, horizon_us))
    if horizon_us > prev_time and all_ready():
        available_us += horizon_us - prev_time
    return available_us / horizon_us


def compute_report(records: Sequence[Mapping], script) -> MetricsReport:
    """Build the full metric suite for one replication's event log."""
    _check_log(records)
    horizon_us = script.horizon_us

    tte_samples = []
    for rec in records:
        if rec["kind"] == "PodTerminated" and rec["detail"].get("cause") == "ScheduledInterval":
            tte_samples.append(int(rec["detail"]["lifetime_us"]))

    dwell_samples = []
    attempts = established = disruptions = completions = 0
    for rec in records:
        kind = rec["kind"]
        if kind == "CompromiseAttempted":
            attempts += 1
            if rec["detail"].get("outcome") == "established":
                established += 1
        elif kind == "CompromiseDisrupted":
            disruptions += 1
            dwell_samples.append(int(rec["detail"]["dwell_us"]))
        elif kind == "KillChainCompleted":
            completions += 1
            dwell_samples.append(int(rec["detail"]["dwell_us"]))

    rotation_count = sum(1 for r in records if r["kind"] == "RotationTriggered")
    mutation_count = sum(1 for r in records if r["kind"] == "MutationTriggered")
    template_mutations = sum(1 for r in records if r["kind"] == "TemplateMutated")

    replicas_by_workload = {w.name: w.replicas for w in script.workloads}
    availability_by_workload = {}
    max_zero_gap = 0
    for name, replicas in replicas_by_workload.items():
        avail, gap = _availability(records, name, replicas, horizon_us)
        availability_by_workload[name] = avail
        max_zero_gap = max(max_zero_gap, gap)
    if len(replicas_by_workload) == 1:
        aggregate_availability = next(iter(availability_by_workload.values()))
    else:
        aggregate_availability = _aggregate_availability(
            records, replicas_by_workload, horizon_us
        )

    return MetricsReport(
        tte=stat_block(tte_samples),
        dwell=stat_block(dwell_samples),
        kill_chain=KillChainStats(
            attempts=attempts,
            established=established,
            disruptions=disruptions,
            completions=completions,
            completion_rate=(completions / attempts) if attempts > 0 else None,
        ),
        availability=aggregate_availability,
        availability_by_workload=availability_by_workload,
        max_zero_ready_gap_us=max_zero_gap,
        rotation_count=rotation_count,
        mutation_count=mutation_count,
        controller_action_count=rotation_count + mutation_count + template_mutations,
        churn_rate_per_hour=rotation_count / (horizon_us / US_PER_HOUR),
        tte_samples_us=tuple(tte_samples),
        dwell_samples_us=tuple(dwell_samples),
    )


# ---------------------------------------------------------------------------
# Aggregation across replications
# ---------------------------------------------------------------------------


def _mean_halfwidth(values: Sequence[float]) -> dict:
    """Mean with normal-approximation 95% half-width across replications."""
    clean = [v for v in values if v is not None]
    if not clean:
        return {"mean": None, "halfwidth95": None, "n": 0}
    mean = sum(clean) / len(clean)
    if len(clean) < 2:
        return {"mean": mean, "halfwidth95": None, "n": len(clean)}
    var = sum((v - mean) ** 2 for v in clean) / (len(clean) - 1)
    half = 1.96 * math.sqrt(var / len(clean))
    return {"mean": mean, "halfwidth95": half, "n": len(clean)}


def aggregate_report(script, reports: Sequence[MetricsReport]) -> dict:
    """Pool per-replication reports into one aggregate document."""
    pooled_tte = [s for r in reports for s in r.tte_samples_us]
    pooled_dwell = [s for r in reports for s in r.dwell_samples_us]
    attempts = sum(r.kill_chain.attempts for r in reports)
    established = sum(r.kill_chain.established for r in reports)
    disruptions = sum(r.kill_chain.disruptions for r in reports)
    completions = sum(r.kill_chain.completions for r in reports)
    return {
        "scenario": script.name,
        "seed": script.seed,
        "replications": script.replications,
        "horizon_us": script.horizon_us,
        "ada_enabled": script.ada_enabled,
        "workloads": {w.name: w.replicas for w in script.workloads},
        "tte_pooled": stat_block(pooled_tte).to_doc(),
        "dwell_pooled": stat_block(pooled_dwell).to_doc(),
        "kill_chain_pooled": {
            "attempts": attempts,
            "established": established,
            "disruptions": disruptions,
            "completions": completions,
            "completion_rate": (completions / attempts) if attempts else None,
            "resolved_completion_rate": (
                completions / (completions + disruptions)
                if (completions + disruptions)
                else None
            ),
        },
        "availability": _mean_halfwidth([r.availability for r in reports]),
        "rotation_count": _mean_halfwidth([r.rotation_count for r in reports]),
        "mutation_count": _mean_halfwidth([r.mutation_count for r in reports]),
        "controller_action_count": _mean_halfwidth(
            [r.controller_action_count for r in reports]
        ),
        "churn_rate_per_hour": _mean_halfwidth([r.churn_rate_per_hour for r in reports]),
        "max_zero_ready_gap_us": _mean_halfwidth(
            [r.max_zero_ready_gap_us for r in reports]
        ),
        "per_replication": [r.to_doc() for r in reports],
    }


def compare(with_ada: Mapping, baseline: Mapping) -> dict:
    """Compare two aggregate report documents from the same scenario.

    The first argument is the candidate (defense on), the second the
    baseline. The effort ratio is attempts-per-completion of the candidate
    over attempts-per-completion of the baseline; it is null when either side
    has zero completions, in which case the raw counts still tell the story.
    """
    for fld in ("scenario", "horizon_us", "replications", "workloads"):
        if with_ada.get(fld) != baseline.get(fld):
            raise IncompatibleReports(
                f"reports disagree on {fld}: "
                f"{with_ada.get(fld)!r} vs {baseline.get(fld)!r}"
            )
    kc_a = with_ada["kill_chain_pooled"]
    kc_b = baseline["kill_chain_pooled"]
    rate_a = kc_a["completion_rate"]
    rate_b = kc_b["completion_rate"]
    reduction_abs = None
    reduction_rel = None
    if rate_a is not None and rate_b is not None:
        reduction_abs = rate_b - rate_a
        reduction_rel = (reduction_abs / rate_b) if rate_b > 0 else None
    effort_ratio = None
    if kc_a["completions"] > 0 and kc_b["completions"] > 0:
        per_completion_a = kc_a["attempts"] / kc_a["completions"]
        per_completion_b = kc_b["attempts"] / kc_b["completions"]
        effort_ratio = per_completion_a / per_completion_b if per_completion_b else None
    avail_a = with_ada["availability"]["mean"]
    avail_b = baseline["availability"]["mean"]
    churn_a = with_ada["churn_rate_per_hour"]["mean"]
    churn_b = baseline["churn_rate_per_hour"]["mean"]
    return {
        "scenario": with_ada["scenario"],
        "completion_rate_with_ada": rate_a,
        "completion_rate_baseline": rate_b,
        "completion_rate_reduction_abs": reduction_abs,
        "completion_rate_reduction_rel": reduction_rel,
        "effort_ratio": effort_ratio,
        "attempts_with_ada": kc_a["attempts"],
        "attempts_baseline": kc_b["attempts"],
        "disruptions_with_ada": kc_a["disruptions"],
        "disruptions_baseline": kc_b["disruptions"],
        "availability_delta": (
            avail_a - avail_b if avail_a is not None and avail_b is not None else None
        ),
        "churn_overhead_per_hour": (
            churn_a - churn_b if churn_a is not None and churn_b is not None else None
        ),
    }


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

_CSV_COLUMNS = (
    "replication",
    "seed",
    "tte_count",
    "tte_mean_us",
    "tte_min_us",
    "tte_max_us",
    "tte_p95_us",
    "dwell_count",
    "dwell_mean_us",
    "dwell_min_us",
    "dwell_max_us",
    "dwell_p95_us",
    "attempts",
    "established",
    "disruptions",
    "completions",
    "completion_rate",
    "availability",
    "max_zero_ready_gap_us",
    "rotation_count",
    "mutation_count",
    "controller_action_count",
    "churn_rate_per_hour",
)


def reports_to_csv(script, reports: Sequence[MetricsReport]) -> str:
    """Flat tabular export, one row per replication."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for i, r in enumerate(reports):
        writer.writerow(
            [
                i,
                script.seed + i,
                r.tte.count,
                r.tte.mean_us,
                r.tte.min_us,
                r.tte.max_us,
                r.tte.p95_us,
                r.dwell.count,
                r.dwell.mean_us,
                r.dwell.min_us,
                r.dwell.max_us,
                r.dwell.p95_us,
                r.kill_chain.attempts,
                r.kill_chain.established,
                r.kill_chain.disruptions,
                r.kill_chain.completions,
                r.kill_chain.completion_rate,
                r.availability,
                r.max_zero_ready_gap_us,
                r.rotation_count,
                r.mutation_count,
                r.controller_action_count,
                r.churn_rate_per_hour,
            ]
        )
    return out.getvalue()


def report_to_json(doc: Mapping) -> str:
    return json.dumps(doc, indent=2) + "\n"
