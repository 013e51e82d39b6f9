"""Resource allocation: the probability-maximizing method with its
confidence-interval overlap gate, plus the MECT, MCC, and no-federation
baselines.

All methods see the same load signal: a deterministic expected queue wait
per fog (backlog mean divided by node count).  The probability-based
method shifts completion PMFs by that wait; the mean-based baselines add
the same scalar to their expected completions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .dist import (
    CiInterval,
    central_ci,
    ci_disjoint,
    convolve,
    mean,
    prob_on_time,
    shift,
)
from .federation import EtcMatrix, EttMatrix, FederationTopology, hop_distance
from .model import WorkflowSpec, topological_order
from .partition import EtcSuccessEstimator, PartitionPlan

REASONS = (
    "local_default",
    "local_higher_p",
    "remote_ci_disjoint",
    "forced_local_pinned",
    "min_expected_completion",
    "max_certainty",
    "local_no_positive_certainty",
)


@dataclass(frozen=True, eq=False)
class QueueEstimate:
    """Expected wait in ms per fog before a new task reaches a node."""

    waits: dict[int, float]

    def __post_init__(self) -> None:
        for fog, w in self.waits.items():
            if w < 0:
                raise ValueError(f"negative queue wait for fog {fog}")

    def wait(self, fog_id: int) -> float:
        return self.waits.get(fog_id, 0.0)


@dataclass(frozen=True, eq=False)
class CandidateRecord:
    """One examined fog: bookkeeping for traces and contract checks."""

    fog: int
    hops: int
    mean_ms: float
    p: float = math.nan
    ci: "CiInterval | None" = None
    in_f: bool = False
    blocked: bool = False
    certainty: float = math.nan


@dataclass(frozen=True, eq=False)
class AllocationDecision:
    method: str
    partition_index: int
    local_fog: int
    chosen: int
    reason: str
    candidates: tuple[CandidateRecord, ...]

    def __post_init__(self) -> None:
        if self.reason not in REASONS:
            raise ValueError(f"unknown reason {self.reason!r}")


class CompletionModel:
    """Caches load-independent completion PMFs.

    Chain PMFs, end-to-end (chain plus transfer) PMFs, and mean sums are
    all memoized, so per-decision work reduces to a queue shift and a few
    CDF lookups.
    """

    def __init__(self, etc: EtcMatrix, ett: "EttMatrix | None" = None):
        self.etc = etc
        self.ett = ett
        self.estimator = EtcSuccessEstimator(etc)
        self._e2e: dict = {}
        self._mean_sums: dict = {}

    def chain(self, types: tuple[str, ...], fog_id: int):
        return self.estimator.chain_pmf(types, fog_id)

    def end_to_end(self, types: tuple[str, ...], fog_id: int, hops: int):
        """Chain on ``fog_id`` plus the entry payload transfer over ``hops``."""
        if hops == 0:
            return self.chain(types, fog_id)
        if self.ett is None:
            raise ValueError("transfer matrix required for remote estimates")
        key = (types, fog_id, hops)
        hit = self._e2e.get(key)
        if hit is None:
            hit = convolve(
                self.chain(types, fog_id), self.ett.pmf(types[0], hops)
            )
            self._e2e[key] = hit
        return hit

    def mean_exec_sum(self, types: tuple[str, ...], fog_id: int) -> float:
        key = (types, fog_id)
        hit = self._mean_sums.get(key)
        if hit is None:
            hit = sum(self.etc.pmf(t, fog_id).mean for t in types)
            self._mean_sums[key] = hit
        return hit


def _unit_types(unit: WorkflowSpec) -> tuple[str, ...]:
    return tuple(topological_order(unit))


def allocate_mr(
    plan: PartitionPlan,
    local: int,
    topo: FederationTopology,
    etc: EtcMatrix,
    ett: EttMatrix,
    queues: QueueEstimate,
    deadlines_rel: tuple[float, ...],
    ci_level: float = 0.95,
    model: "CompletionModel | None" = None,
) -> list[AllocationDecision]:
    """Walk the partitions in precedence order, assigning each a fog.

    Per partition: the local completion PMF (no transfer term) is compared
    against each adjacent fog's end-to-end PMF (chain plus entry payload
    transfer from the previous partition's fog, plus the candidate's queue
    wait).  Fogs beating the local on-time probability are examined in
    descending order; the first whose confidence interval is disjoint from
    the local one wins, otherwise the partition stays local.
    """
    if len(deadlines_rel) != len(plan.partitions):
        raise ValueError("one deadline per partition required")
    m = model if model is not None else CompletionModel(etc, ett)
    decisions: list[AllocationDecision] = []
    origin = local
    for idx, part in enumerate(plan.partitions):
        delta = deadlines_rel[idx]
        types = _unit_types(part)
        if plan.must_run_local[idx]:
            e_r = shift(m.chain(types, local), queues.wait(local))
            rec = CandidateRecord(
                fog=local,
                hops=0,
                mean_ms=mean(e_r),
                p=prob_on_time(e_r, delta),
                ci=central_ci(e_r, ci_level),
            )
            decisions.append(
                AllocationDecision(
                    "mr", idx, local, local, "forced_local_pinned", (rec,)
                )
            )
            origin = local
            continue
        e_r = shift(m.chain(types, local), queues.wait(local))
        p_r = prob_on_time(e_r, delta)
        ci_r = central_ci(e_r, ci_level)
        local_rec = CandidateRecord(
            fog=local, hops=0, mean_ms=mean(e_r), p=p_r, ci=ci_r
        )
        neighbors = topo.neighbors(local)
        remote_info = []
        for g in neighbors:
            hops = hop_distance(topo, origin, g)
            e_g = shift(m.end_to_end(types, g, hops), queues.wait(g))
            p_g = prob_on_time(e_g, delta)
            remote_info.append(
                {
                    "fog": g,
                    "hops": hops,
                    "mean": mean(e_g),
                    "p": p_g,
                    "ci": central_ci(e_g, ci_level),
                    "in_f": p_g > p_r,
                    "blocked": False,
                }
            )
        chosen = local
        reason = "local_default" if not neighbors else "local_higher_p"
        f_ordered = sorted(
            (r for r in remote_info if r["in_f"]),
            key=lambda r: (-r["p"], r["fog"]),
        )
        for r in f_ordered:
            if ci_disjoint(r["ci"], ci_r):
                chosen = r["fog"]
                reason = "remote_ci_disjoint"
                break
            r["blocked"] = True
        records = [local_rec] + [
            CandidateRecord(
                fog=r["fog"],
                hops=r["hops"],
                mean_ms=r["mean"],
                p=r["p"],
                ci=r["ci"],
                in_f=r["in_f"],
                blocked=r["blocked"],
            )
            for r in remote_info
        ]
        decisions.append(
            AllocationDecision("mr", idx, local, chosen, reason, tuple(records))
        )
        origin = chosen
    return decisions


def allocate_mect(
    unit: WorkflowSpec,
    local: int,
    topo: FederationTopology,
    etc: EtcMatrix,
    queues: QueueEstimate,
    *,
    pinned: bool = False,
    partition_index: int = 0,
    model: "CompletionModel | None" = None,
) -> AllocationDecision:
    """Minimum expected completion: queue wait plus chain exec means.

    Communication costs are invisible to this method; ties prefer local,
    then the lower fog id.
    """
    m = model if model is not None else CompletionModel(etc)
    types = _unit_types(unit)
    if pinned:
        rec = CandidateRecord(
            fog=local,
            hops=0,
            mean_ms=queues.wait(local) + m.mean_exec_sum(types, local),
        )
        return AllocationDecision(
            "mect", partition_index, local, local, "forced_local_pinned", (rec,)
        )
    order = [local, *topo.neighbors(local)]
    records = []
    best_fog, best_ms = local, math.inf
    for g in order:
        ms = queues.wait(g) + m.mean_exec_sum(types, g)
        records.append(CandidateRecord(fog=g, hops=0 if g == local else 1,
                                       mean_ms=ms))
        if ms < best_ms:
            best_fog, best_ms = g, ms
    reason = "local_default" if best_fog == local else "min_expected_completion"
    return AllocationDecision(
        "mect", partition_index, local, best_fog, reason, tuple(records)
    )


def allocate_mcc(
    unit: WorkflowSpec,
    local: int,
    topo: FederationTopology,
    etc: EtcMatrix,
    queues: QueueEstimate,
    deadline_rel: float,
    *,
    pinned: bool = False,
    partition_index: int = 0,
    model: "CompletionModel | None" = None,
) -> AllocationDecision:
    """Maximum completion certainty: deadline headroom over the ETC mean.

    Certainty is the deadline minus the fog's mean execution estimate, so
    the ranking always names the fastest viable rating and keeps piling
    work on that one fog.  The single top-ranked fog then gets one sanity
    check against its backlog; if even it cannot promise completion the
    unit stays local rather than trying the runner-up.  Ties prefer local,
    then the lower fog id.
    """
    m = model if model is not None else CompletionModel(etc)
    types = _unit_types(unit)
    if pinned:
        exec_ms = m.mean_exec_sum(types, local)
        rec = CandidateRecord(
            fog=local,
            hops=0,
            mean_ms=queues.wait(local) + exec_ms,
            certainty=deadline_rel - exec_ms,
        )
        return AllocationDecision(
            "mcc", partition_index, local, local, "forced_local_pinned", (rec,)
        )
    order = [local, *topo.neighbors(local)]
    records = []
    best_fog, best_c, best_ms = None, -math.inf, math.inf
    for g in order:
        exec_ms = m.mean_exec_sum(types, g)
        ms = queues.wait(g) + exec_ms
        c = deadline_rel - exec_ms
        records.append(
            CandidateRecord(
                fog=g, hops=0 if g == local else 1, mean_ms=ms, certainty=c
            )
        )
        if c > 0 and c > best_c:
            best_fog, best_c, best_ms = g, c, ms
    if best_fog is None or deadline_rel - best_ms <= 0:
        return AllocationDecision(
            "mcc",
            partition_index,
            local,
            local,
            "local_no_positive_certainty",
            tuple(records),
        )
    reason = "local_default" if best_fog == local else "max_certainty"
    return AllocationDecision(
        "mcc", partition_index, local, best_fog, reason, tuple(records)
    )


def allocate_no_federation(
    unit: WorkflowSpec,
    local: int,
    *,
    etc: "EtcMatrix | None" = None,
    queues: "QueueEstimate | None" = None,
    partition_index: int = 0,
    model: "CompletionModel | None" = None,
) -> AllocationDecision:
    """Everything runs where it arrived."""
    ms = math.nan
    if etc is not None or model is not None:
        m = model if model is not None else CompletionModel(etc)
        wait = queues.wait(local) if queues is not None else 0.0
        ms = wait + m.mean_exec_sum(_unit_types(unit), local)
    rec = CandidateRecord(fog=local, hops=0, mean_ms=ms)
    return AllocationDecision(
        "nofed", partition_index, local, local, "local_default", (rec,)
    )


def validate_mr_decision(d: AllocationDecision) -> list[str]:
    """Re-check the allocation contract from the logged records."""
    issues: list[str] = []
    if d.method != "mr":
        return issues
    local_recs = [r for r in d.candidates if r.fog == d.local_fog]
    if len(local_recs) != 1:
        return ["decision log missing the local record"]
    local = local_recs[0]
    remotes = [r for r in d.candidates if r.fog != d.local_fog]
    if d.reason == "forced_local_pinned":
        if d.chosen != d.local_fog:
            issues.append("pinned partition assigned remotely")
        return issues
    for r in remotes:
        if r.in_f != (r.p > local.p):
            issues.append(f"fog {r.fog} F-membership mislabeled")
    if d.reason == "remote_ci_disjoint":
        winner = [r for r in remotes if r.fog == d.chosen]
        if not winner:
            return ["chosen fog missing from the log"]
        win = winner[0]
        if not win.p > local.p:
            issues.append("remote assignment without a probability gain")
        if win.ci is None or local.ci is None or not ci_disjoint(win.ci, local.ci):
            issues.append("remote assignment with overlapping intervals")
        for r in remotes:
            better = r.p > win.p or (r.p == win.p and r.fog < win.fog)
            if r.in_f and better and not r.blocked:
                issues.append("candidate order skipped a higher probability")
    else:
        if d.chosen != d.local_fog:
            issues.append(f"local reason {d.reason!r} but chosen remotely")
        for r in remotes:
            if r.in_f and not r.blocked:
                issues.append("qualifying candidate never examined")
    return issues
