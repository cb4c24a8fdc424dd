"""Event-driven simulation of the bearer-instantiation message flow.

Every network entity (UE, eNB, MME, HSS, SGW, PGW) is modeled as an
egalitarian processor-sharing server: with k jobs in service each job
receives capacity C/k.  The engine uses the exact virtual-time
construction -- the server's virtual clock advances at rate C/k, and a
job of size ``work`` entering at virtual time V finishes at virtual time
V + work -- so completion instants carry no time-discretization error.

A bearer request walks an ordered list of message hops.  Hop n+1 enters
its entity's server the moment hop n completes, except for one optional
"marked" hop (the radio-connection release toward the device) which is
dispatched concurrently when its predecessor completes; the request is
complete when both the sequential chain and the marked hop have
finished.

``single_job_mode`` collapses the whole procedure into one deterministic
job at the MME plus a constant offset, which is the exact simulation
counterpart of the analytic delay model in :mod:`miotcore.delay`.
"""

import csv
import heapq
import itertools
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .delay import EntityProfile

_WORK_TOL = 1e-9
_LINK_ENTITY = "link"

_DEFAULT_HOP_PLAN = (
    ("UE", "attach_request"),
    ("eNB", "attach_forward"),
    ("MME", "attach_processing"),
    ("HSS", "auth_vectors"),
    ("MME", "auth_check"),
    ("UE", "auth_response"),
    ("MME", "security_setup"),
    ("MME", "identity_check"),
    ("SGW", "session_create"),
    ("PGW", "session_create"),
    ("SGW", "session_confirm"),
    ("MME", "session_complete"),
    ("eNB", "bearer_setup"),
    ("MME", "bearer_confirm"),
    ("MME", "data_notify"),
    ("SGW", "data_forward"),
    ("MME", "data_complete"),
    ("MME", "bearer_release"),
    ("UE", "rrc_connection_release"),
)


@dataclass(frozen=True)
class MessageHop:
    """One control message: processed at ``entity``, costing ``work`` operations."""

    entity: str
    work: float
    tag: str = ""

    def __post_init__(self):
        if not self.entity:
            raise ConfigurationError("hop entity must be a non-empty name")
        if not (self.work > 0.0):
            raise ConfigurationError(
                f"hop work must be positive, got {self.work!r} for entity {self.entity!r}"
            )


@dataclass(frozen=True)
class ProcedureTemplate:
    """Ordered message hops of one bearer instantiation.

    ``marked_index`` names the single out-of-band hop that does not block
    the sequential chain: it is dispatched when its predecessor in the
    ordered list completes, runs concurrently with the remainder of the
    chain, and only the request completion time waits for it.
    """

    hops: tuple
    marked_index: Optional[int] = None

    def __post_init__(self):
        hops = tuple(self.hops)
        object.__setattr__(self, "hops", hops)
        if not hops:
            raise ConfigurationError("procedure template must contain at least one hop")
        for hop in hops:
            if not isinstance(hop, MessageHop):
                raise ConfigurationError("template hops must be MessageHop instances")
        if self.marked_index is not None:
            idx = int(self.marked_index)
            if not 0 <= idx < len(hops):
                raise ConfigurationError(
                    f"marked_index {self.marked_index} out of range for {len(hops)} hops"
                )
            object.__setattr__(self, "marked_index", idx)

    @property
    def n_hops(self):
        return len(self.hops)

    def entities(self):
        """Entity names appearing in the template, in first-appearance order."""
        seen = []
        for hop in self.hops:
            if hop.entity not in seen:
                seen.append(hop.entity)
        return tuple(seen)

    def work_by_entity(self):
        totals = {}
        for hop in self.hops:
            totals[hop.entity] = totals.get(hop.entity, 0.0) + hop.work
        return totals

    def validate_against(self, profiles):
        """Check per-entity hop work sums against the entity profiles.

        For every entity appearing in the template there must be a profile,
        and the sum of hop works at that entity must equal the profile's
        ops_per_bearer to within a 1e-9 relative tolerance.
        """
        by_name = {}
        for prof in profiles:
            if prof.entity in by_name:
                raise ConfigurationError(f"duplicate profile for entity {prof.entity!r}")
            by_name[prof.entity] = prof
        for entity, total in self.work_by_entity().items():
            if entity not in by_name:
                raise ConfigurationError(
                    f"template references entity {entity!r} with no profile"
                )
            expected = by_name[entity].ops_per_bearer
            if abs(total - expected) > _WORK_TOL * max(1.0, abs(expected)):
                raise ConfigurationError(
                    f"template work at {entity!r} sums to {total!r}, "
                    f"profile expects {expected!r}"
                )
        return by_name


def default_bearer_template(profiles):
    """Build the default 19-hop bearer-instantiation template.

    The hop order follows the control-plane procedure (attach and
    authentication, session establishment across SGW and PGW, data
    forwarding, release), with the radio-connection release toward the
    device as the final, marked hop.  Each entity's per-bearer operations
    are split equally over its hops, so per-entity totals match the
    profiles by construction.  Profiles must use the default per-entity
    message counts (UE 3, eNB 2, MME 9, HSS 1, SGW 3, PGW 1).
    """
    counts = {}
    for entity, _tag in _DEFAULT_HOP_PLAN:
        counts[entity] = counts.get(entity, 0) + 1
    by_name = {}
    for prof in profiles:
        if prof.entity in by_name:
            raise ConfigurationError(f"duplicate profile for entity {prof.entity!r}")
        by_name[prof.entity] = prof
    hops = []
    for entity, tag in _DEFAULT_HOP_PLAN:
        prof = by_name.get(entity)
        if prof is None:
            raise ConfigurationError(f"default template needs a profile for {entity!r}")
        if prof.messages_per_bearer != counts[entity]:
            raise ConfigurationError(
                f"default template expects {counts[entity]} messages at {entity!r}, "
                f"profile declares {prof.messages_per_bearer}; supply a custom template"
            )
        hops.append(MessageHop(entity, prof.ops_per_bearer / counts[entity], tag))
    return ProcedureTemplate(tuple(hops), marked_index=len(hops) - 1)


@dataclass(frozen=True)
class DelaySample:
    """One completed bearer request with its per-entity delay breakdown.

    ``breakdown`` maps entity name to the time the request spent being
    served (or queued) there; for the marked out-of-band hop only the span
    extending beyond the sequential chain is attributed, so the breakdown
    always sums to ``completion_s - arrival_s``.
    """

    request_id: int
    arrival_s: float
    completion_s: float
    breakdown: dict

    def __post_init__(self):
        if self.completion_s < self.arrival_s:
            raise ValueError("completion precedes arrival")

    @property
    def delay_s(self):
        return self.completion_s - self.arrival_s


class DelaySampleSet:
    """Column-oriented collection of DelaySample records.

    Behaves as a sequence of :class:`DelaySample`; bulk access goes through
    the underlying arrays (``arrivals_s``, ``completions_s``, ``delays_s``,
    ``breakdown``).
    """

    def __init__(self, request_ids, arrivals_s, completions_s, breakdown=None):
        self.request_ids = np.asarray(request_ids, dtype=np.int64)
        self.arrivals_s = np.asarray(arrivals_s, dtype=float)
        self.completions_s = np.asarray(completions_s, dtype=float)
        n = self.request_ids.shape[0]
        if self.arrivals_s.shape != (n,) or self.completions_s.shape != (n,):
            raise ValueError("request_ids, arrivals_s, completions_s must align")
        if n and np.any(self.completions_s < self.arrivals_s):
            raise ValueError("completion precedes arrival")
        self.breakdown = {}
        for name, col in (breakdown or {}).items():
            col = np.asarray(col, dtype=float)
            if col.shape != (n,):
                raise ValueError(f"breakdown column {name!r} must have length {n}")
            self.breakdown[name] = col

    def __len__(self):
        return self.request_ids.shape[0]

    def __getitem__(self, i):
        idx = int(i)
        if idx < 0:
            idx += len(self)
        if not 0 <= idx < len(self):
            raise IndexError(i)
        return DelaySample(
            request_id=int(self.request_ids[idx]),
            arrival_s=float(self.arrivals_s[idx]),
            completion_s=float(self.completions_s[idx]),
            breakdown={k: float(v[idx]) for k, v in self.breakdown.items()},
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def delays_s(self):
        return self.completions_s - self.arrivals_s

    def delay_percentile(self, p):
        """Empirical delay quantile at probability p in (0, 1)."""
        if not 0.0 < p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {p!r}")
        if not len(self):
            raise ValueError("no samples")
        return float(np.quantile(self.delays_s, p))

    def save_csv(self, path):
        delays = self.delays_s
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["request_id", "arrival_s", "completion_s", "delay_s"])
            for i in range(len(self)):
                w.writerow(
                    [
                        int(self.request_ids[i]),
                        repr(float(self.arrivals_s[i])),
                        repr(float(self.completions_s[i])),
                        repr(float(delays[i])),
                    ]
                )


class PsServer:
    """Egalitarian processor-sharing server with exact virtual-time dynamics.

    The virtual clock advances at rate ``capacity / k`` while k jobs are
    active, so each active job accrues service at the common rate and a job
    of size w entering at virtual time V finishes at virtual time V + w.
    Completion order is therefore ascending virtual-finish (equivalently,
    ascending residual work) order, with no discretization error.
    """

    __slots__ = (
        "entity",
        "capacity",
        "t_now",
        "virtual",
        "epoch",
        "busy_s",
        "served_work",
        "job_seconds",
        "_jobs",
        "_heap",
        "_seq",
    )

    def __init__(self, entity, capacity):
        if not (capacity > 0.0):
            raise ConfigurationError(f"capacity must be positive, got {capacity!r}")
        self.entity = entity
        self.capacity = float(capacity)
        self.t_now = 0.0
        self.virtual = 0.0
        self.epoch = 0
        self.busy_s = 0.0
        self.served_work = 0.0
        self.job_seconds = 0.0
        self._jobs = {}
        self._heap = []
        self._seq = 0

    def __len__(self):
        return len(self._jobs)

    def _accrue(self, t):
        dt = t - self.t_now
        if dt < 0.0:
            raise ValueError(f"time moved backwards: {self.t_now!r} -> {t!r}")
        k = len(self._jobs)
        if k and dt > 0.0:
            self.virtual += dt * self.capacity / k
            self.busy_s += dt
            self.job_seconds += k * dt
        self.t_now = t

    def arrive(self, t, job_id, work):
        if not (work > 0.0):
            raise ValueError(f"job work must be positive, got {work!r}")
        if job_id in self._jobs:
            raise ValueError(f"duplicate job id {job_id!r}")
        self._accrue(t)
        vf = self.virtual + work
        self._jobs[job_id] = (vf, work)
        heapq.heappush(self._heap, (vf, self._seq, job_id))
        self._seq += 1
        self.epoch += 1

    def next_completion_time(self):
        """Time at which the earliest-finishing active job completes, or None."""
        if not self._jobs:
            return None
        vf = self._heap[0][0]
        k = len(self._jobs)
        t = self.t_now + max(0.0, vf - self.virtual) * k / self.capacity
        return t

    def complete_head(self):
        """Advance to the earliest completion and remove that job.

        Returns (job_id, completion_time).  The virtual clock is snapped to
        the completed job's virtual finish, so rounding drift does not
        accumulate across completions.
        """
        if not self._jobs:
            raise ValueError("no active jobs")
        t_c = self.next_completion_time()
        self._accrue(t_c)
        vf, _, job_id = heapq.heappop(self._heap)
        self.virtual = vf
        _, work = self._jobs.pop(job_id)
        self.served_work += work
        self.epoch += 1
        return job_id, t_c

    def residual_work(self):
        """Remaining operations per active job, keyed by job id."""
        return {
            job_id: max(0.0, vf - self.virtual)
            for job_id, (vf, _) in self._jobs.items()
        }


def ps_advance(server, until):
    """Advance a PS server to time ``until``, completing every job due by then.

    Returns the list of (job_id, completion_s) pairs in completion order
    (ascending residual work).  The server clock ends at ``until`` with the
    surviving jobs' service exactly accrued.
    """
    if until < server.t_now:
        raise ValueError(f"until={until!r} precedes server time {server.t_now!r}")
    done = []
    while len(server):
        t_c = server.next_completion_time()
        if t_c > until:
            break
        done.append(server.complete_head())
    server._accrue(until)
    return done


@dataclass(frozen=True)
class ServerStats:
    """Per server-instance accounting over one simulation run."""

    entity: str
    instance: int
    capacity: float
    busy_s: float
    served_work: float
    job_seconds: float
    utilization: float


@dataclass(frozen=True)
class UtilizationReport:
    """Busy-time accounting per entity, with per-instance rows available."""

    horizon_s: float
    rows: tuple

    def per_entity(self):
        """Mean utilization per entity name (busy time over horizon, averaged
        across that entity's server instances)."""
        busy = {}
        count = {}
        for row in self.rows:
            busy[row.entity] = busy.get(row.entity, 0.0) + row.busy_s
            count[row.entity] = count.get(row.entity, 0) + 1
        return {
            name: busy[name] / (count[name] * self.horizon_s) if self.horizon_s > 0 else 0.0
            for name in busy
        }

    def text(self):
        lines = [f"horizon_s={self.horizon_s!r}"]
        per = self.per_entity()
        counts = {}
        for row in self.rows:
            counts[row.entity] = counts.get(row.entity, 0) + 1
        for name in sorted(per):
            lines.append(
                f"entity={name} instances={counts[name]} utilization={per[name]:.6f}"
            )
        return "\n".join(lines) + "\n"


def _route_instance(entity, source_key, n_enb, n_sgw):
    if entity == "eNB":
        return source_key % n_enb
    if entity == "SGW":
        return source_key % n_sgw
    if entity == "UE":
        return source_key
    return 0


def run_bearer_simulation(
    stream,
    template,
    profiles,
    horizon_s=None,
    n_enb=1,
    n_sgw=1,
    link_latency_s=0.0,
    encryption_ops=0.0,
):
    """Simulate every bearer request in ``stream`` walking ``template``.

    Each hop is a job on its entity's PS server; hop n+1 is dispatched the
    instant hop n completes, and the marked hop (if any) is dispatched
    concurrently when its template predecessor completes.  Requests arriving
    after ``horizon_s`` are ignored; everything dispatched runs to
    completion, and utilization is busy time divided by ``horizon_s``.

    Fan-out: requests are routed to ``n_enb`` eNB instances and ``n_sgw``
    SGW instances by source id (by request index when the stream carries no
    source ids); each device's UE processing runs on its own server; MME,
    HSS and PGW are single instances at the profile capacities.

    ``link_latency_s`` adds a constant delay on every inter-entity link
    (default 0: delays are purely computational).  ``encryption_ops`` adds
    constant extra work to the request's first MME hop (default 0).

    Returns ``(samples, report)``: a :class:`DelaySampleSet` ordered by
    request index and a :class:`UtilizationReport`.
    """
    if not isinstance(template, ProcedureTemplate):
        raise ConfigurationError("template must be a ProcedureTemplate")
    profile_map = template.validate_against(profiles)
    if n_enb < 1 or n_sgw < 1:
        raise ConfigurationError("n_enb and n_sgw must be at least 1")
    if link_latency_s < 0.0:
        raise ConfigurationError("link_latency_s must be non-negative")
    if encryption_ops < 0.0:
        raise ConfigurationError("encryption_ops must be non-negative")

    arrivals = np.asarray(stream.timestamps, dtype=float)
    if horizon_s is None:
        horizon_s = float(arrivals[-1]) if arrivals.size else 0.0
    n_req = int(np.searchsorted(arrivals, horizon_s, side="right"))
    arrivals = arrivals[:n_req]
    if stream.source_ids is not None:
        source_keys = np.asarray(stream.source_ids[:n_req], dtype=np.int64)
    else:
        source_keys = np.arange(n_req, dtype=np.int64)

    mme_prof = profile_map.get("MME")
    if mme_prof is not None and arrivals.size >= 2:
        span = float(arrivals[-1] - arrivals[0])
        if span > 0.0:
            rho = (arrivals.size / span) * mme_prof.ops_per_bearer / mme_prof.capacity
            if rho >= 1.0:
                warnings.warn(
                    f"MME load factor {rho:.3f} >= 1; delays grow with the horizon",
                    RuntimeWarning,
                )

    hops = template.hops
    n_hops = len(hops)
    marked = template.marked_index
    works = [float(h.work) for h in hops]
    if encryption_ops > 0.0:
        for i, h in enumerate(hops):
            if h.entity == "MME":
                works[i] += float(encryption_ops)
                break
    entities = [h.entity for h in hops]
    entity_order = template.entities()
    col_of = {name: j for j, name in enumerate(entity_order)}

    chain = [i for i in range(n_hops) if i != marked]
    next_hop = [-1] * n_hops
    for pos in range(len(chain) - 1):
        next_hop[chain[pos]] = chain[pos + 1]
    first_hop = chain[0] if chain else None
    marked_trigger = None if marked is None else marked - 1

    servers = {}

    def server_for(entity, source_key):
        key = (entity, _route_instance(entity, int(source_key), n_enb, n_sgw))
        srv = servers.get(key)
        if srv is None:
            srv = PsServer(entity, profile_map[entity].capacity)
            servers[key] = srv
        return key, srv

    breakdown = np.zeros((n_req, len(entity_order)), dtype=float)
    seq_start = np.zeros(n_req, dtype=float)
    chain_end = np.full(n_req, np.nan)
    marked_end = np.full(n_req, np.nan)

    seq = itertools.count()
    events = [(float(t), next(seq), 0, req, -1) for req, t in enumerate(arrivals)]
    heapq.heapify(events)
    push = heapq.heappush
    pop = heapq.heappop

    def dispatch(t, req, hop):
        key, srv = server_for(entities[hop], source_keys[req])
        srv.arrive(t, (req, hop), works[hop])
        if hop != marked:
            seq_start[req] = t
        push(events, (srv.next_completion_time(), next(seq), 1, key, srv.epoch))

    def dispatch_later(t, req, hop):
        # A positive link latency means the hop starts in the future; it must
        # go through the event heap so intervening events see the server first.
        if link_latency_s > 0.0:
            push(events, (t + link_latency_s, next(seq), 0, req, hop))
        else:
            dispatch(t, req, hop)

    def on_hop_complete(t, req, hop):
        if hop == marked:
            marked_end[req] = t
            return
        breakdown[req, col_of[entities[hop]]] += t - seq_start[req]
        if marked_trigger is not None and hop == marked_trigger:
            dispatch_later(t, req, marked)
        nxt = next_hop[hop]
        if nxt >= 0:
            dispatch_later(t, req, nxt)
        else:
            chain_end[req] = t

    while events:
        t, _, kind, a, b = pop(events)
        if kind == 0:
            req = a
            if b >= 0:
                dispatch(t, req, b)
                continue
            if first_hop is None:
                chain_end[req] = t
                if marked is not None and marked_trigger == -1:
                    dispatch(t, req, marked)
                continue
            dispatch(t, req, first_hop)
            if marked is not None and marked_trigger == -1:
                dispatch(t, req, marked)
        else:
            srv = servers[a]
            if b != srv.epoch:
                continue
            for (req, hop), t_c in ps_advance(srv, t):
                on_hop_complete(t_c, req, hop)
            if len(srv):
                push(events, (srv.next_completion_time(), next(seq), 1, a, srv.epoch))

    if marked is None:
        completions = chain_end
    else:
        completions = np.maximum(chain_end, marked_end)
        extra = np.maximum(0.0, marked_end - chain_end)
        breakdown[:, col_of[entities[marked]]] += extra

    cols = {name: breakdown[:, j].copy() for name, j in col_of.items()}
    if link_latency_s > 0.0:
        residual = (completions - arrivals) - breakdown.sum(axis=1)
        cols[_LINK_ENTITY] = np.maximum(0.0, residual)

    samples = DelaySampleSet(
        request_ids=np.arange(n_req, dtype=np.int64),
        arrivals_s=arrivals,
        completions_s=completions,
        breakdown=cols,
    )

    rows = []
    for (entity, instance), srv in sorted(servers.items()):
        util = srv.busy_s / horizon_s if horizon_s > 0 else 0.0
        rows.append(
            ServerStats(
                entity=entity,
                instance=instance,
                capacity=srv.capacity,
                busy_s=srv.busy_s,
                served_work=srv.served_work,
                job_seconds=srv.job_seconds,
                utilization=util,
            )
        )
    report = UtilizationReport(horizon_s=float(horizon_s), rows=tuple(rows))
    return samples, report


def _ps_sojourns_equal_work(arrivals, service_s):
    """Sojourn times in a single PS server fed equal-size jobs.

    With equal job sizes virtual-finish order equals arrival order, so the
    exact virtual-time dynamics reduce to one linear pass: ``service_s`` is
    the job size expressed in seconds of dedicated service (work / capacity).
    """
    n = len(arrivals)
    out = np.empty(n, dtype=float)
    vfs = np.empty(n, dtype=float)
    v = 0.0
    t = 0.0
    head = 0
    for i in range(n):
        a = float(arrivals[i])
        while head < i:
            k = i - head
            t_c = t + (vfs[head] - v) * k
            if t_c > a:
                break
            t = t_c
            v = vfs[head]
            out[head] = t
            head += 1
        k = i - head
        if k:
            v += (a - t) / k
        t = a
        vfs[i] = v + service_s
    while head < n:
        k = n - head
        t = t + (vfs[head] - v) * k
        v = vfs[head]
        out[head] = t
        head += 1
    return out - np.asarray(arrivals, dtype=float)


def single_job_mode(stream, profile_mme, constant_delay_s):
    """Simulate each bearer request as one deterministic job at the MME.

    The request's delay is its sojourn in an M/D/1-PS queue with job size
    ``profile_mme.ops_per_bearer`` at capacity ``profile_mme.capacity``,
    plus the constant non-MME contribution ``constant_delay_s``.  This is
    the exact stochastic counterpart of the analytic delay model, useful to
    separate tail-approximation error from the single-job modeling step.

    Returns a :class:`DelaySampleSet` with breakdown columns ``MME`` (the
    sojourn) and ``other`` (the constant offset).
    """
    if not isinstance(profile_mme, EntityProfile):
        raise ConfigurationError("profile_mme must be an EntityProfile")
    if constant_delay_s < 0.0:
        raise ConfigurationError(
            f"constant_delay_s must be non-negative, got {constant_delay_s!r}"
        )
    arrivals = np.asarray(stream.timestamps, dtype=float)
    service_s = profile_mme.ops_per_bearer / profile_mme.capacity
    sojourns = _ps_sojourns_equal_work(arrivals, service_s)
    delays = sojourns + constant_delay_s
    n = arrivals.shape[0]
    return DelaySampleSet(
        request_ids=np.arange(n, dtype=np.int64),
        arrivals_s=arrivals,
        completions_s=arrivals + delays,
        breakdown={
            "MME": sojourns,
            "other": np.full(n, float(constant_delay_s)),
        },
    )
