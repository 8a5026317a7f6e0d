"""Continuous-time event-driven simulation of rate-1 edge clocks.

Each edge carries an independent rate-1 exponential clock.  The merged
process is simulated by superposition: waiting times are exponential with
rate equal to the edge count and each tick lands on a uniformly chosen
edge, which is statistically identical to per-edge clocks and O(1) per
event.  Randomness comes from a seeded numpy PCG64 generator consumed in
fixed-size chunks; the scheme identifier is recorded in trace metadata so
runs can be replayed exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import KIND_CUT, KIND_INTRA, PartitionedGraph, SideGraph
from .rules import RuleCase, RuleDescriptor, algA_dispatch, resolve_gamma

__all__ = [
    "StateVector",
    "SimConfig",
    "SimTrace",
    "EventLog",
    "next_event",
    "step",
    "simulate",
    "replay",
    "replay_states",
    "write_trace_jsonl",
    "write_trace_csv",
]

RNG_ID = "numpy-PCG64/chunk4096"
_CHUNK = 4096

DEFAULT_RATIO_THRESHOLD = math.exp(-2.0)


@dataclass
class StateVector:
    """Node values at simulation time ``time`` plus the conserved-sum reference."""

    values: np.ndarray
    time: float
    initial_sum: float

    @classmethod
    def from_values(cls, values, time: float = 0.0) -> "StateVector":
        arr = np.asarray(values, dtype=float).copy()
        return cls(arr, time, float(math.fsum(arr.tolist())))


@dataclass(frozen=True)
class SimConfig:
    """Run parameters.  Stopping occurs at whichever criterion triggers first.

    ``variance_ratio_target`` stops once var(X)/var(X0) falls to or below
    the target; rules that never contract (e.g. the gamma="n1" scheme on
    equal blocks) may never reach it, so pair it with a time or event cap.
    ``sample_every`` is an event-count stride; metric samples are also
    forced at every firing of the amplified cut transfer so epoch
    boundaries always carry a variance sample.
    """

    seed: int
    max_time: float | None = None
    max_events: int | None = None
    variance_ratio_target: float | None = None
    sample_every: int = 1
    record_events: bool = False
    record_states: bool = False
    ratio_threshold: float = DEFAULT_RATIO_THRESHOLD

    def __post_init__(self) -> None:
        if self.max_time is None and self.max_events is None and (
            self.variance_ratio_target is None
        ):
            raise ValueError("at least one stop criterion must be set")
        if self.max_time is not None and self.max_time < 0:
            raise ValueError("max_time must be nonnegative")
        if self.max_events is not None and self.max_events < 0:
            raise ValueError("max_events must be nonnegative")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if not (0.0 < self.ratio_threshold < 1.0):
            raise ValueError("ratio_threshold must be in (0, 1)")


@dataclass
class EventLog:
    """Compact per-event record: time, flat edge index, applied case code."""

    times: np.ndarray
    edges: np.ndarray
    cases: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return EventLog(self.times[i], self.edges[i], self.cases[i])
        return float(self.times[i]), int(self.edges[i]), RuleCase(int(self.cases[i]))

    def __iter__(self):
        for i in range(len(self.times)):
            yield self[i]


@dataclass
class SimTrace:
    """Time-stamped metric samples plus tick counters and epoch marks.

    Sample arrays are parallel; the first sample is the initial state at
    t=0.  ``epoch_marks`` holds the times of amplified-transfer firings,
    with ``epoch_sample_idx`` locating the forced sample taken just after
    each firing (and ``epoch_event_idx`` its position in the event log,
    when one was recorded).  ``first_crossing`` is the first event time at
    which the variance ratio reached the configured threshold or below;
    ``last_exceedance`` is the supremum of times with ratio above the
    threshold (+inf when the run still exceeded it at the stop time, None
    when the initial variance is zero and the ratio is undefined).
    """

    times: np.ndarray
    var: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    sigma: np.ndarray
    nu12: np.ndarray
    k_cut: np.ndarray
    epoch_marks: np.ndarray
    epoch_sample_idx: np.ndarray
    epoch_event_idx: np.ndarray | None
    tick_totals: dict[str, int]
    event_log: EventLog | None
    states: np.ndarray | None
    final: StateVector
    first_crossing: float | None
    last_exceedance: float | None
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return len(self.times)

    @property
    def n_events(self) -> int:
        return self.tick_totals["total"]


def _side_metrics(arr: np.ndarray, n1: int) -> tuple[float, float, float, float]:
    """Block means, within-block RMS deviation, and variance about the mean.

    The input is centered about its own mean, so the exact identity
    var = sigma^2 + (n1*mu1^2 + n2*mu2^2)/n holds up to rounding.
    """
    n = arr.size
    centered = arr - arr.mean()
    b1 = centered[:n1]
    b2 = centered[n1:]
    mu1 = float(b1.mean()) if b1.size else 0.0
    mu2 = float(b2.mean()) if b2.size else 0.0
    var = float(centered @ centered) / n
    d1 = b1 - mu1
    d2 = b2 - mu2
    ss = float(d1 @ d1) + (float(d2 @ d2) if d2.size else 0.0)
    sigma = math.sqrt(max(ss / n, 0.0))
    return mu1, mu2, sigma, var


def next_event(rng: np.random.Generator, edge_count: int) -> tuple[float, int]:
    """Draw one merged-clock event: waiting time Exp(edge_count) and a
    uniformly random edge index."""
    if edge_count < 1:
        raise ValueError("need at least one edge")
    dt = float(rng.exponential(1.0 / edge_count))
    edge = int(rng.integers(0, edge_count))
    return dt, edge


def _rule_params(
    graph, rule: RuleDescriptor
) -> tuple[int, float, int, float]:
    """Resolve (mode, alpha, period, gamma) for a run.  mode: 0 vanilla,
    1 convex, 2 periodic scheme."""
    if rule.kind == "vanilla":
        return 0, 0.0, 1, 0.0
    if rule.kind == "convex":
        return 1, float(rule.alpha), 1, 0.0
    if not isinstance(graph, PartitionedGraph):
        raise ValueError("the periodic scheme needs a partitioned graph")
    if rule.period is None:
        raise ValueError(
            "algA period is unresolved; set period explicitly or compute it "
            "from block averaging-time estimates"
        )
    gamma = resolve_gamma(graph, rule.gamma_mode, rule.gamma_value)
    return 2, 0.0, int(rule.period), gamma


# The elementary update formulas below are duplicated inside the simulate()
# hot loop; they must stay textually identical so that step()-driven replays
# are bit-identical to engine runs (tests enforce this).
def _apply_case(
    values, u: int, v: int, case: RuleCase, alpha: float, gamma: float
) -> None:
    xu = values[u]
    xv = values[v]
    if case == RuleCase.VANILLA:
        h = 0.5 * (xu + xv)
        values[u] = h
        values[v] = h
    elif case == RuleCase.CONVEX:
        beta = 1.0 - alpha
        values[u] = alpha * xu + beta * xv
        values[v] = alpha * xv + beta * xu
    elif case == RuleCase.NONCONVEX:
        t = gamma * (xv - xu)
        values[u] = xu + t
        values[v] = xv - t


def step(
    state: StateVector,
    graph,
    rule: RuleDescriptor,
    edge: int,
    cut_ticks: int = 0,
) -> tuple[StateVector, RuleCase, int]:
    """Apply one edge tick and return (new state, applied case, cut ticks).

    Only the endpoints of ``edge`` may change.  ``cut_ticks`` is the count
    of designated-cut-edge ticks before this one; the returned count
    includes this tick when it lands on the cut edge.  The state's clock is
    not advanced here; waiting times come from :func:`next_event`.
    """
    eu, ev, kind = graph._flat if isinstance(graph, PartitionedGraph) else _side_flat(graph)
    mode, alpha, period, gamma = _rule_params(graph, rule)
    u, v, k = eu[edge], ev[edge], kind[edge]
    if mode == 0:
        case = RuleCase.VANILLA
    elif mode == 1:
        case = RuleCase.CONVEX
    else:
        if k == KIND_CUT:
            cut_ticks += 1
        case = algA_dispatch(k, cut_ticks, period)
    values = state.values.copy()
    _apply_case(values, u, v, case, alpha, gamma)
    return StateVector(values, state.time, state.initial_sum), case, cut_ticks


def _side_flat(graph: SideGraph) -> tuple[list[int], list[int], list[int]]:
    eu = [u - 1 for u, _ in graph.edges]
    ev = [v - 1 for _, v in graph.edges]
    return eu, ev, [KIND_INTRA] * len(eu)


def simulate(graph, rule: RuleDescriptor, x0, config: SimConfig) -> SimTrace:
    """Run the event loop and collect a trace.

    ``graph`` is a :class:`PartitionedGraph` or, for vanilla/convex rules
    only, a :class:`SideGraph`.  Reproducible: equal (graph, rule, x0,
    seed) produce bit-identical traces.
    """
    if isinstance(graph, PartitionedGraph):
        eu, ev, kind = graph._flat
        n1 = graph.n1
        digest = graph.digest()
    elif isinstance(graph, SideGraph):
        eu, ev, kind = _side_flat(graph)
        n1 = graph.n
        digest = f"side-n{graph.n}-m{len(graph.edges)}"
    else:
        raise TypeError("graph must be a PartitionedGraph or SideGraph")
    n = graph.n
    x = [float(v) for v in np.asarray(x0, dtype=float)]
    if len(x) != n:
        raise ValueError(f"x0 has length {len(x)}, graph has {n} vertices")
    m = len(eu)
    if m < 1:
        raise ValueError("graph has no edges")
    mode, alpha, period, gamma = _rule_params(graph, rule)
    beta = 1.0 - alpha

    rng = np.random.default_rng(np.random.PCG64(config.seed))
    inv_m = 1.0 / m
    inv_n = 1.0 / n

    # Incremental variance detector: var about the running mean from the
    # tracked sum and sum of squares.  Absolute drift over 1e6 events is
    # ~1e-12 at unit scale, far below the threshold comparisons it feeds;
    # recorded samples recompute metrics exactly from the state instead.
    sm = math.fsum(x)
    initial_sum = sm
    ssq = math.fsum(v * v for v in x)
    var0 = max((ssq - sm * sm * inv_n) * inv_n, 0.0)
    detect = var0 > 0.0
    thr_abs = config.ratio_threshold * var0
    target_abs = (
        config.variance_ratio_target * var0
        if (config.variance_ratio_target is not None and detect)
        else None
    )
    exceeding = detect  # ratio at t=0 is 1, above any threshold in (0, 1)
    first_crossing: float | None = None
    last_end = 0.0

    s_times: list[float] = []
    s_var: list[float] = []
    s_mu1: list[float] = []
    s_mu2: list[float] = []
    s_sigma: list[float] = []
    s_nu: list[int] = []
    s_k: list[int] = []
    s_states: list[np.ndarray] | None = [] if config.record_states else None
    marks: list[float] = []
    mark_sidx: list[int] = []
    mark_eidx: list[int] = []
    log_t: list[float] | None = [] if config.record_events else None
    log_e: list[int] = []
    log_c: list[int] = []

    ticks_e1 = ticks_e2 = nu12 = k_cut = 0
    events = 0
    t = 0.0

    def take_sample() -> None:
        arr = np.array(x)
        mu1, mu2, sg, vr = _side_metrics(arr, n1)
        s_times.append(t)
        s_var.append(vr)
        s_mu1.append(mu1)
        s_mu2.append(mu2)
        s_sigma.append(sg)
        s_nu.append(nu12)
        s_k.append(k_cut)
        if s_states is not None:
            s_states.append(arr)

    take_sample()

    max_time = config.max_time
    max_events = config.max_events
    sample_every = config.sample_every
    recording = log_t is not None
    NONCONVEX = int(RuleCase.NONCONVEX)
    stop = max_events == 0 or max_time == 0.0
    while not stop:
        dts = rng.exponential(inv_m, _CHUNK).tolist()
        eis = rng.integers(0, m, _CHUNK).tolist()
        for i in range(_CHUNK):
            nt = t + dts[i]
            if max_time is not None and nt > max_time:
                t = max_time
                stop = True
                break
            t = nt
            e = eis[i]
            u = eu[e]
            v = ev[e]
            ek = kind[e]
            # counters are rule-independent
            if ek == KIND_INTRA:
                if u < n1:
                    ticks_e1 += 1
                else:
                    ticks_e2 += 1
            else:
                nu12 += 1
                if ek == KIND_CUT:
                    k_cut += 1
            xu = x[u]
            xv = x[v]
            if mode == 0:
                h = 0.5 * (xu + xv)
                x[u] = h
                x[v] = h
                ssq += 2.0 * h * h - xu * xu - xv * xv
                sm += 2.0 * h - xu - xv
                case = 1
            elif mode == 1:
                nu_ = alpha * xu + beta * xv
                nv_ = alpha * xv + beta * xu
                x[u] = nu_
                x[v] = nv_
                ssq += nu_ * nu_ + nv_ * nv_ - xu * xu - xv * xv
                sm += nu_ + nv_ - xu - xv
                case = 2
            else:
                if ek == KIND_INTRA:
                    h = 0.5 * (xu + xv)
                    x[u] = h
                    x[v] = h
                    ssq += 2.0 * h * h - xu * xu - xv * xv
                    sm += 2.0 * h - xu - xv
                    case = 1
                elif ek == KIND_CUT and k_cut % period == period - 1:
                    tr = gamma * (xv - xu)
                    nu_ = xu + tr
                    nv_ = xv - tr
                    x[u] = nu_
                    x[v] = nv_
                    ssq += nu_ * nu_ + nv_ * nv_ - xu * xu - xv * xv
                    sm += nu_ + nv_ - xu - xv
                    case = 3
                else:
                    case = 0
            events += 1
            if recording:
                log_t.append(t)
                log_e.append(e)
                log_c.append(case)
            if detect:
                var_now = (ssq - sm * sm * inv_n) * inv_n
                if exceeding:
                    last_end = t
                    if var_now <= thr_abs:
                        exceeding = False
                        if first_crossing is None:
                            first_crossing = t
                elif var_now > thr_abs:
                    exceeding = True
            fired = case == NONCONVEX
            if fired or events % sample_every == 0:
                take_sample()
                if fired:
                    marks.append(t)
                    mark_sidx.append(len(s_times) - 1)
                    if recording:
                        mark_eidx.append(events - 1)
            if max_events is not None and events >= max_events:
                stop = True
                break
            if target_abs is not None and not exceeding:
                var_now = (ssq - sm * sm * inv_n) * inv_n
                if var_now <= target_abs:
                    stop = True
                    break

    if s_times[-1] != t:
        take_sample()

    final = StateVector(np.array(x), t, initial_sum)
    if detect:
        last_exc: float | None = math.inf if exceeding else last_end
        first_cr = first_crossing
    else:
        last_exc = None
        first_cr = None

    meta = {
        "seed": config.seed,
        "rng": RNG_ID,
        "rule": rule.to_text(),
        "graph": digest,
        "n1": n1,
        "n2": n - n1,
        "sample_every": config.sample_every,
        "ratio_threshold": config.ratio_threshold,
    }
    return SimTrace(
        times=np.array(s_times),
        var=np.array(s_var),
        mu1=np.array(s_mu1),
        mu2=np.array(s_mu2),
        sigma=np.array(s_sigma),
        nu12=np.array(s_nu, dtype=np.int64),
        k_cut=np.array(s_k, dtype=np.int64),
        epoch_marks=np.array(marks),
        epoch_sample_idx=np.array(mark_sidx, dtype=np.int64),
        epoch_event_idx=np.array(mark_eidx, dtype=np.int64) if recording else None,
        tick_totals={
            "e1": ticks_e1,
            "e2": ticks_e2,
            "e12": nu12,
            "cut": k_cut,
            "total": events,
        },
        event_log=EventLog(
            np.array(log_t), np.array(log_e, dtype=np.int64),
            np.array(log_c, dtype=np.int8),
        )
        if recording
        else None,
        states=np.array(s_states) if s_states is not None else None,
        final=final,
        first_crossing=first_cr,
        last_exceedance=last_exc,
        meta=meta,
    )


def replay(graph, rule: RuleDescriptor, x0, event_log: EventLog) -> np.ndarray:
    """Re-apply a recorded event sequence to x0; returns the final values.

    Uses the recorded case codes directly, so it reproduces an engine run
    bit for bit.
    """
    values = np.asarray(x0, dtype=float).copy()
    eu, ev, _ = (
        graph._flat if isinstance(graph, PartitionedGraph) else _side_flat(graph)
    )
    _, alpha, _, gamma = _rule_params(graph, rule)
    for i in range(len(event_log)):
        e = int(event_log.edges[i])
        _apply_case(
            values, eu[e], ev[e], RuleCase(int(event_log.cases[i])), alpha, gamma
        )
    return values


def replay_states(
    graph, rule: RuleDescriptor, x0, event_log: EventLog, at_indices
) -> np.ndarray:
    """States just after each event index in ``at_indices`` (sorted).

    Index -1 selects the initial state.
    """
    wanted = sorted(at_indices)
    values = np.asarray(x0, dtype=float).copy()
    eu, ev, _ = (
        graph._flat if isinstance(graph, PartitionedGraph) else _side_flat(graph)
    )
    _, alpha, _, gamma = _rule_params(graph, rule)
    out = []
    pos = 0
    for i in range(-1, len(event_log)):
        if i >= 0:
            e = int(event_log.edges[i])
            _apply_case(
                values, eu[e], ev[e], RuleCase(int(event_log.cases[i])), alpha, gamma
            )
        while pos < len(wanted) and wanted[pos] == i:
            out.append(values.copy())
            pos += 1
        if pos == len(wanted):
            break
    if pos != len(wanted):
        raise IndexError("event index beyond the recorded log")
    return np.array(out)


# ---------------------------------------------------------------------------
# Trace output.  JSONL: a metadata object on the first line, then one sample
# object per line.  CSV: a '#'-prefixed metadata line, a header row, then one
# row per sample with the same columns.
# ---------------------------------------------------------------------------

_COLUMNS = ("t", "var", "mu1", "mu2", "sigma", "nu_t", "k")


def _sample_rows(trace: SimTrace):
    for i in range(trace.n_samples):
        yield (
            float(trace.times[i]),
            float(trace.var[i]),
            float(trace.mu1[i]),
            float(trace.mu2[i]),
            float(trace.sigma[i]),
            int(trace.nu12[i]),
            int(trace.k_cut[i]),
        )


def write_trace_jsonl(trace: SimTrace, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(json.dumps({"meta": trace.meta}) + "\n")
        for row in _sample_rows(trace):
            fh.write(json.dumps(dict(zip(_COLUMNS, row))) + "\n")


def write_trace_csv(trace: SimTrace, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        meta = " ".join(f"{k}={v}" for k, v in trace.meta.items())
        fh.write(f"# {meta}\n")
        fh.write(",".join(_COLUMNS) + "\n")
        for row in _sample_rows(trace):
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
            fh.write("\n")
