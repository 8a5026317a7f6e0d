"""Acceptance battery.

Each test prints one ``[PASS]/[FAIL]`` line per criterion (visible with
``pytest -s`` or on failure).  The expensive scaling sweeps are shared
session fixtures; everything is seeded and deterministic.
"""

import math

import numpy as np
import pytest

from cutgossip.analysis import (
    algA_scaling_sweep,
    convex_lower_bound_sweep,
    decompose,
    epoch_operators,
    estimate_T_av,
    run_seed,
    worst_cut_x0,
)
from cutgossip.engine import (
    SimConfig,
    StateVector,
    next_event,
    replay_states,
    simulate,
    step,
)
from cutgossip.graph import build_barbell
from cutgossip.rules import RuleDescriptor, resolve_gamma
from cutgossip.walks import (
    TailBoundParams,
    dominance_check,
    empirical_increments,
    simple_walk_tail,
)

N_FAMILY = [16, 32, 64, 128]
SWEEP_RUNS = 100
MASTER_SEED = 20_240


def report(cid: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {cid}: {detail}")
    assert ok, f"{cid}: {detail}"


@pytest.fixture(scope="session")
def vanilla_sweep():
    return convex_lower_bound_sweep(
        N_FAMILY, RuleDescriptor("vanilla"), runs=SWEEP_RUNS, seed=MASTER_SEED
    )


@pytest.fixture(scope="session")
def scheme_sweep():
    return algA_scaling_sweep(
        N_FAMILY, c_const=4.0, gamma_mode="balanced", runs=SWEEP_RUNS,
        seed=MASTER_SEED + 1,
    )


def _period_for(scheme_sweep, n: int) -> int:
    return scheme_sweep.column("P")[scheme_sweep.column("n").index(n)]


@pytest.fixture(scope="session")
def pooled_increments(scheme_sweep):
    # criterion 6/7 epochs: barbell(16,16), balanced gamma, default C
    g = build_barbell(16, 16)
    rule = RuleDescriptor("algA", period=_period_for(scheme_sweep, 32))
    increments: list[float] = []
    run = 0
    while len(increments) < 200 and run < 120:
        trace = simulate(
            g, rule, worst_cut_x0(g),
            SimConfig(seed=run_seed(MASTER_SEED + 2, 0, run),
                      max_time=20.0 * rule.period, sample_every=1 << 62),
        )
        if len(trace.epoch_marks) >= 2:
            increments.extend(empirical_increments(trace).tolist())
        run += 1
    return np.array(increments)


def test_c01_convex_class_floor_and_scaling(vanilla_sweep):
    n1s = vanilla_sweep.column("n1")
    t_hats = vanilla_sweep.column("t_hat")
    floors_ok = all(t >= 0.1 * n1 for t, n1 in zip(t_hats, n1s))
    slope = float(vanilla_sweep.comments[0].split("=")[1])
    detail = (
        f"t_hat={['%.1f' % t for t in t_hats]} vs floors "
        f"{[0.1 * n1 for n1 in n1s]}, slope={slope:.3f} (need >= 0.7)"
    )
    report("C1 convex floor+scaling", floors_ok and slope >= 0.7, detail)


def test_c02_scheme_speedup(vanilla_sweep, scheme_sweep):
    slope = float(scheme_sweep.comments[0].split("=")[1])
    t_v = vanilla_sweep.column("t_hat")[vanilla_sweep.column("n").index(128)]
    t_a = scheme_sweep.column("t_hat")[scheme_sweep.column("n").index(128)]
    ratio = t_v / t_a
    ok = slope <= 0.4 and ratio >= 5.0
    detail = (
        f"scheme slope={slope:.3f} (need <= 0.4); speedup at n=128: "
        f"{t_v:.1f}/{t_a:.1f} = {ratio:.1f}x (need >= 5)"
    )
    report("C2 scheme speedup", ok, detail)


def test_c03_two_vertex_oracle():
    est = estimate_T_av(
        build_barbell(1, 1), RuleDescriptor("vanilla"), "worst_cut",
        runs=10_000, horizon=8.0, seed=MASTER_SEED + 3,
    )
    ok = 0.85 <= est.t_hat <= 1.15
    report("C3 two-vertex oracle", ok,
           f"t_hat={est.t_hat:.4f} (analytic 1.0, band 1.0+-0.15)")


def test_c04_conservation_and_locality():
    g = build_barbell(16, 16)
    x0 = worst_cut_x0(g)
    eu, ev, _ = g.flat_edges()
    x0_range = float(x0.max() - x0.min())
    details = []
    ok = True
    for rule in (
        RuleDescriptor("vanilla"),
        RuleDescriptor("convex", alpha=0.7),
        RuleDescriptor("algA", period=8),
    ):
        state = StateVector.from_values(x0)
        rng = np.random.default_rng(MASTER_SEED + 4)
        cut_ticks = 0
        local_ok = True
        for _ in range(1_000_000):
            _dt, edge = next_event(rng, g.num_edges)
            new, _case, cut_ticks = step(state, g, rule, edge, cut_ticks)
            changed = np.flatnonzero(new.values != state.values)
            if not set(changed.tolist()) <= {eu[edge], ev[edge]}:
                local_ok = False
                break
            state = new
        drift = abs(math.fsum(state.values.tolist()) - state.initial_sum)
        rel = drift / x0_range
        details.append(f"{rule.kind}: drift={rel:.2e}, local={local_ok}")
        ok = ok and local_ok and rel <= 1e-9
    report("C4 conservation+locality", ok, "; ".join(details))


def test_c05_decomposition_and_bounds(scheme_sweep):
    checked = 0
    worst_identity = 0.0
    ok = True
    for n in N_FAMILY:
        g = build_barbell(n // 2, n // 2)
        rule = RuleDescriptor("algA", period=_period_for(scheme_sweep, n))
        horizon = max(20.0, 6.0 * rule.period)
        stride = max(1, int(g.num_edges * horizon / 700))
        for r in range(3):
            trace = simulate(
                g, rule, worst_cut_x0(g),
                SimConfig(seed=run_seed(MASTER_SEED + 5, n, r),
                          max_time=horizon, sample_every=stride,
                          record_states=True),
            )
            sqrt_n = math.sqrt(g.n)
            for i in range(trace.n_samples):
                st = trace.states[i]
                d = decompose(st, g)
                rhs = d.sigma**2 + (g.n1 * d.mu1**2 + g.n2 * d.mu2**2) / g.n
                err = abs(d.var - rhs)
                tol = 1e-9 * max(d.var, rhs) + 1e-280
                worst_identity = max(
                    worst_identity, err / max(d.var, rhs, 1e-280)
                )
                if err > tol:
                    ok = False
                if d.var < g.n1 * d.mu1**2 / g.n - tol:
                    ok = False
                c = st - st.mean()
                dev = max(abs(c[g.n1 - 1] - d.mu1), abs(c[g.n1] - d.mu2))
                if dev > sqrt_n * d.sigma * (1 + 1e-9) + 1e-280:
                    ok = False
                checked += 1
    report("C5 decomposition+bounds", ok,
           f"{checked} sampled states, zero violations, worst identity "
           f"relative error {worst_identity:.2e}")


def test_c06_epoch_operators(scheme_sweep, pooled_increments):
    g = build_barbell(16, 16)
    period = _period_for(scheme_sweep, 32)
    rule = RuleDescriptor("algA", period=period)
    gamma = resolve_gamma(g, "balanced")
    x0 = worst_cut_x0(g)
    trace = simulate(
        g, rule, x0,
        SimConfig(seed=MASTER_SEED + 6, max_time=201 * period * 1.3,
                  sample_every=1 << 62, record_events=True),
    )
    assert len(trace.epoch_marks) >= 201, "run too short for 200 epochs"
    ops = epoch_operators(trace, g, rule)[:200]
    norm_cap = max(1.0, 2.0 * gamma - 1.0)
    norms_ok = all(op.spectral_norm <= norm_cap * (1 + 1e-9) for op in ops)
    assert norm_cap <= g.n

    states = replay_states(
        g, rule, x0, trace.event_log, trace.epoch_event_idx[:201].tolist()
    )
    faithful = 0.0
    for k, op in enumerate(ops):
        start, end = states[k], states[k + 1]
        scale = max(np.linalg.norm(start), np.linalg.norm(end), 1e-300)
        faithful = max(faithful, np.linalg.norm(op.matrix @ start - end) / scale)

    heavy_epoch_fraction = float(
        np.mean(pooled_increments >= -1.5 * math.log(g.n))
    )
    ok = (
        norms_ok
        and faithful <= 1e-9
        and len(pooled_increments) >= 200
        and heavy_epoch_fraction <= 0.6
    )
    report(
        "C6 epoch operators", ok,
        f"{len(ops)} operators, max norm "
        f"{max(op.spectral_norm for op in ops):.3f} <= {norm_cap}, "
        f"faithfulness {faithful:.2e} <= 1e-9, heavy-epoch fraction "
        f"{heavy_epoch_fraction:.3f} <= 0.6 over {len(pooled_increments)} epochs",
    )


def test_c07_stochastic_dominance(pooled_increments):
    n = 32
    rep = dominance_check(pooled_increments, n, slack=0.1 * math.log(n))
    ok = rep.passed and rep.max_increment <= math.log(n)
    report(
        "C7 stochastic dominance", ok,
        f"{rep.count} increments, quantile check "
        f"{'PASS' if rep.passed else 'FAIL'} at slack {rep.slack:.3f}, "
        f"max increment {rep.max_increment:.3f} <= log n = {rep.cap:.3f}",
    )


def test_c08_sub_gaussian_tail():
    params = TailBoundParams(1.0, 0.5)
    violations = 0
    for n in range(1, 31):
        for s in (0.5, 1.0, 1.5, 2.0, 3.0):
            chk = simple_walk_tail(n, s, params)
            assert chk.exact
            if chk.probability > chk.bound:
                violations += 1
    spot = simple_walk_tail(4, 1.0, params).probability
    ok = violations == 0 and spot == 5.0 / 16.0
    report("C8 sub-gaussian tail", ok,
           f"exhaustive n<=30 grid violations={violations}, "
           f"P[S4>=2]={spot} (exact 5/16)")


def test_c09_superposition_statistics():
    stats = pytest.importorskip("scipy.stats")
    g = build_barbell(3, 4)
    assert g.num_edges == 10
    trace = simulate(
        g, RuleDescriptor("vanilla"), worst_cut_x0(g),
        SimConfig(seed=MASTER_SEED + 9, max_events=10_000, sample_every=1,
                  record_events=True),
    )
    dts = np.diff(trace.times)
    gof = stats.kstest(dts, stats.expon(scale=1.0 / g.num_edges).cdf)
    counts = np.bincount(trace.event_log.edges, minlength=10)
    band = 3 * math.sqrt(10_000 * 0.1 * 0.9)
    uniform_ok = bool(np.all(np.abs(counts - 1000) <= band))
    ok = gof.pvalue > 1e-3 and uniform_ok
    report("C9 superposition", ok,
           f"KS p={gof.pvalue:.4f} > 1e-3; edge counts within "
           f"+-{band:.0f} of 1000: {uniform_ok}")


def test_c10_n1_gamma_mean_oscillation(scheme_sweep):
    g = build_barbell(16, 16)
    period = _period_for(scheme_sweep, 32)
    rule = RuleDescriptor("algA", period=period, gamma_mode="n1")
    ratios = []
    for r in range(50):
        trace = simulate(
            g, rule, worst_cut_x0(g),
            SimConfig(seed=run_seed(MASTER_SEED + 10, 0, r),
                      max_time=21 * period * 1.4, sample_every=1 << 62),
        )
        assert len(trace.epoch_marks) >= 20
        idx = trace.epoch_sample_idx
        mu_abs = np.abs(trace.mu1[idx]) + np.abs(trace.mu2[idx])
        ratios.append(mu_abs[19] / mu_abs[0])
    med = float(np.median(ratios))
    report("C10 n1-gamma mean oscillation", med >= 0.5,
           f"median |mu|@epoch20 / |mu|@epoch1 = {med:.3f} (need >= 0.5)")
