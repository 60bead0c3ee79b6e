import math

import numpy as np
import pytest
from scipy import stats

from conftest import make_model
from vgibbs.configuration import Configuration
from vgibbs.geometry import PartitionSpec, Region, halo
from vgibbs.interaction import hamiltonian, hard_range
from vgibbs.marks import MarkMeasure
from vgibbs.reference import Batch
from vgibbs.specification import (BIRTH, DEATH, MARK, MOVE, Event, LowAcceptanceError, MCMCKnobs, MCMCState, Model,
                                  NegativeEnergyError, _rejection_core, consistency_residual, dlr_residual, dlr_sweep,
                                  finite_volume_gibbs, kernel_probability, partition_function_mc,
                                  sample_gibbs_mcmc, sample_gibbs_mcmc_batch, sample_gibbs_rejection,
                                  sample_gibbs_rejection_batch, void_probability)


def tv_per_sample(batch):
    return np.bincount(batch.owner, weights=np.linalg.norm(batch.marks, axis=1), minlength=len(batch))


def test_model_validation():
    spec = PartitionSpec(1, 1.0, 1.0)
    with pytest.raises(ValueError):
        Model(spec, MarkMeasure(2, 2.0, 2.0), hard_range(0.1, 1.0))
    with pytest.raises(ValueError):
        Model(spec, MarkMeasure(1, 1.0, 2.0), hard_range(0.1, 2.0))
    m = make_model(c=0.3)
    assert m.A == 0.3 and m.positive


def test_partition_function_zero_potential(spec1):
    m = make_model(zero=True)
    z = partition_function_mc(m, Region.box(spec1, 0, 2), None, 100, np.random.default_rng(0))
    assert z.value == 1.0 and z.stderr == 0.0 and z.trunc_bound == 0.0
    with pytest.raises(ValueError):
        partition_function_mc(m, Region.box(spec1, 0, 2), None, 99, np.random.default_rng(0))


def test_partition_function_bounds(model1, spec1):
    lam = Region.box(spec1, -1, 1)
    z = partition_function_mc(model1, lam, None, 5000, np.random.default_rng(1))
    assert 0 < z.value and z.value - 3 * z.stderr <= 1
    assert z.value + 3 * z.stderr >= z.jensen_lower - 3 * z.jensen_stderr
    assert z.to_dict()["jensen_lower"] == z.jensen_lower


def test_rejection_zero_potential_accepts_first(spec1):
    m = make_model(zero=True)
    rb = sample_gibbs_rejection_batch(m, Region.box(spec1, 0, 1), None, 500, np.random.default_rng(2))
    assert np.all(rb.trials == 1) and rb.acceptance_rate == 1.0


def test_rejection_sample_fields(model1, spec1):
    lam = Region.of(spec1, [(0,)])
    xi = Configuration([[1.2]], [[0.5]], halo(lam))
    g = sample_gibbs_rejection(model1, lam, xi, np.random.default_rng(3))
    assert g.config.window == lam
    assert g.boundary.window == halo(lam)
    assert g.accepted_after >= 1


def test_acceptance_rate_matches_partition_function(spec1):
    m = make_model(c=0.5)
    lam = Region.of(spec1, [(0,)])
    z = partition_function_mc(m, lam, None, 20_000, np.random.default_rng(4))
    rb = sample_gibbs_rejection_batch(m, lam, None, 10_000, np.random.default_rng(5))
    t = rb.trials.astype(float)
    se = rb.acceptance_rate ** 2 * t.std(ddof=1) / math.sqrt(len(t))
    assert abs(rb.acceptance_rate - z.value) <= 3 * math.hypot(se, z.stderr)


def test_xi_far_away_has_no_effect(spec1):
    m = make_model(c=0.5)
    lam = Region.of(spec1, [(0,)])
    far = Region.box(spec1, -10, 10) - lam.expand(3)
    xi = Configuration([[8.0], [-9.5]], [[20.0], [30.0]], far)
    a = sample_gibbs_rejection_batch(m, lam, xi, 4000, np.random.default_rng(6)).batch
    b = sample_gibbs_rejection_batch(m, lam, None, 4000, np.random.default_rng(7)).batch
    assert stats.ks_2samp(tv_per_sample(a), tv_per_sample(b)).pvalue > 0.01


def test_prefilter_changes_work_not_output(spec1):
    m = make_model(c=0.5)
    lam = Region.box(spec1, 0, 1)
    a, ta = _rejection_core(m, lam, 300, np.random.default_rng(8), None, 10 ** 6, prefilter=True)
    b, tb = _rejection_core(m, lam, 300, np.random.default_rng(8), None, 10 ** 6, prefilter=False)
    assert np.array_equal(ta, tb)
    assert np.array_equal(a.counts, b.counts) and np.array_equal(a.positions, b.positions)


def test_negative_energy_refused(spec1):
    # signed marks with a boundary atom of opposite sign can make H < 0
    m = make_model(c=1.0, positive=False, eps=0.5)
    lam = Region.of(spec1, [(0,)])
    xi = Configuration([[1.0]], [[-50.0]], halo(lam))
    with pytest.raises(NegativeEnergyError) as exc:
        sample_gibbs_rejection_batch(m, lam, xi, 200, np.random.default_rng(9))
    assert exc.value.to_dict()["energy"] < 0


def test_low_acceptance_error(spec1):
    m = make_model(c=5.0)
    with pytest.raises(LowAcceptanceError) as exc:
        sample_gibbs_rejection_batch(m, Region.box(spec1, 0, 5), None, 10, np.random.default_rng(10), budget=5)
    d = exc.value.to_dict()
    assert d["budget"] == 5 and d["trials"] > 0 and 0 <= d["z_estimate"] <= 1


def test_mcmc_knobs_validation():
    with pytest.raises(ValueError):
        MCMCKnobs(p_birth=0.5)
    with pytest.raises(ValueError):
        MCMCKnobs(p_birth=0.0, p_death=0.6)
    with pytest.raises(ValueError):
        MCMCKnobs(thin=0)
    with pytest.raises(ValueError):
        MCMCKnobs(move_scale=-1.0)


def test_detailed_balance_birth_ratio(spec1):
    """Birth log-ratio against log(T vol / (n+1)) + log(p_d/p_b) - [H(eta + x) - H(eta)]."""
    m = make_model(c=0.4)
    lam = Region.box(spec1, 0, 1)
    xi = Configuration([[-0.9], [2.1]], [[0.7], [1.3]], halo(lam))
    eta = Configuration([[0.2], [0.9]], [[1.5], [0.25]], lam)
    knobs = MCMCKnobs(p_birth=0.4, p_death=0.2, p_move=0.3, p_mark=0.1)
    st_ = MCMCState(m, lam, xi, 1, knobs, init=eta)
    x_new, v_new = np.array([[0.55]]), np.array([[0.8]])
    got = st_.proposal_log_ratio(np.array([BIRTH]), np.array([0]), x_new, v_new, np.zeros((1, 1)))[0]
    bigger = Configuration(np.vstack([eta.positions, x_new]), np.vstack([eta.marks, v_new]), lam)
    dH = hamiltonian(bigger, xi, lam, m.phi).total - hamiltonian(eta, xi, lam, m.phi).total
    T = m.mm.truncated_intensity
    want = math.log(T * lam.volume / 3) + math.log(0.2 / 0.4) - dH
    assert got == pytest.approx(want, abs=1e-12)
    # the matching death from the bigger state is the exact reverse move
    st2 = MCMCState(m, lam, xi, 1, knobs, init=bigger)
    back = st2.proposal_log_ratio(np.array([DEATH]), np.array([2]), x_new, v_new, np.zeros((1, 1)))[0]
    assert back == pytest.approx(-want, abs=1e-12)


def test_move_and_mark_ratios(spec1):
    m = make_model(c=0.4)
    lam = Region.box(spec1, 0, 1)
    eta = Configuration([[0.2], [0.9]], [[1.5], [0.25]], lam)
    st_ = MCMCState(m, lam, None, 1, MCMCKnobs(), init=eta)
    H0 = hamiltonian(eta, None, lam, m.phi).total
    jump = np.array([[1.1]])
    got = st_.proposal_log_ratio(np.array([MOVE]), np.array([0]), jump, jump, jump)[0]
    moved = Configuration([[1.1], [0.9]], eta.marks, lam)
    assert got == pytest.approx(-(hamiltonian(moved, None, lam, m.phi).total - H0), abs=1e-12)
    outside = st_.proposal_log_ratio(np.array([MOVE]), np.array([0]), jump, jump, np.array([[5.0]]))[0]
    assert outside == -np.inf
    v = np.array([[2.0]])
    got = st_.proposal_log_ratio(np.array([MARK]), np.array([1]), jump, v, jump)[0]
    remarked = Configuration(eta.positions, [[1.5], [2.0]], lam)
    assert got == pytest.approx(-(hamiltonian(remarked, None, lam, m.phi).total - H0), abs=1e-12)


def test_mcmc_zero_potential_counts_are_poisson(spec1):
    m = make_model(zero=True)
    lam = Region.of(spec1, [(0,)])
    batch, info = sample_gibbs_mcmc_batch(m, lam, None, 10_000, np.random.default_rng(11),
                                          MCMCKnobs(burn_in=400, thin=100), chains=1000)
    lam_ = m.mm.truncated_intensity * lam.volume
    ks = np.arange(int(lam_ - 3 * math.sqrt(lam_)), int(lam_ + 3 * math.sqrt(lam_)) + 1)
    obs = np.array([np.sum(batch.counts < ks[0])] + [np.sum(batch.counts == k) for k in ks]
                   + [np.sum(batch.counts > ks[-1])])
    p = np.concatenate([[stats.poisson.cdf(ks[0] - 1, lam_)], stats.poisson.pmf(ks, lam_),
                        [stats.poisson.sf(ks[-1], lam_)]])
    assert stats.chisquare(obs, p * len(batch)).pvalue > 0.01
    assert info["chains"] == 1000 and set(info["acceptance"]) == {"birth", "death", "move", "mark"}


def test_mcmc_single_chain_and_reproducibility(spec1):
    m = make_model(c=0.5)
    lam = Region.of(spec1, [(0,)])
    knobs = MCMCKnobs(burn_in=50, thin=5)
    with pytest.raises(ValueError):
        sample_gibbs_mcmc(m, lam, None, 10, np.random.default_rng(0), knobs)
    g = sample_gibbs_mcmc(m, lam, None, 200, np.random.default_rng(0), knobs)
    assert g.config.window == lam and g.accepted_after == 200
    a, _ = sample_gibbs_mcmc_batch(m, lam, None, 300, np.random.default_rng(12), knobs, chains=100)
    b, _ = sample_gibbs_mcmc_batch(m, lam, None, 300, np.random.default_rng(12), knobs, chains=100)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.counts, b.counts)
    for cfg in a.configurations():
        Configuration(cfg.positions, cfg.marks, lam)  # distinct positions, inside the window


def test_mcmc_agrees_with_rejection_one_cube(spec1):
    m = make_model(c=0.5)
    lam = Region.of(spec1, [(0,)])
    rj = sample_gibbs_rejection_batch(m, lam, None, 5000, np.random.default_rng(13)).batch
    mc, _ = sample_gibbs_mcmc_batch(m, lam, None, 5000, np.random.default_rng(14),
                                    MCMCKnobs(burn_in=2000, thin=150), chains=1000)
    assert stats.ks_2samp(tv_per_sample(rj), tv_per_sample(mc)).pvalue > 0.01
    assert stats.ks_2samp(rj.counts, mc.counts).pvalue > 0.01


def test_event_semantics(spec1):
    lam = Region.box(spec1, 0, 1)
    eta = Configuration([[0.1], [0.2], [1.1]], [[1.0], [-2.0], [0.5]], lam)
    assert Event.always()(eta) and not Event.never()(eta)
    c0 = frozenset({(0,)})
    assert Event("count", c0, "<=", 2)(eta) and not Event("count", c0, "<", 2)(eta)
    assert Event("tv", c0, ">=", 3.0)(eta)
    assert Event("vector_norm", c0, "<=", 1.0)(eta)
    ev = Event("tv", frozenset({(0,), (1,)}), ">", 3.4)
    assert ev(eta) and Event.from_dict(ev.to_dict()) == ev
    with pytest.raises(ValueError):
        Event("mass")
    with pytest.raises(ValueError):
        Event("tv", op="==")


def test_kernel_probability_trivial_events(model1, spec1):
    lam = Region.of(spec1, [(0,)])
    rng = np.random.default_rng(15)
    one = kernel_probability(model1, lam, None, Event.always(), 200, rng)
    zero = kernel_probability(model1, lam, None, Event.never(), 200, rng)
    assert (one.value, one.stderr) == (1.0, 0.0)
    assert (zero.value, zero.stderr) == (0.0, 0.0)


def test_kernel_void_probability_zero_potential(spec1):
    m = make_model(zero=True, eps=0.5)
    lam = Region.of(spec1, [(0,)])
    p0 = void_probability(m.mm, lam)
    est = kernel_probability(m, lam, None, Event("count", lam.cubes, "<=", 0), 20_000, np.random.default_rng(16))
    assert abs(est.value - p0) <= 3 * est.stderr


def test_kernel_monotone_events(model1, spec1):
    lam = Region.box(spec1, -1, 1)
    rng = np.random.default_rng(17)
    vals = [kernel_probability(model1, lam, None, Event("tv", lam.cubes, "<=", t), 4000, rng) for t in (0.5, 1, 2, 4)]
    for a, b in zip(vals, vals[1:]):
        assert b.value >= a.value - 3 * math.hypot(a.stderr, b.stderr)


def test_kernel_includes_xi_outside(spec1):
    m = make_model(c=0.05)
    lam = Region.of(spec1, [(0,)])
    xi = Configuration([[1.0]], [[3.0]], halo(lam))
    ev = Event("tv", frozenset({(1,)}), ">=", 3.0)
    assert kernel_probability(m, lam, xi, ev, 100, np.random.default_rng(18)).value == 1.0


def test_consistency_identical_regions(spec1):
    m = make_model(c=0.5)
    lam = Region.box(spec1, -1, 1)
    ev = Event("tv", frozenset({(0,)}), "<=", 1.0)
    rep = consistency_residual(m, lam, lam, None, ev, 3000, np.random.default_rng(19))
    assert rep.passed
    assert set(rep.to_dict()) >= {"lhs", "rhs", "diff", "stderr", "n", "seed", "pass"}


def test_consistency_zero_potential(spec1):
    m = make_model(zero=True)
    lam = Region.box(spec1, -1, 1)
    ev = Event("tv", frozenset({(0,)}), "<=", 1.0)
    assert consistency_residual(m, Region.of(spec1, [(0,)]), lam, None, ev, 3000, np.random.default_rng(20)).passed
    with pytest.raises(ValueError):
        consistency_residual(m, Region.of(spec1, [(5,)]), lam, None, ev, 10, np.random.default_rng(20))


def test_consistency_middle_cube_with_boundary(spec1):
    m = make_model(c=0.5)
    lam = Region.box(spec1, -1, 1)
    xi = Configuration([[-2.2], [2.4], [3.1]], [[0.6], [1.1], [0.3]], halo(lam))
    ev = Event("tv", frozenset({(0,)}), "<=", 1.0)
    assert consistency_residual(m, Region.of(spec1, [(0,)]), lam, xi, ev, 4000, np.random.default_rng(21)).passed


def test_dlr_zero_potential_and_outside_event(spec1):
    m = make_model(zero=True)
    lam = Region.of(spec1, [(0,)])
    sw = dlr_sweep(m, lam, None, Event("tv", lam.cubes, "<=", 1.0), 3000, np.random.default_rng(22))
    assert sw.passed and len(sw.reports) == 3
    m2 = make_model(c=0.05)
    far = Event("tv", frozenset({(4,)}), "<=", 1.0)
    rep = dlr_residual(m2, lam, finite_volume_gibbs(m2, lam.expand(2), None), far, 1000, np.random.default_rng(23))
    assert rep.diff == 0.0 and rep.passed
