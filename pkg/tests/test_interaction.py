import numpy as np
import pytest
from hypothesis import given, strategies as st

from vgibbs.configuration import Configuration, project
from vgibbs.geometry import PartitionSpec, Region, halo
from vgibbs.interaction import (AssumptionViolation, InteractionError, batch_energy, bump, custom,
                                finiteness_bound, hamiltonian, hamiltonian_bruteforce, hard_range, local_energy,
                                lower_bound_rhs, verify_assumptions, zero_potential)
from vgibbs.marks import MarkMeasure
from vgibbs.reference import Batch, PoissonSpec, sample_poisson_batch


def poisson_configs(spec, region, n, seed, positive=False, eps=0.05):
    mm = (MarkMeasure.positive if positive else MarkMeasure)(spec.d, float(spec.d), 2.0, eps)
    return sample_poisson_batch(PoissonSpec(mm, region), n, np.random.default_rng(seed)).configurations()


def test_hand_evaluations(spec1):
    phi = hard_range(0.3, 1.0)
    win = Region.of(spec1, [(0,)])
    assert hamiltonian(Configuration.empty(win), None, win, phi).total == 0.0
    one = Configuration([[0.1]], [[2.0]], win)
    assert hamiltonian(one, None, win, phi).total == pytest.approx(0.3 * 4.0)
    two = Configuration([[0.1], [-0.2]], [[1.0], [1.0]], win)
    h = hamiltonian(two, None, win, phi)
    assert h.total == pytest.approx(4 * 0.3)
    assert h.total == h.bulk + h.boundary
    assert hamiltonian(two, None, win, phi, exclude_diagonal=True).total == pytest.approx(2 * 0.3)
    assert lower_bound_rhs(Configuration.empty(win), win, 0.5) == 0.0
    assert lower_bound_rhs(one, win, 0.5) == 2.0
    assert finiteness_bound(Configuration.empty(win), None, win, phi) == 0.0


def test_boundary_term_hand(spec1):
    phi = hard_range(0.5, 1.0)
    lam = Region.of(spec1, [(0,)])
    eta = Configuration([[0.0]], [[1.0]], lam)
    xi = Configuration([[1.0], [-0.9]], [[2.0], [-1.0]], halo(lam))
    h = hamiltonian(eta, xi, lam, phi)
    assert h.bulk == pytest.approx(0.5)
    assert h.boundary == pytest.approx(2 * 0.5 * (2.0 - 1.0))


def test_xi_beyond_halo_contributes_nothing(spec1):
    phi = hard_range(0.5, 1.0)
    lam = Region.of(spec1, [(0,)])
    eta = Configuration([[0.0]], [[1.0]], lam)
    far = Region.box(spec1, -8, 8) - lam
    xi = Configuration([[5.0], [-4.2]], [[3.0], [1.0]], far)
    assert hamiltonian(eta, xi, lam, phi).boundary == 0.0
    assert hamiltonian_bruteforce(eta, xi, lam, phi).boundary == 0.0


def test_preconditions(spec1):
    phi = hard_range(0.5, 1.0)
    lam = Region.of(spec1, [(0,)])
    eta = Configuration([[0.0]], [[1.0]], lam)
    with pytest.raises(InteractionError):
        hamiltonian(eta, None, Region.of(spec1, [(0,), (1,)]), phi)
    with pytest.raises(InteractionError):
        hamiltonian(eta, Configuration.empty(Region.of(spec1, [(1,)])), lam, phi)


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("kind", ["hard", "bump"])
def test_cell_list_matches_bruteforce(d, kind):
    spec = PartitionSpec(d, 1.0, 1.3)
    phi = hard_range(0.2, 1.3) if kind == "hard" else bump(0.2, 1.3)
    lam = Region.box(spec, (0,) * d, (2,) * d)
    etas = poisson_configs(spec, lam, 60, 1)
    xis = poisson_configs(spec, lam.expand(2) - lam, 60, 2)
    for eta, xi in zip(etas, xis):
        a = hamiltonian(eta, xi, lam, phi)
        b = hamiltonian_bruteforce(eta, xi, lam, phi)
        assert abs(a.total - b.total) <= 1e-12 * max(1.0, abs(b.total))
        # halo sufficiency: only xi on halo(lam) matters
        c = hamiltonian(eta, project(xi, halo(lam)), lam, phi)
        assert c.total == a.total


def test_relabel_symmetry():
    spec = PartitionSpec(2, 1.0, 1.0)
    lam = Region.box(spec, (0, 0), (1, 1))
    phi = bump(0.7, 1.0)
    rng = np.random.default_rng(3)
    for eta in poisson_configs(spec, lam, 30, 4):
        perm = rng.permutation(len(eta))
        shuffled = Configuration(eta.positions[perm], eta.marks[perm], eta.window)
        assert hamiltonian(shuffled, None, lam, phi).total == hamiltonian(eta, None, lam, phi).total


def test_lower_bound_positive_regime():
    spec = PartitionSpec(2, 1.0, 1.5)
    lam = Region.box(spec, (0, 0), (2, 1))
    phi = hard_range(0.4, 1.5)
    A = phi.repulsion(spec.delta)
    etas = poisson_configs(spec, lam, 400, 5, positive=True)
    xis = poisson_configs(spec, halo(lam), 400, 6, positive=True)
    for eta, xi in zip(etas, xis):
        assert hamiltonian(eta, xi, lam, phi).total >= lower_bound_rhs(eta, lam, A)


def test_lower_bound_can_fail_with_signed_marks(spec1):
    # two cubes two apart interact (R=2) with opposite marks: the cross term is negative
    spec = PartitionSpec(1, 1.0, 2.0)
    phi = hard_range(1.0, 2.0)
    lam = Region.of(spec, [(0,), (1,)])
    eta = Configuration([[0.0], [1.0]], [[1.0], [-1.0]], lam)
    assert hamiltonian(eta, None, lam, phi).total < lower_bound_rhs(eta, lam, 1.0)


@given(st.integers(0, 10_000))
def test_finiteness_bound_random(seed):
    spec = PartitionSpec(2, 1.0, 1.0)
    lam = Region.box(spec, (0, 0), (1, 1))
    phi = hard_range(0.3, 1.0)
    eta = poisson_configs(spec, lam, 1, seed)[0]
    xi = poisson_configs(spec, halo(lam), 1, seed + 1)[0]
    assert abs(hamiltonian(eta, xi, lam, phi).total) <= finiteness_bound(eta, xi, lam, phi) * (1 + 1e-12)


def test_batch_energy_matches_hamiltonian():
    spec = PartitionSpec(2, 1.0, 1.2)
    lam = Region.box(spec, (0, 0), (1, 2))
    phi = bump(0.5, 1.2)
    etas = poisson_configs(spec, lam, 80, 7)
    xis = poisson_configs(spec, halo(lam), 80, 8)
    b, x = Batch.from_configurations(etas, lam), Batch.from_configurations(xis, halo(lam))
    got = batch_energy(b.counts, b.positions, b.marks, phi, x.counts, x.positions, x.marks, chunk_pairs=50)
    want = [hamiltonian(e, s, lam, phi).total for e, s in zip(etas, xis)]
    assert np.allclose(got, want, rtol=1e-12, atol=1e-12)
    got0 = batch_energy(b.counts, b.positions, b.marks, phi, exclude_diagonal=True)
    want0 = [hamiltonian(e, None, lam, phi, exclude_diagonal=True).total for e in etas]
    assert np.allclose(got0, want0, rtol=1e-12, atol=1e-12)


def test_local_energy(spec2):
    phi = hard_range(2.0, 1.0)
    pos = np.array([[0.0, 0.0], [0.5, 0.0], [3.0, 0.0]])
    marks = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert local_energy(np.array([0.1, 0.0]), np.array([1.0, 1.0]), pos, marks, phi) == pytest.approx(4.0)
    assert local_energy(np.zeros(2), np.ones(2), pos[:0], marks[:0], phi) == 0.0


def test_potential_constants():
    spec = PartitionSpec(1, 0.5, 1.0)
    assert hard_range(0.3, 1.0).repulsion(0.5) == 0.3
    assert bump(1.0, 1.0).repulsion(0.5) == pytest.approx(0.75 ** 2)
    assert zero_potential(1.0).repulsion(0.5) == 0.0
    rng = np.random.default_rng(0)
    verify_assumptions(hard_range(0.3, 1.0), spec, rng)
    verify_assumptions(bump(1.0, 1.0), spec, rng)
    verify_assumptions(zero_potential(1.0), spec, rng, require_repulsion=False)


def test_assumption_violations():
    spec = PartitionSpec(1, 0.5, 1.0)
    rng = np.random.default_rng(1)
    with pytest.raises(AssumptionViolation, match="FR"):
        verify_assumptions(hard_range(0.3, 1.0, cutoff=1.2), spec, rng)
    with pytest.raises(AssumptionViolation, match="FR"):
        verify_assumptions(hard_range(0.3, 2.0), spec, rng)
    with pytest.raises(AssumptionViolation, match="RC"):
        verify_assumptions(zero_potential(1.0), spec, rng)
    with pytest.raises(AssumptionViolation, match="RC"):
        verify_assumptions(bump(1.0, 1.0), PartitionSpec(1, 1.0, 1.0), rng)
    neg = custom(lambda r: np.where(r <= 1.0, -0.1, 0.0), 0.1, 1.0, lambda d: 0.1)
    with pytest.raises(AssumptionViolation, match="positivity"):
        verify_assumptions(neg, spec, rng)
    big = custom(lambda r: np.where(r <= 1.0, 2.0, 0.0), 1.0, 1.0, lambda d: 1.0)
    with pytest.raises(AssumptionViolation, match="bounded"):
        verify_assumptions(big, spec, rng)
    liar = custom(lambda r: np.where(r <= 0.2, 1.0, np.where(r <= 1.0, 0.1, 0.0)), 1.0, 1.0, lambda d: 1.0)
    with pytest.raises(AssumptionViolation, match="RC"):
        verify_assumptions(liar, spec, rng)
