from __future__ import annotations

from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqdiag.determinant import Determinant, mask_to_bits, popcount, slater_condon_element
from sqdiag.exceptions import EmptyPoolError
from sqdiag.models import methylene_model
from sqdiag.oracle import fci_ground_state
from sqdiag.recovery import (
    RECOVERY_EPS,
    OccupancyProfile,
    RecoveryConfig,
    postselect_pools,
    recover_masks,
    recover_string,
    run_recovery,
)
from sqdiag.sampler import NoiseModel, SampleSet, build_lucj, exhaustive_samples, mp2_amplitudes, sample, simulate_lucj_state
from sqdiag.subspace import SolverConfig, SubspaceBasis, SubspaceState


def _raw(alpha, beta, n):
    return mask_to_bits(alpha, n) + mask_to_bits(beta, n)


def _same_weight_prob(m, w, p):
    return sum(comb(w, k) * comb(m - w, k) * p ** (2 * k) * (1 - p) ** (m - 2 * k) for k in range(min(w, m - w) + 1))


def _lucj_samples(ham, shots, p, seed=0):
    params = build_lucj(mp2_amplitudes(ham), n_layers=2)
    state = simulate_lucj_state(params, ham.n_orb, ham.n_alpha, ham.n_beta)
    return sample(state, shots, NoiseModel(p, seed))


def test_profile_from_state_sums_to_electron_counts():
    basis = SubspaceBasis.full(5, 3, 2)
    rng = np.random.default_rng(0)
    prof = OccupancyProfile.from_state(SubspaceState(basis, rng.normal(size=basis.dimension)))
    assert abs(prof.n_alpha_occ.sum() - 3) < 1e-8
    assert abs(prof.n_beta_occ.sum() - 2) < 1e-8
    assert np.all((prof.n_alpha_occ >= 0) & (prof.n_alpha_occ <= 1))


def test_profile_of_determinant_is_its_occupation():
    basis = SubspaceBasis((0b0101,), (0b0011,), 4, 2, 2)
    prof = OccupancyProfile.from_state(SubspaceState(basis, np.ones(1)))
    assert prof.n_alpha_occ.tolist() == [1, 0, 1, 0]
    assert prof.n_beta_occ.tolist() == [1, 1, 0, 0]


def test_profile_validation_and_mean():
    with pytest.raises(ValueError):
        OccupancyProfile(np.array([1.5, 0.0]), np.zeros(2))
    with pytest.raises(ValueError):
        OccupancyProfile(np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        OccupancyProfile.mean([])
    m = OccupancyProfile.mean([OccupancyProfile([1, 0], [0, 1]), OccupancyProfile([0, 1], [0, 1])])
    assert m.n_alpha_occ.tolist() == [0.5, 0.5]
    assert m.n_beta_occ.tolist() == [0, 1]


def test_recovery_config_validation():
    for kwargs in ({"n_batches": 0}, {"batch_size": 0}, {"n_iterations": 0}, {"n_workers": 0}):
        with pytest.raises(ValueError):
            RecoveryConfig(**kwargs)


def test_postselect_noiseless_keeps_every_half():
    basis = SubspaceBasis.full(4, 2, 1)
    a, b = postselect_pools(exhaustive_samples(basis), 2, 1)
    assert a == basis.alpha_strings
    assert b == basis.beta_strings


def test_postselect_halves_are_independent():
    n = 4
    samples = SampleSet({_raw(0b0011, 0b0111, n): 3, _raw(0b1111, 0b0001, n): 1})
    a, b = postselect_pools(samples, 2, 1)
    assert a == (0b0011,)
    assert b == (0b0001,)


def test_postselect_rejects_unusable_samples():
    with pytest.raises(EmptyPoolError):
        postselect_pools(SampleSet({_raw(0b111, 0b111, 3): 4}), 1, 1)
    with pytest.raises(EmptyPoolError):
        postselect_pools(SampleSet({}), 1, 1)


def test_postselect_survival_matches_binomial():
    n, na, nb, p, shots = 6, 4, 2, 0.05, 50_000
    basis = SubspaceBasis((0b001111,), (0b000011,), n, na, nb)
    from sqdiag.sampler import Statevector

    samples = sample(Statevector(basis, np.ones(1)), shots, NoiseModel(p, seed=9))
    alpha, beta, counts = samples.to_masks()
    for masks, w in ((alpha, na), (beta, nb)):
        kept = counts[[popcount(int(m)) == w for m in masks]].sum()
        q = _same_weight_prob(n, w, p)
        assert abs(kept - shots * q) < 3 * np.sqrt(shots * q * (1 - q))


def test_recover_string_passes_correct_strings_through():
    rng = np.random.default_rng(0)
    occ = OccupancyProfile(np.full(4, 0.5), np.full(4, 0.25))
    bits = _raw(0b0101, 0b1000, 4)
    state = rng.bit_generator.state
    assert recover_string(bits, occ, 2, 1, rng) == bits
    assert rng.bit_generator.state == state


def test_recover_string_forced_single_raise():
    rng = np.random.default_rng(1)
    occ = OccupancyProfile(np.array([0.2, 0.3, 0.5]), np.array([1.0, 0.0, 0.0]))
    out = recover_string("000" + "000", occ, 1, 1, rng)
    assert out[:3].count("1") == 1
    assert out[3:] == "100"


def test_surplus_flip_lands_on_empty_orbital():
    # sharp profile: orbitals 0-2 full, 3-5 empty; the extra electron sits on 4
    occ = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    masks = np.full(10_000, 0b010111, dtype=np.uint64)
    out = recover_masks(masks, occ, 3, np.random.default_rng(2))
    wrong = np.count_nonzero(out != np.uint64(0b000111))
    # each of the three full orbitals is chosen with probability eps / (1 + 3 eps)
    p_wrong = 3 * RECOVERY_EPS / (1 + 4 * RECOVERY_EPS)
    assert wrong <= 10_000 * p_wrong + 4 * np.sqrt(10_000 * p_wrong) + 1


@pytest.mark.parametrize("surplus", [True, False])
def test_flip_law_frequencies(surplus):
    occ = np.array([0.9, 0.6, 0.3, 0.15, 0.05])
    trials = 10_000
    start = 0b00111 if surplus else 0b00011
    weight = 2 if surplus else 3
    out = recover_masks(np.full(trials, start, dtype=np.uint64), occ, weight, np.random.default_rng(3))
    flipped = np.array([[(int(m) ^ start) >> p & 1 for p in range(5)] for m in out])
    eligible = [p for p in range(5) if (start >> p & 1) == surplus]
    law = np.array([(1 - occ[p] if surplus else occ[p]) + RECOVERY_EPS for p in eligible])
    law /= law.sum()
    freq = flipped[:, eligible].sum(axis=0)
    assert freq.sum() == trials
    sd = np.sqrt(trials * law * (1 - law))
    assert np.all(np.abs(freq - trials * law) < 4 * sd)


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(1, 10),
    data=st.data(),
)
def test_recovery_always_fixes_weights(n, data):
    w = data.draw(st.integers(0, n))
    masks = np.array(data.draw(st.lists(st.integers(0, 2**n - 1), min_size=1, max_size=30)), dtype=np.uint64)
    occ = np.array(data.draw(st.lists(st.floats(0, 1), min_size=n, max_size=n)))
    seed = data.draw(st.integers(0, 2**32 - 1))
    out = recover_masks(masks, occ, w, np.random.default_rng(seed))
    again = recover_masks(masks, occ, w, np.random.default_rng(seed))
    assert np.array_equal(out, again)
    assert all(popcount(int(m)) == w for m in out)
    assert all(o == m for o, m in zip(out, masks) if popcount(int(m)) == w)
    assert all(int(o) >> n == 0 for o in out)


def test_recover_rejects_impossible_weight():
    with pytest.raises(ValueError):
        recover_masks(np.zeros(1, dtype=np.uint64), np.zeros(3), 4, np.random.default_rng(0))


def test_hartree_fock_delta_samples_are_a_fixed_point():
    ham = methylene_model(1.1, 3, 3)
    hf = Determinant.hartree_fock(3, 3)
    samples = SampleSet({_raw(hf.alpha_mask, hf.beta_mask, 6): 1000})
    res = run_recovery(ham, samples, RecoveryConfig(n_batches=3, n_iterations=4))
    e_hf = slater_condon_element(ham, hf, hf)
    assert res.state.basis.dimension == 1
    for record in res.history:
        assert record.min_energy == pytest.approx(e_hf, abs=1e-12)
        assert record.dimension == 1


@pytest.mark.parametrize("sector,s", [((3, 3), 0), ((4, 2), 1)])
def test_exhaustive_samples_reproduce_fci(sector, s):
    ham = methylene_model(1.6, *sector)
    basis = SubspaceBasis.full(6, *sector)
    res = run_recovery(ham, exhaustive_samples(basis), RecoveryConfig(n_batches=2, n_iterations=2))
    fci = fci_ground_state(ham, target_spin=s)
    assert abs(res.energy - fci.energy) < 1e-8
    assert abs(res.s2 - s * (s + 1)) < 1e-6
    assert res.history[0].dimension == basis.dimension


def test_noiseless_iterations_are_a_fixed_point():
    ham = methylene_model(2.2, 4, 2)
    samples = _lucj_samples(ham, 300, 0.0, seed=4)
    res = run_recovery(ham, samples, RecoveryConfig(n_batches=3, batch_size=40, n_iterations=4))
    first = res.history[0].min_energy
    assert all(abs(h.min_energy - first) < 1e-10 for h in res.history[1:])


def test_batches_are_variational_and_bounded_by_batch_size():
    ham = methylene_model(1.1, 3, 3)
    samples = _lucj_samples(ham, 2000, 0.02, seed=5)
    cfg = RecoveryConfig(n_batches=4, batch_size=25, n_iterations=3, seed=11)
    res = run_recovery(ham, samples, cfg)
    fci = fci_ground_state(ham, target_spin=0).energy
    assert len(res.history) == 3
    assert all(b.energy >= fci - 1e-10 for b in res.batches)
    assert all(b.dimension <= 25 * 25 for b in res.batches)
    final = [b.energy for b in res.batches if b.iteration == 2]
    assert res.energy == min(final)


def test_recovery_is_deterministic_across_workers():
    ham = methylene_model(1.6, 4, 2)
    samples = _lucj_samples(ham, 3000, 0.03, seed=6)
    cfg = dict(n_batches=4, batch_size=30, n_iterations=3, seed=2)
    a = run_recovery(ham, samples, RecoveryConfig(**cfg, n_workers=1))
    b = run_recovery(ham, samples, RecoveryConfig(**cfg, n_workers=3))
    assert a.history == b.history
    assert a.batches == b.batches
    assert np.array_equal(a.state.coefficients, b.state.coefficients)


def test_noisy_recovery_improves_on_postselection():
    ham = methylene_model(1.1, 4, 2)
    samples = _lucj_samples(ham, 20_000, 0.02, seed=7)
    clean = run_recovery(ham, _lucj_samples(ham, 20_000, 0.0, seed=7), RecoveryConfig(n_batches=3, n_iterations=1))
    noisy = run_recovery(ham, samples, RecoveryConfig(n_batches=3, n_iterations=5, solver=SolverConfig()))
    assert noisy.energy - clean.energy < 2e-3
    assert all(b.dimension > 0 for b in noisy.batches)


def test_run_recovery_errors():
    ham = methylene_model(1.1, 3, 3)
    with pytest.raises(EmptyPoolError):
        run_recovery(ham, SampleSet({}))
    # only beta halves are usable, so no batch can be built
    with pytest.raises(EmptyPoolError):
        run_recovery(ham, SampleSet({_raw(0b111111, 0b000111, 6): 5}))
    with pytest.raises(ValueError):
        run_recovery(ham, SampleSet({"1010": 1}))
