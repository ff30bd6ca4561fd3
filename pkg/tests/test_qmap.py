import math

import numpy as np
import pytest

from spinshuffle.qmap import (Dictionary, build_dictionary, dictionary_match,
                              fit_map, fit_voxel_nlls, fit_voxel_subspace)
from spinshuffle.qmap import _model_batch, _varpro_cost
from spinshuffle.spinsim import TissueParams, constant_train, simulate_fse
from spinshuffle.subspace import (TissuePrior, build_ensemble, compute_basis,
                                  sample_prior)

T = 32
SEQ = constant_train(T, 180.0, 10.0)


@pytest.fixture(scope="module")
def clean_signal():
    return simulate_fse(TissueParams(t2=100.0), SEQ).samples


@pytest.fixture(scope="module")
def ensemble():
    return build_ensemble(sample_prior(TissuePrior(seed=9), 256), SEQ)


def grid_oracle(signal, lo=1.0, hi=1000.0):
    """Dense grid search at 0.01 ms resolution (coarse scan, then exhaustive
    fine grid around the coarse winner)."""
    coarse = np.arange(lo, hi + 1e-9, 0.5)
    cost, _ = _varpro_cost(_model_batch(coarse, SEQ, 1000.0, 1.0),
                           np.repeat(signal[:, None], coarse.size, 1))
    center = coarse[int(np.argmin(cost))]
    fine = np.arange(max(lo, center - 1.0), min(hi, center + 1.0) + 1e-9, 0.01)
    cost, _ = _varpro_cost(_model_batch(fine, SEQ, 1000.0, 1.0),
                           np.repeat(signal[:, None], fine.size, 1))
    return fine[int(np.argmin(cost))]


class TestFitVoxelNlls:
    def test_noiseless_consistency(self, clean_signal):
        res = fit_voxel_nlls(clean_signal, SEQ)
        assert abs(res.t2 - 100.0) < 1e-6
        assert abs(res.rho - 1.0) < 1e-8
        assert res.converged

    def test_complex_scale_passes_to_density(self, clean_signal):
        res = fit_voxel_nlls(3j * clean_signal, SEQ)
        assert abs(res.t2 - 100.0) < 1e-6
        assert abs(res.rho - 3j) < 1e-7

    def test_matches_grid_oracle_on_noise(self, clean_signal):
        rng = np.random.default_rng(42)
        for _ in range(5):
            noisy = clean_signal + 0.01 / np.sqrt(2) * (
                rng.standard_normal(T) + 1j * rng.standard_normal(T))
            res = fit_voxel_nlls(noisy, SEQ, bounds=(1.0, 1000.0))
            assert abs(res.t2 - grid_oracle(noisy)) <= 0.01 + 1e-9

    def test_zero_signal_flagged(self):
        res = fit_voxel_nlls(np.zeros(T), SEQ)
        assert res.rho == 0 and math.isnan(res.t2) and not res.converged

    def test_residual_orthogonal_to_model(self, clean_signal):
        rng = np.random.default_rng(1)
        noisy = clean_signal + 0.02 * rng.standard_normal(T)
        res = fit_voxel_nlls(noisy, SEQ, bounds=(1.0, 1000.0))
        model = _model_batch([res.t2], SEQ, 1000.0, 1.0)[:, 0]
        resid = noisy - res.rho * model
        assert abs(np.vdot(model, resid)) < 1e-8

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            fit_voxel_nlls(np.zeros(5), SEQ)


class TestFitVoxelSubspace:
    def test_projected_evolution_recovered(self, clean_signal, ensemble):
        basis = compute_basis(ensemble, 3)
        alpha = basis.phi_k.conj().T @ clean_signal
        res = fit_voxel_subspace(alpha, basis, SEQ)
        assert abs(res.t2 - 100.0) / 100.0 < 1e-3

    def test_full_basis_equals_time_domain(self, clean_signal, ensemble):
        rng = np.random.default_rng(3)
        basis = compute_basis(ensemble, T)
        for _ in range(3):
            noisy = clean_signal + 0.01 / np.sqrt(2) * (
                rng.standard_normal(T) + 1j * rng.standard_normal(T))
            time_fit = fit_voxel_nlls(noisy, SEQ, bounds=(1.0, 1000.0))
            alpha = basis.phi_k.conj().T @ noisy
            sub_fit = fit_voxel_subspace(alpha, basis, SEQ,
                                         bounds=(1.0, 1000.0))
            assert abs(sub_fit.t2 - time_fit.t2) < 1e-10 * time_fit.t2 + 1e-10
            assert abs(sub_fit.rho - time_fit.rho) < 1e-9

    def test_zero_coefficients_flagged(self, ensemble):
        basis = compute_basis(ensemble, 3)
        res = fit_voxel_subspace(np.zeros(3), basis, SEQ)
        assert res.rho == 0 and math.isnan(res.t2)


class TestDictionaryMatch:
    @pytest.fixture(scope="class")
    def dictionary(self, ensemble):
        basis = compute_basis(ensemble, 3)
        t2s = np.arange(20.0, 401.0, 5.0)
        return build_dictionary([TissueParams(t2=v) for v in t2s], SEQ, basis)

    def test_exact_atom_recovered(self, dictionary, clean_signal):
        res = dictionary_match(clean_signal, dictionary)
        assert res.t2 == 100.0
        assert abs(abs(res.rho) - np.linalg.norm(clean_signal)) < 1e-12

    def test_negated_atom_same_match(self, dictionary, clean_signal):
        res = dictionary_match(-clean_signal, dictionary)
        assert res.t2 == 100.0
        assert res.rho.real < 0

    def test_equals_exhaustive_argmax(self, dictionary):
        rng = np.random.default_rng(5)
        for _ in range(20):
            sig = rng.standard_normal(T) + 1j * rng.standard_normal(T)
            res = dictionary_match(sig, dictionary)
            scores = [abs(np.vdot(dictionary.atoms[:, d], sig))
                      for d in range(dictionary.atoms.shape[1])]
            assert res.t2 == dictionary.params[int(np.argmax(scores))].t2

    def test_tie_goes_to_lowest_index(self):
        atom = simulate_fse(TissueParams(t2=80.0), SEQ).samples
        atom = atom / np.linalg.norm(atom)
        dup = Dictionary(atoms=np.stack([atom, atom], axis=1),
                         params=(TissueParams(t2=80.0),
                                 TissueParams(t2=999.0)))
        assert dictionary_match(atom, dup).t2 == 80.0

    def test_compressed_domain_match(self, dictionary, ensemble,
                                     clean_signal):
        basis = compute_basis(ensemble, 3)
        alpha = basis.phi_k.conj().T @ clean_signal
        assert dictionary_match(alpha, dictionary).t2 == 100.0

    def test_noisy_monte_carlo_within_one_step(self, dictionary,
                                               clean_signal):
        rng = np.random.default_rng(77)
        hits = 0
        for _ in range(100):
            noisy = clean_signal + 0.02 / np.sqrt(2) * (
                rng.standard_normal(T) + 1j * rng.standard_normal(T))
            res = dictionary_match(noisy, dictionary)
            hits += abs(res.t2 - 100.0) <= 5.0
        assert hits >= 95


class TestFitMap:
    def test_uniform_region_matches_single_fit(self, clean_signal):
        stack = np.repeat(clean_signal[:, None], 9, axis=1).reshape(T, 3, 3)
        maps = fit_map(stack, SEQ, method="nlls")
        single = fit_voxel_nlls(clean_signal, SEQ)
        assert np.allclose(maps.t2, single.t2, atol=1e-9)
        assert np.allclose(maps.rho, single.rho, atol=1e-9)

    def test_two_region_noiseless(self, ensemble):
        basis = compute_basis(ensemble, 3)
        t2 = np.full((8, 8), 60.0)
        t2[:, 4:] = 150.0
        sig = _model_batch(t2.ravel(), SEQ, 1000.0, 1.0)
        alpha = basis.phi_k.conj().T @ sig
        maps = fit_map(alpha.reshape(3, 8, 8), SEQ, basis=basis,
                       method="subspace")
        for value in (60.0, 150.0):
            sel = t2 == value
            err = abs(np.mean(maps.t2[sel]) - value) / value
            assert err < 1e-3

    def test_voxel_order_invariance(self, clean_signal):
        rng = np.random.default_rng(6)
        stack = (rng.standard_normal((T, 4, 4))
                 + 1j * rng.standard_normal((T, 4, 4)))
        maps = fit_map(stack, SEQ, method="nlls")
        perm = rng.permutation(16)
        shuffled = stack.reshape(T, -1)[:, perm].reshape(T, 4, 4)
        maps_p = fit_map(shuffled, SEQ, method="nlls")
        assert np.allclose(maps_p.t2.ravel(), maps.t2.ravel()[perm],
                           equal_nan=True)

    def test_background_flagged(self, clean_signal):
        stack = np.zeros((T, 2, 2), complex)
        stack[:, 0, 0] = clean_signal
        maps = fit_map(stack, SEQ, method="nlls")
        assert not maps.failed[0, 0]
        assert maps.failed[1, 1] and math.isnan(maps.t2[1, 1])

    def test_dictionary_method(self, ensemble, clean_signal):
        basis = compute_basis(ensemble, 3)
        t2s = np.arange(20.0, 401.0, 5.0)
        dic = build_dictionary([TissueParams(t2=v) for v in t2s], SEQ, basis)
        alpha = basis.phi_k.conj().T @ clean_signal
        stack = np.repeat(alpha[:, None], 4, axis=1).reshape(3, 2, 2)
        maps = fit_map(stack, SEQ, basis=basis, method="dictionary",
                       dictionary=dic)
        assert np.all(maps.t2 == 100.0)

    def test_method_validation(self, clean_signal):
        stack = np.zeros((T, 2, 2), complex)
        with pytest.raises(ValueError):
            fit_map(stack, SEQ, method="magic")
        with pytest.raises(ValueError):
            fit_map(stack, SEQ, method="subspace")  # no basis
