"""Filter training: penalty taps, normal equations, CG against oracles."""

import numpy as np
import pytest

from dcfusion import dcf, grid, training
from dcfusion.errors import ConfigError, InvalidInputError, ShapeError


def make_bank(rng, shape=(16, 16), channels=3, samples=3, support=5,
              learning_rate=0.15, max_samples=10):
    label = training.gaussian_label(
        shape, training.LabelConfig(0.25, (5.0, 5.0)))
    mask = dcf.bowl_mask(shape, (5.0, 5.0))
    bank = dcf.FilterBank(label, dcf.reg_taps(mask, support),
                          learning_rate=learning_rate, max_samples=max_samples)
    spectra = [np.fft.fft2(rng.normal(size=(channels, *shape)), axes=(-2, -1))
               for _ in range(samples)]
    bank.set_initial_samples(spectra)
    return bank


def dense_operator_matrix(bank):
    "Assemble the normal-equation operator by probing with basis vectors."
    alphas = bank.weights.weights()
    c, (h, w) = bank.memory[0].shape[0], bank.grid_shape
    n = c * h * w
    m = np.zeros((n, n), dtype=np.complex128)
    for k in range(n):
        e = np.zeros(n, dtype=np.complex128)
        e[k] = 1.0
        m[:, k] = bank._apply_operator(e.reshape(c, h, w), alphas).ravel()
    return m


class TestRegularization:
    def test_bowl_values(self):
        mask = dcf.bowl_mask((16, 16), (4.0, 4.0), base=1e-2, edge_factor=10.0)
        np.testing.assert_allclose(mask[0, 0], 1e-2, atol=1e-15)
        np.testing.assert_allclose(mask.max(), 1e-1, atol=1e-15)
        # rises monotonically along the axis away from the centre
        axis = mask[:9, 0]
        assert np.all(np.diff(axis) > 0)

    def test_bowl_validation(self):
        with pytest.raises(ConfigError):
            dcf.bowl_mask((8, 8), (4.0, 4.0), base=0.0)
        with pytest.raises(ConfigError):
            dcf.bowl_mask((8, 8), (4.0, 4.0), edge_factor=0.5)

    def test_taps_identity_spatial_vs_fourier(self):
        # c^3 ||w_hat (*) f_hat||^2 == ||w_eff . f||^2 for the effective
        # mask, regardless of truncation
        rng = np.random.default_rng(91)
        mask = dcf.bowl_mask((12, 12), (4.0, 4.0))
        taps = dcf.reg_taps(mask, 5)
        w_eff = taps.effective_mask()
        c = grid.parseval_factor((12, 12))
        for _ in range(5):
            f = rng.normal(size=(12, 12))
            fh = np.fft.fft2(f)
            # one c from Parseval, c^2 from DFT(w . f) = c * (w_hat (*) f_hat)
            fourier_side = c ** 3 * np.sum(np.abs(taps.apply(fh)) ** 2)
            spatial_side = np.sum((w_eff * f) ** 2)
            np.testing.assert_allclose(fourier_side, spatial_side, rtol=1e-9)

    def test_full_support_reproduces_mask(self):
        rng = np.random.default_rng(92)
        mask = rng.uniform(0.01, 0.1, size=(5, 5))
        taps = dcf.reg_taps(mask, 5)
        np.testing.assert_allclose(taps.effective_mask(), mask, atol=1e-12)

    def test_adjoint_pairing(self):
        rng = np.random.default_rng(93)
        mask = dcf.bowl_mask((10, 10), (3.0, 3.0))
        taps = dcf.reg_taps(mask, 5)
        u = rng.normal(size=(10, 10)) + 1j * rng.normal(size=(10, 10))
        v = rng.normal(size=(10, 10)) + 1j * rng.normal(size=(10, 10))
        lhs = np.sum((np.conj(taps.apply(u)) * v).real)
        rhs = np.sum((np.conj(u) * taps.apply_adjoint(v)).real)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10)

    def test_taps_validation(self):
        mask = dcf.bowl_mask((8, 8), (3.0, 3.0))
        with pytest.raises(ConfigError):
            dcf.reg_taps(mask, 4)
        with pytest.raises(ConfigError):
            dcf.reg_taps(mask, 9)


class TestProjection:
    def test_low_rank_data_fully_retained(self):
        rng = np.random.default_rng(101)
        basis = rng.normal(size=(2, 8, 8))
        mix = rng.normal(size=(6, 2))
        stack = np.einsum("dr,rhw->dhw", mix, basis)
        result = dcf.init_projection([stack], 2)
        assert result.matrix.shape == (6, 2)
        np.testing.assert_allclose(result.retained_energy_fraction, 1.0,
                                   atol=1e-10)
        assert not result.rank_deficient
        deficient = dcf.init_projection([stack], 4)
        assert deficient.rank_deficient

    def test_retained_fraction_matches_svd(self):
        rng = np.random.default_rng(102)
        stack = rng.normal(size=(7, 10, 10))
        result = dcf.init_projection([stack], 3)
        sv = np.linalg.svd(stack.reshape(7, -1), compute_uv=False)
        np.testing.assert_allclose(result.retained_energy_fraction,
                                   np.sum(sv[:3] ** 2) / np.sum(sv ** 2),
                                   rtol=1e-10)

    def test_matrix_is_orthonormal(self):
        rng = np.random.default_rng(103)
        stack = rng.normal(size=(5, 6, 6))
        p = dcf.init_projection([stack], 3).matrix
        np.testing.assert_allclose(p.T @ p, np.eye(3), atol=1e-10)

    def test_projection_application(self):
        rng = np.random.default_rng(104)
        stack = rng.normal(size=(4, 5, 5))
        p = rng.normal(size=(4, 2))
        out = dcf.project_channels(stack, p)
        assert out.shape == (2, 5, 5)
        np.testing.assert_allclose(out[0], np.tensordot(p[:, 0], stack, axes=1),
                                   atol=1e-12)
        with pytest.raises(ShapeError):
            dcf.project_channels(rng.normal(size=(3, 5, 5)), p)

    def test_degenerate_inputs(self):
        with pytest.raises(InvalidInputError):
            dcf.init_projection([], 2)
        with pytest.raises(InvalidInputError):
            dcf.init_projection([np.zeros((3, 4, 4))], 2)
        with pytest.raises(ConfigError):
            dcf.init_projection([np.ones((3, 4, 4))], 5)


class TestOperator:
    def test_self_adjoint_and_psd(self):
        rng = np.random.default_rng(111)
        bank = make_bank(rng)
        alphas = bank.weights.weights()
        for _ in range(5):
            u = rng.normal(size=(3, 16, 16)) + 1j * rng.normal(size=(3, 16, 16))
            v = rng.normal(size=(3, 16, 16)) + 1j * rng.normal(size=(3, 16, 16))
            au = bank._apply_operator(u, alphas)
            av = bank._apply_operator(v, alphas)
            lhs = np.sum((np.conj(au) * v).real)
            rhs = np.sum((np.conj(u) * av).real)
            np.testing.assert_allclose(lhs, rhs, rtol=1e-9)
            assert np.sum((np.conj(u) * au).real) >= 0

    def test_complex_linearity(self):
        rng = np.random.default_rng(112)
        bank = make_bank(rng)
        alphas = bank.weights.weights()
        v = rng.normal(size=(3, 16, 16)) + 1j * rng.normal(size=(3, 16, 16))
        np.testing.assert_allclose(bank._apply_operator(1j * v, alphas),
                                   1j * bank._apply_operator(v, alphas),
                                   rtol=1e-10)


class TestTraining:
    def test_matches_closed_form_ridge(self):
        # single channel, single sample, constant mask: the solution has
        # a per-bin closed form
        rng = np.random.default_rng(121)
        shape = (16, 16)
        label = training.gaussian_label(
            shape, training.LabelConfig(0.25, (4.0, 4.0)))
        w0 = 0.3
        bank = dcf.FilterBank(label, dcf.constant_mask_taps(shape, w0),
                              learning_rate=0.1, max_samples=4)
        x = np.fft.fft2(rng.normal(size=(1, *shape)), axes=(-2, -1))
        bank.set_initial_samples([x])
        bank.train(600, tolerance=1e-13)
        expected = dcf.closed_form_single_channel(
            x[0], bank.label_spectrum, w0 ** 2)
        np.testing.assert_allclose(bank.filters[0], expected, atol=1e-8)

    def test_matches_dense_direct_solve(self):
        rng = np.random.default_rng(122)
        bank = make_bank(rng, shape=(16, 16), channels=3, samples=4)
        report = bank.train(400, tolerance=1e-12)
        m = dense_operator_matrix(bank)
        b = bank._rhs(bank.weights.weights()).ravel()
        direct = np.linalg.solve(m, b).reshape(3, 16, 16)
        scale = np.max(np.abs(direct))
        assert np.max(np.abs(bank.filters - direct)) <= 1e-5 * scale
        assert report.final_loss <= report.initial_loss

    def test_loss_history_monotone(self):
        rng = np.random.default_rng(123)
        bank = make_bank(rng)
        report = bank.train(60)
        hist = np.array(report.loss_history)
        assert np.all(np.diff(hist) <= 1e-12 * max(1.0, hist[0]))

    def test_loss_history_matches_direct_evaluation(self):
        rng = np.random.default_rng(124)
        bank = make_bank(rng)
        report = bank.train(25)
        np.testing.assert_allclose(report.final_loss, bank.loss(),
                                   rtol=1e-8, atol=1e-12)
        zero = np.zeros_like(bank.filters)
        np.testing.assert_allclose(report.initial_loss, bank.loss(zero),
                                   rtol=1e-8)

    def test_residual_near_zero_at_convergence(self):
        rng = np.random.default_rng(125)
        bank = make_bank(rng, samples=2)
        report = bank.train(800, tolerance=1e-8)
        assert report.converged
        assert report.relative_residual <= 1e-8

    def test_filters_stay_hermitian(self):
        # iterate asymmetry tracks the residual, so train to a tight one
        rng = np.random.default_rng(126)
        bank = make_bank(rng)
        bank.train(800, tolerance=1e-9)
        for channel in bank.filters:
            assert grid.is_hermitian(channel, rtol=1e-6)

    def test_score_map_is_real_and_peaks_at_label(self):
        rng = np.random.default_rng(127)
        bank = make_bank(rng, samples=1)
        bank.train(200, tolerance=1e-10)
        score = bank.score_map(bank.memory[0])
        assert score.dtype == np.float64
        assert np.unravel_index(score.argmax(), score.shape) == (0, 0)

    def test_warm_start_continues_descent(self):
        rng = np.random.default_rng(128)
        bank = make_bank(rng)
        first = bank.train(5)
        second = bank.train(5)
        assert second.initial_loss <= first.final_loss + 1e-12
        assert second.final_loss <= second.initial_loss + 1e-12

    def test_zero_iterations_is_noop(self):
        rng = np.random.default_rng(129)
        bank = make_bank(rng)
        before = bank.filters.copy()
        report = bank.train(0)
        np.testing.assert_array_equal(bank.filters, before)
        assert report.iterations_run == 0


class TestMemory:
    def test_trim_keeps_newest(self):
        rng = np.random.default_rng(131)
        bank = make_bank(rng, samples=2, max_samples=3)
        marker = np.fft.fft2(rng.normal(size=(3, 16, 16)), axes=(-2, -1))
        bank.add_sample(marker)
        bank.add_sample(2 * marker)
        assert len(bank.memory) == 3
        assert len(bank.weights) == 3
        np.testing.assert_array_equal(bank.memory[0], 2 * marker)
        np.testing.assert_array_equal(bank.memory[1], marker)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(132)
        bank = make_bank(rng)
        with pytest.raises(ShapeError):
            bank.add_sample(np.zeros((3, 8, 8), dtype=np.complex128))
        with pytest.raises(ShapeError):
            bank.add_sample(np.zeros((5, 16, 16), dtype=np.complex128))

    def test_untrained_bank_refuses_scoring(self):
        label = training.gaussian_label(
            (8, 8), training.LabelConfig(0.25, (3.0, 3.0)))
        bank = dcf.FilterBank(label, dcf.constant_mask_taps((8, 8), 0.1),
                              learning_rate=0.1, max_samples=2)
        with pytest.raises(InvalidInputError):
            bank.score_map(np.zeros((1, 8, 8), dtype=np.complex128))
        with pytest.raises(InvalidInputError):
            bank.train(5)
