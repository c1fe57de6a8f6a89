import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decenteq import equalize, model, se


def qpsk_posterior_closed_form(z, tau):
    # per-dimension form for the unit-energy 4-point alphabet
    d = math.sqrt(0.5)
    return d * (math.tanh(math.sqrt(2) * z.real / tau)
                + 1j * math.tanh(math.sqrt(2) * z.imag / tau))


class TestPosterior:
    def test_concentrates_at_point_for_small_tau(self, qpsk):
        p = qpsk.points[2]
        f, g = equalize.posterior_mean_var(p, 1e-8, qpsk)
        assert abs(f - p) < 1e-12
        assert g < 1e-12

    def test_symmetric_at_origin(self, qpsk):
        f, g = equalize.posterior_mean_var(0.0 + 0.0j, 0.7, qpsk)
        assert abs(f) < 1e-15
        assert g == pytest.approx(qpsk.es, abs=1e-12)

    def test_matches_qpsk_closed_form(self, qpsk):
        z, tau = 0.3 + 0.1j, 0.5
        f, _ = equalize.posterior_mean_var(z, tau, qpsk)
        assert f == pytest.approx(qpsk_posterior_closed_form(z, tau), rel=1e-12)

    @settings(deadline=None, max_examples=200)
    @given(zr=st.floats(-5, 5), zi=st.floats(-5, 5),
           tau=st.floats(1e-3, 1e3))
    def test_closed_form_property(self, qpsk, zr, zi, tau):
        f, g = equalize.posterior_mean_var(complex(zr, zi), tau, qpsk)
        ref = qpsk_posterior_closed_form(complex(zr, zi), tau)
        assert abs(f - ref) <= 1e-9 * max(1.0, abs(ref))
        assert 0.0 <= g <= qpsk.es + 1e-12

    @settings(deadline=None, max_examples=100)
    @given(zr=st.floats(-1e8, 1e8), zi=st.floats(-1e8, 1e8),
           tau=st.floats(1e-12, 1e6))
    def test_extreme_inputs_never_nan(self, qam16, zr, zi, tau):
        f, g = equalize.posterior_mean_var(complex(zr, zi), tau, qam16)
        assert np.isfinite(f) and np.isfinite(g)
        assert abs(f) <= np.max(np.abs(qam16.points)) + 1e-9
        assert g >= 0.0

    def test_nonpositive_tau_rejected(self, qpsk):
        with pytest.raises(ValueError, match="tau"):
            equalize.posterior_mean_var(0.1 + 0j, 0.0, qpsk)
        with pytest.raises(ValueError, match="tau"):
            equalize.posterior_mean_var(0.1 + 0j, -1.0, qpsk)

    def test_vectorized_matches_scalar(self, qam16):
        rng = np.random.default_rng(0)
        z = rng.normal(size=7) + 1j * rng.normal(size=7)
        fv, gv = equalize.posterior_mean_var(z, 0.3, qam16)
        for k in range(7):
            f, g = equalize.posterior_mean_var(complex(z[k]), 0.3, qam16)
            assert fv[k] == pytest.approx(f, rel=1e-14)
            assert gv[k] == pytest.approx(g, rel=1e-12, abs=1e-15)


class TestHardDecisions:
    def test_exact_symbols_zero_ser(self, qpsk):
        s0 = qpsk.points[np.array([0, 1, 2, 3, 0])]
        assert equalize.ser(equalize.hard_decide(s0, qpsk), s0) == 0.0

    def test_antipodal_full_ser(self, qpsk):
        s0 = qpsk.points[np.array([0, 1, 2, 3])]
        assert equalize.ser(equalize.hard_decide(-s0, qpsk), s0) == 1.0

    def test_uniform_random_ser_three_quarters(self, qpsk):
        rng = np.random.default_rng(123)
        n = 1_000_000
        z = rng.uniform(-3, 3, n) + 1j * rng.uniform(-3, 3, n)
        s0 = qpsk.points[rng.integers(0, 4, n)]
        assert equalize.ser(equalize.hard_decide(z, qpsk), s0) == \
            pytest.approx(0.75, abs=0.01)

    def test_tie_breaks_to_lowest_index(self, bpsk):
        # 0 is equidistant from +1 and -1; index 0 wins
        assert equalize.hard_decide(0.0 + 0j, bpsk) == bpsk.points[0]

    @settings(deadline=None, max_examples=150)
    @given(zr=st.floats(1e-4, 50), zi=st.floats(1e-4, 50),
           sr=st.sampled_from([1.0, -1.0]), si=st.sampled_from([1.0, -1.0]),
           scale=st.floats(1e-3, 1e3))
    def test_positive_scale_invariance(self, qpsk, zr, zi, sr, si, scale):
        z = complex(sr * zr, si * zi)
        assert equalize.hard_decide(z, qpsk) == equalize.hard_decide(scale * z, qpsk)

    def test_ser_shape_mismatch(self, qpsk):
        with pytest.raises(ValueError):
            equalize.ser(qpsk.points[:3], qpsk.points[:2])


class TestLama:
    def test_noiseless_scalar_channel_recovers(self, qpsk):
        cfg = model.SystemConfig(1, 1, 0.0, qpsk)
        for k in range(4):
            s0 = qpsk.points[[k]]
            y_mrc = s0.copy()          # H = [[1]], n = 0
            gram = np.array([[1.0 + 0j]])
            out = equalize.lama_pd(y_mrc, gram, cfg, max_iter=50)
            assert abs(out.z[0] - s0[0]) < 1e-6
            assert out.hard[0] == s0[0]
        phis = equalize.lama_phi_trajectory(y_mrc, gram, cfg, max_iter=50,
                                            tol=1e-12)
        assert phis[-1] < 1e-8

    def test_initial_state_matches_prior(self, qpsk):
        st0 = equalize.lama_initial_state(16, qpsk, 0.1, 0.5)
        assert np.all(st0.s == qpsk.mean)
        assert st0.phi == qpsk.var_s
        assert np.all(st0.v == 0)
        assert st0.tau == pytest.approx(0.1 + 0.5 * qpsk.var_s)

    def test_step_agrees_with_run(self, cfg96, products):
        real = model.draw_channel(cfg96, model.stream(21))
        y_mrc, gram = products(real)
        con = cfg96.constellation
        state = equalize.lama_initial_state(cfg96.u, con, cfg96.n0, cfg96.beta)
        for _ in range(3):
            z, state = equalize.lama_step(state, y_mrc, gram, con,
                                          cfg96.n0, cfg96.beta)
        z3, tau3, phis, _ = equalize.lama_batch(y_mrc[None], gram[None], con,
                                                cfg96.n0, cfg96.beta,
                                                max_iter=3, tol=0.0)
        assert np.allclose(z, z3[0], rtol=1e-12)
        assert state.phi == pytest.approx(phis[0, -1], rel=1e-12)

    def test_pd_from_fused_equals_centralized(self, cfg96, products):
        real = model.draw_channel(cfg96, model.stream(22))
        views = model.split_clusters(real, cfg96)
        y_mrc, gram = model.fuse_partials(views)
        out_fused = equalize.lama_pd(y_mrc, gram, cfg96)
        y_mrc_d, gram_d = products(real)
        out_direct = equalize.lama_pd(y_mrc_d, gram_d, cfg96)
        rel = np.max(np.abs(out_fused.z - out_direct.z)) / np.max(np.abs(out_direct.z))
        assert rel < 1e-10
        # same inputs -> bit-identical outputs (pure function)
        again = equalize.lama_pd(y_mrc, gram, cfg96)
        assert np.array_equal(again.z, out_fused.z)
        assert np.array_equal(again.sigma2, out_fused.sigma2)

    def test_empirical_error_variance_tracks_prediction(self, qpsk):
        # 1e4 trials of 96x16; mean per-user error variance within 5% of the
        # scalar-recursion prediction
        beta = 16 / 96
        n0 = beta / 10 ** 0.2
        cfg = model.SystemConfig(96, 16, n0, qpsk)
        pred = se.se_fixed_point("lama", beta, n0, qpsk).fixed_point
        trials, chunk = 10_000, 500
        acc = 0.0
        for start in range(0, trials, chunk):
            h = np.empty((chunk, 96, 16), complex)
            y = np.empty((chunk, 96), complex)
            s0 = np.empty((chunk, 16), complex)
            for j in range(chunk):
                real = model.draw_channel(cfg, model.stream(99, start + j))
                h[j], y[j], s0[j] = real.h, real.y, real.s0
            y_mrc = np.einsum("tbi,tb->ti", h.conj(), y)
            gram = np.einsum("tbi,tbj->tij", h.conj(), h)
            z, _, _, _ = equalize.lama_batch(y_mrc, gram, qpsk, n0, beta)
            acc += np.sum(np.abs(z - s0) ** 2) / 16
        assert acc / trials == pytest.approx(pred, rel=0.05)

    def test_onsager_term_matters(self, qpsk):
        # dropping the correction term must strictly degrade detection
        n0 = 0.5 / 10 ** 0.8
        cfg = model.SystemConfig(32, 16, n0, qpsk)
        err_on = err_off = 0
        trials, chunk = 10_000, 500
        for start in range(0, trials, chunk):
            h = np.empty((chunk, 32, 16), complex)
            y = np.empty((chunk, 32), complex)
            s0 = np.empty((chunk, 16), complex)
            for j in range(chunk):
                real = model.draw_channel(cfg, model.stream(17, start + j))
                h[j], y[j], s0[j] = real.h, real.y, real.s0
            y_mrc = np.einsum("tbi,tb->ti", h.conj(), y)
            gram = np.einsum("tbi,tbj->tij", h.conj(), h)
            for onsager in (True, False):
                z, _, _, _ = equalize.lama_batch(y_mrc, gram, qpsk, n0,
                                                 cfg.beta, onsager=onsager)
                errs = int(np.sum(equalize.hard_decide(z, qpsk) != s0))
                if onsager:
                    err_on += errs
                else:
                    err_off += errs
        assert err_off > err_on

    def test_phi_nonincreasing_at_high_snr(self, qpsk):
        # large system, low noise: the average message variance shrinks
        # monotonically after the first update
        beta = 32 / 256
        n0 = beta / 10 ** 1.5
        cfg = model.SystemConfig(256, 32, n0, qpsk)
        for seed in range(10):
            real = model.draw_channel(cfg, model.stream(31, seed))
            phis = equalize.lama_phi_trajectory(real.h.conj().T @ real.y,
                                                real.h.conj().T @ real.h,
                                                cfg, max_iter=20, tol=0.0)
            assert np.all(np.diff(phis) <= 1e-9)

    def test_nonfinite_input_raises_with_iteration(self, cfg96, products):
        real = model.draw_channel(cfg96, model.stream(23))
        y_mrc, gram = products(real)
        y_bad = y_mrc.copy()
        y_bad[0] = np.nan
        with pytest.raises(RuntimeError, match="iteration 1"):
            equalize.lama_pd(y_bad, gram, cfg96)

    def test_sigma2_positive_and_constant(self, cfg96, products):
        real = model.draw_channel(cfg96, model.stream(24))
        out = equalize.lama_pd(*products(real), cfg96)
        assert np.all(out.sigma2 > 0)
        assert np.all(out.sigma2 == out.sigma2[0])
        assert np.array_equal(out.hard, equalize.hard_decide(out.z, cfg96.constellation))


class TestLinear:
    def test_identity_gram_zf_passthrough(self, qpsk):
        cfg = model.SystemConfig(16, 4, 0.1, qpsk)
        rng = np.random.default_rng(0)
        y_mrc = rng.normal(size=4) + 1j * rng.normal(size=4)
        out = equalize.linear_pd(y_mrc, np.eye(4, dtype=complex), cfg, "zf")
        assert np.allclose(out.z, y_mrc, rtol=0, atol=1e-14)
        assert np.allclose(out.sigma2, cfg.n0, rtol=1e-12)

    def test_mrc_reports_operating_point_variance(self, cfg96, products):
        real = model.draw_channel(cfg96, model.stream(25))
        y_mrc, _ = products(real)
        out = equalize.linear_pd(y_mrc, np.eye(16, dtype=complex), cfg96, "mrc")
        assert np.array_equal(out.z, y_mrc)
        assert np.allclose(out.sigma2, cfg96.n0 + cfg96.beta * cfg96.constellation.var_s)

    def test_lmmse_tends_to_zf_as_noise_vanishes(self, qpsk, products):
        cfg_lo = model.SystemConfig(96, 16, 1e-12, qpsk)
        real = model.draw_channel(cfg_lo, model.stream(26))
        y_mrc, gram = products(real)
        z_l = equalize.linear_pd(y_mrc, gram, cfg_lo, "lmmse").z
        z_z = equalize.linear_pd(y_mrc, gram, cfg_lo, "zf").z
        assert np.allclose(z_l, z_z, rtol=1e-8)

    def test_lmmse_variance_matches_empirical(self, qpsk):
        # the reported n0 * diag((G + n0/Es I)^-1) equals the measured
        # per-user error variance of the filter output
        beta = 16 / 96
        n0 = beta / 10 ** 0.2
        cfg = model.SystemConfig(96, 16, n0, qpsk)
        real = model.draw_channel(cfg, model.stream(27))
        gram = real.h.conj().T @ real.h
        reported = equalize.linear_pd(real.h.conj().T @ real.y, gram, cfg,
                                      "lmmse").sigma2
        trials = 4000
        acc = np.zeros(16)
        for t in range(trials):
            rng = model.stream(28, t)
            s0 = qpsk.points[rng.integers(0, 4, 16)]
            n = model.complex_gaussian(rng, (96,), n0)
            y = real.h @ s0 + n
            z = equalize.linear_pd(real.h.conj().T @ y, gram, cfg, "lmmse").z
            acc += np.abs(z - s0) ** 2
        assert np.allclose(acc / trials, reported, rtol=0.15)

    def test_lmmse_ser_tracks_fixed_point_prediction(self, qpsk):
        # 96x16 at Es/N0 = 10 dB, 1e5 trials: simulated SER within the
        # 0.5 dB-shift band around the asymptotic prediction, with 3-sigma
        # Monte Carlo slack on top
        from decenteq import info
        beta, n0 = 16 / 96, 0.1
        cfg = model.SystemConfig(96, 16, n0, qpsk)
        trials, chunk, errors = 100_000, 1000, 0
        for start in range(0, trials, chunk):
            h = np.empty((chunk, 96, 16), complex)
            y = np.empty((chunk, 96), complex)
            s0 = np.empty((chunk, 16), complex)
            for j in range(chunk):
                real = model.draw_channel(cfg, model.stream(29, start + j))
                h[j], y[j], s0[j] = real.h, real.y, real.s0
            y_mrc = np.einsum("tbi,tb->ti", h.conj(), y)
            gram = np.einsum("tbi,tbj->tij", h.conj(), h)
            z, _ = equalize.linear_batch(y_mrc, gram, qpsk, n0, beta, "lmmse")
            errors += int(np.sum(equalize.hard_decide(z, qpsk) != s0))
        ser_hat = errors / (trials * 16)
        mc_std = math.sqrt(ser_hat * (1 - ser_hat) / trials)
        shift = 10 ** 0.05
        lo = info.awgn_ser(
            qpsk, se.se_fixed_point("lmmse", beta, n0 / shift, qpsk).fixed_point)
        hi = info.awgn_ser(
            qpsk, se.se_fixed_point("lmmse", beta, n0 * shift, qpsk).fixed_point)
        assert lo - 3 * mc_std <= ser_hat <= hi + 3 * mc_std

    def test_zf_singular_gram_advises(self, qpsk):
        cfg = model.SystemConfig(96, 16, 0.1, qpsk)
        with pytest.raises(ValueError, match="U < B"):
            equalize.linear_pd(np.zeros(16, complex), np.zeros((16, 16), complex),
                               cfg, "zf")

    def test_unknown_kind_rejected(self, cfg96, products):
        real = model.draw_channel(cfg96, model.stream(30))
        with pytest.raises(ValueError, match="unknown"):
            equalize.linear_pd(*products(real), cfg96, "dfe")


class TestPipelines:
    @pytest.mark.parametrize("kind", ["mrc", "zf", "lmmse", "lama"])
    def test_pd_equals_centralized(self, cfg96, products, kind):
        real = model.draw_channel(cfg96, model.stream(33))
        views = model.split_clusters(real, cfg96)
        out_pd = equalize.equalize_pd(views, cfg96, kind)
        y_mrc, gram = products(real)
        if kind == "lama":
            out_c = equalize.lama_pd(y_mrc, gram, cfg96)
        else:
            out_c = equalize.linear_pd(y_mrc, gram, cfg96, kind)
        assert np.allclose(out_pd.z, out_c.z, rtol=1e-10, atol=1e-13)
        assert np.allclose(out_pd.sigma2, out_c.sigma2, rtol=1e-10)

    @pytest.mark.parametrize("kind", ["mrc", "zf", "lmmse", "lama"])
    def test_fd_single_cluster_degenerates_to_pd(self, qpsk, kind):
        cfg = model.SystemConfig(64, 16, 0.08, qpsk)
        real = model.draw_channel(cfg, model.stream(34))
        views = model.split_clusters(real, cfg)
        out_fd = equalize.equalize_fd(views, cfg, kind)
        out_pd = equalize.equalize_pd(views, cfg, kind)
        assert np.array_equal(out_fd.z, out_pd.z)
        assert np.array_equal(out_fd.sigma2, out_pd.sigma2)

    def test_fd_equal_clusters_symmetric_fusion(self):
        z = np.stack([np.full(4, 1 + 1j), np.full(4, 1 + 1j), np.full(4, 1 + 1j)])
        s2 = np.full((3, 4), 0.6)
        z_f, s2_f = equalize.fuse_soft_symbols(z, s2)
        assert np.allclose(z_f, 1 + 1j, rtol=1e-15)
        assert np.allclose(s2_f, 0.2, rtol=1e-12)

    def test_fd_output_finite_positive(self, cfg96):
        real = model.draw_channel(cfg96, model.stream(35))
        views = model.split_clusters(real, cfg96)
        for kind in equalize.KINDS:
            out = equalize.equalize_fd(views, cfg96, kind)
            assert np.all(np.isfinite(out.z))
            assert np.all(out.sigma2 > 0)

    def test_fd_cluster_failure_names_cluster(self, cfg96):
        real = model.draw_channel(cfg96, model.stream(36))
        views = model.split_clusters(real, cfg96)
        broken = model.ClusterView(1, views[1].weight, views[1].h, views[1].y,
                                   views[1].y_mrc,
                                   np.zeros_like(views[1].gram))
        with pytest.raises(RuntimeError, match="cluster 1"):
            equalize.equalize_fd([views[0], broken, views[2]], cfg96, "zf")

    def test_fd_zf_needs_enough_rows_per_cluster(self, qpsk):
        cfg = model.SystemConfig(24, 16, 0.1, qpsk, model.equal_weights(3))
        real = model.draw_channel(cfg, model.stream(37))
        views = model.split_clusters(real, cfg)
        with pytest.raises(ValueError, match="B_c"):
            equalize.equalize_fd(views, cfg, "zf")

    def test_fd_error_rate_between_pd_and_mrc(self, qpsk):
        # end-to-end sanity over a few hundred trials
        beta = 16 / 96
        n0 = beta / 10 ** 0.1
        cfg = model.SystemConfig(96, 16, n0, qpsk, model.equal_weights(3))
        e_pd = e_fd = 0
        trials = 400
        for t in range(trials):
            real = model.draw_channel(cfg, model.stream(38, t))
            views = model.split_clusters(real, cfg)
            e_pd += np.sum(equalize.equalize_pd(views, cfg, "lama").hard != real.s0)
            e_fd += np.sum(equalize.equalize_fd(views, cfg, "lama").hard != real.s0)
        assert e_pd <= e_fd


class TestWeights:
    @settings(deadline=None, max_examples=200)
    @given(vals=st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=8))
    def test_weights_sum_exactly_one(self, vals):
        nu = equalize.inverse_variance_weights(np.array(vals))
        assert math.fsum(nu) == 1.0
        assert np.all(nu > 0)

    def test_weights_proportional_to_inverse_variance(self):
        nu = equalize.inverse_variance_weights(np.array([1.0, 3.0]))
        assert nu[0] == pytest.approx(0.75, abs=1e-15)
        assert nu[1] == pytest.approx(0.25, abs=1e-15)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            equalize.inverse_variance_weights(np.array([1.0, 0.0]))
