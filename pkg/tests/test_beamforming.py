import numpy as np
import pytest
from scipy.linalg import subspace_angles

from cellfree_fdd import (Streams, SystemConfig, assemble, build_beamformers,
                          build_layout, closed_form_sinr, draw_channel,
                          equal_power_gamma, exact_estimate, precoder_amf,
                          precoder_ammse, precoder_azf, system_noise_var)
from cellfree_fdd.channel import steering_from_spatial_freq


def steering_cols(ups_list, n):
    return steering_from_spatial_freq(np.asarray(ups_list, float), n).T


def exact_setup(seed=5, **overrides):
    kw = dict(num_aps=3, antennas_per_ap=16, num_users=4, num_paths=2,
              pilot_len=4, noise_var=system_noise_var(10.0, 1.0),
              rng_seed=seed)
    kw.update(overrides)
    cfg = SystemConfig(**kw)
    streams = Streams.for_trial(cfg, 0)
    real = draw_channel(cfg, build_layout(cfg, streams), streams)
    return cfg, exact_estimate(real, cfg)


class TestAmf:
    def test_single_path_scaling(self):
        a = steering_cols([0.4], 8)
        block = precoder_amf(a, np.array([4.0]))
        assert np.allclose(block, 2.0 * a)

    def test_frobenius_norm_is_total_gain(self):
        a = steering_cols([0.4, -1.1, 2.0], 16)
        beta = np.array([0.5, 2.0, 3.5])
        block = precoder_amf(a, beta)
        assert np.sum(np.abs(block) ** 2) == pytest.approx(beta.sum())

    def test_orthogonal_on_grid_angles_diagonal_gram(self):
        n = 16
        a = steering_cols(2 * np.pi * np.array([2, 7, 12]) / n, n)
        beta = np.array([1.0, 4.0, 0.25])
        block = precoder_amf(a, beta)
        gram = block.conj().T @ block
        assert np.allclose(gram, np.diag(beta), atol=1e-12)


class TestAzf:
    def test_single_user_single_path_matched(self):
        a = steering_cols([0.7], 8)[None]                     # (K=1, N, L=1)
        blocks, ill = precoder_azf(a, np.array([[2.0]]))
        assert not ill
        w = blocks[0, :, 0]
        inner = a[0, :, 0].conj() @ w
        assert inner.real > 0 and abs(inner.imag) < 1e-12
        cos = abs(a[0, :, 0].conj() @ w) / np.linalg.norm(w)
        assert cos == pytest.approx(1.0, abs=1e-12)

    def test_detection_identity_random_instance(self):
        cfg, est = exact_setup()
        beams = build_beamformers(est, cfg, "a-zf", "dl")
        for m in range(cfg.num_aps):
            for k in range(cfg.num_users):
                ab_k = est.steering[m, k] * np.sqrt(est.beta[m, k])
                for i in range(cfg.num_users):
                    if i == k:
                        continue
                    leak = np.abs(ab_k.conj().T @ beams.vectors[m, i]).max()
                    assert leak < 1e-10 * np.linalg.norm(ab_k)

    def test_full_rank_gram_identity(self):
        # K*L = N: stacked (A B)^H G = identity
        n = 8
        rng = np.random.default_rng(0)
        ups = rng.uniform(-np.pi, np.pi, size=(4, 2))
        steer = np.stack([steering_cols(u, n) for u in ups])
        beta = rng.uniform(0.5, 2.0, size=(4, 2))
        blocks, ill = precoder_azf(steer, beta)
        assert not ill
        stacked_ab = (steer * np.sqrt(beta)[:, None, :]) \
            .transpose(1, 0, 2).reshape(n, 8)
        stacked_g = blocks.transpose(1, 0, 2).reshape(n, 8)
        assert np.max(np.abs(stacked_ab.conj().T @ stacked_g - np.eye(8))) \
            < 1e-9

    def test_overloaded_stack_flagged(self):
        n = 8
        rng = np.random.default_rng(1)
        ups = rng.uniform(-np.pi, np.pi, size=(5, 2))   # 10 columns > 8
        steer = np.stack([steering_cols(u, n) for u in ups])
        _, ill = precoder_azf(steer, np.ones((5, 2)))
        assert ill

    def test_zero_gain_paths_skipped(self):
        n = 8
        ups = np.array([[0.3, 1.1], [-0.9, 2.2]])
        steer = np.stack([steering_cols(u, n) for u in ups])
        beta = np.array([[1.0, 0.0], [2.0, 1.0]])
        blocks, ill = precoder_azf(steer, beta)
        assert not ill
        assert np.allclose(blocks[0, :, 1], 0.0)
        live = steer[0, :, 0] * np.sqrt(beta[0, 0])
        assert abs(live.conj() @ blocks[1, :, 0]) < 1e-10


class TestAmmse:
    def test_inverse_correctness(self):
        rng = np.random.default_rng(2)
        k, n, el = 3, 12, 2
        steer = np.stack([steering_cols(rng.uniform(-np.pi, np.pi, el), n)
                          for _ in range(k)])
        beta = rng.uniform(0.5, 2.0, (k, el))
        su2 = np.full(k, 1e-3)
        sb2 = np.full(k, 1e-4)
        noise = 0.1
        blocks = precoder_ammse(steer, beta, noise, su2, sb2)
        e = np.arange(n)[:, None]
        cov = noise * np.eye(n, dtype=complex)
        for j in range(k):
            ab = steer[j] * np.sqrt(beta[j])
            cov += ab @ ab.conj().T
            cov += su2[j] * (e * ab) @ (e * ab).conj().T
            cov += su2[j] * sb2[j] * (e * steer[j]) @ (e * steer[j]).conj().T
            cov += sb2[j] * steer[j] @ steer[j].conj().T
        for j in range(k):
            rhs = steer[j] * np.sqrt(beta[j])
            assert np.max(np.abs(cov @ blocks[j] - rhs)) < 1e-8

    def test_high_noise_limit_is_matched_filter(self):
        cfg, est = exact_setup()
        loud = cfg.with_overrides(noise_var=1e6 * est.beta.max())
        mmse = build_beamformers(est, loud, "a-mmse", "dl")
        mf = build_beamformers(est, loud, "a-mf", "dl")
        v1 = mmse.vectors.reshape(-1, cfg.antennas_per_ap)
        v2 = mf.vectors.reshape(-1, cfg.antennas_per_ap)
        cos = np.abs(np.einsum("in,in->i", v1.conj(), v2)) \
            / (np.linalg.norm(v1, axis=1) * np.linalg.norm(v2, axis=1))
        assert (cos > 0.999).all()

    def test_low_noise_limit_reaches_zf_subspace(self):
        cfg, est = exact_setup()
        quiet = cfg.with_overrides(noise_var=1e-9 * est.beta.min())
        mmse = build_beamformers(est, quiet, "a-mmse", "dl")
        zf = build_beamformers(est, quiet, "a-zf", "dl")
        for m in range(cfg.num_aps):
            b1 = mmse.blocks[m].transpose(1, 0, 2) \
                .reshape(cfg.antennas_per_ap, -1)
            b2 = zf.blocks[m].transpose(1, 0, 2) \
                .reshape(cfg.antennas_per_ap, -1)
            assert subspace_angles(b1, b2).max() < 1e-3

    def test_high_snr_sinr_matches_zf_within_tenth_db(self):
        cfg, est = exact_setup()
        # push the noise well below every link so both nullers converge
        cfg = cfg.with_overrides(noise_var=float(est.beta.sum(-1).min()) * 1e-6)
        mmse = build_beamformers(est, cfg, "a-mmse", "dl")
        zf = build_beamformers(est, cfg, "a-zf", "dl")
        s1 = closed_form_sinr(est, mmse, cfg)
        s2 = closed_form_sinr(est, zf, cfg)
        assert np.max(np.abs(10 * np.log10(s1 / s2))) < 0.1


class TestAssemble:
    def test_single_column_unit_norm(self):
        g = np.array([[1.0 + 1j], [2.0], [0.5j]])
        vec, zero = assemble(g, np.array([1.0]), "dl")
        assert not zero
        assert np.linalg.norm(vec) == pytest.approx(1.0)

    def test_basis_weight_selects_column(self):
        rng = np.random.default_rng(3)
        g = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
        vec, _ = assemble(g, np.array([0.0, 0.0, 1.0]), "ul")
        assert np.allclose(vec, g[:, 2] / np.linalg.norm(g, "fro"))

    def test_zero_block_flagged(self):
        vec, zero = assemble(np.zeros((4, 2)), np.ones(2), "dl")
        assert zero and np.allclose(vec, 0.0)

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError):
            assemble(np.ones((2, 1)), np.ones(1), "sideways")

    def test_default_dl_power_budget_met_exactly(self):
        cfg, est = exact_setup()
        for scheme in ("a-mf", "a-zf", "a-mmse"):
            beams = build_beamformers(est, cfg, scheme, "dl")
            per_ap = beams.relative_powers().sum(axis=1)
            assert np.allclose(per_ap, 1.0, atol=1e-9)

    def test_equal_power_with_mask(self):
        cfg, est = exact_setup()
        beams = build_beamformers(est, cfg, "a-mf", "dl")
        mask = np.ones((cfg.num_aps, cfg.num_users), dtype=bool)
        mask[0, :2] = False
        gamma = equal_power_gamma(beams.blocks, mask)
        shares = beams.with_gamma(gamma).relative_powers()
        assert np.allclose(shares[0, :2], 0.0)
        assert np.allclose(shares[0, 2:], 0.5, atol=1e-9)


def test_all_schemes_coincide_single_everything():
    cfg, est = exact_setup(num_aps=1, num_users=1, num_paths=1, pilot_len=1)
    vecs = [build_beamformers(est, cfg, s, "dl").vectors[0, 0]
            for s in ("a-mf", "a-zf", "a-mmse")]
    for v in vecs[1:]:
        cos = abs(vecs[0].conj() @ v) / (np.linalg.norm(vecs[0])
                                         * np.linalg.norm(v))
        assert cos == pytest.approx(1.0, abs=1e-9)


def test_unknown_scheme_rejected():
    cfg, est = exact_setup()
    with pytest.raises(ValueError):
        build_beamformers(est, cfg, "a-dft", "dl")
