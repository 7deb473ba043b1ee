import numpy as np
import pytest

from oracles import conv2d_loops, dct2_loops, dct_entry
from steinformer.errors import ConfigError, UsageError
from steinformer.spectral import (
    DctFilter,
    DynamicFrequencyMixer,
    FrequencySpec,
    MixerConfig,
    MultiFrequencyMixer,
    band_matrix,
    dct2,
    dct_basis,
    dct_self_check,
    idct2,
    load_priority_list,
    mfm_forward,
    mixer_param_count,
    select_frequencies,
    zigzag_order,
)
from steinformer.tensor_core import Tensor, gradcheck, ops

SIZES = [2, 3, 4, 7, 8, 16]


class TestBasis:
    def test_dc_kernel_p7(self):
        np.testing.assert_allclose(dct_basis(7, 0, 0), np.full((7, 7), 1 / 7), rtol=0, atol=1e-15)

    def test_p4_u1_v0_against_formula(self):
        k = dct_basis(4, 1, 0)
        for x in range(4):
            for y in range(4):
                assert k[x, y] == pytest.approx(dct_entry(4, 4, 1, 0, x, y), abs=1e-14)

    @pytest.mark.parametrize("p", SIZES)
    def test_unit_energy(self, p):
        for u in range(p):
            for v in range(p):
                assert np.sum(dct_basis(p, u, v) ** 2) == pytest.approx(1.0, abs=1e-12)

    def test_gram_identity_p7(self):
        fam = np.stack([dct_basis(7, u, v).ravel() for u in range(7) for v in range(7)])
        assert np.max(np.abs(fam @ fam.T - np.eye(49))) < 1e-9

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            dct_basis(7, 7, 0)


class TestTransform:
    @pytest.mark.parametrize("h,w", [(4, 4), (3, 5), (8, 2)])
    def test_constant_image(self, h, w):
        c = 1.7
        f = dct2(np.full((h, w), c))
        assert f[0, 0] == pytest.approx(c * np.sqrt(h * w), abs=1e-12)
        rest = f.copy()
        rest[0, 0] = 0
        assert np.max(np.abs(rest)) < 1e-12

    def test_impulse_matches_loop_oracle(self):
        a = np.zeros((4, 4))
        a[0, 0] = 1.0
        f = dct2(a)
        np.testing.assert_allclose(f, dct2_loops(a), atol=1e-12)
        for u in range(4):
            for v in range(4):
                assert f[u, v] == pytest.approx(dct_entry(4, 4, u, v, 0, 0), abs=1e-12)

    def test_random_matches_loop_oracle(self, rng):
        a = rng.normal(size=(5, 3))
        np.testing.assert_allclose(dct2(a), dct2_loops(a), atol=1e-12)

    def test_linearity(self, rng):
        x, y = rng.normal(size=(2, 6, 6))
        np.testing.assert_allclose(dct2(2.5 * x - 0.5 * y), 2.5 * dct2(x) - 0.5 * dct2(y), atol=1e-10)

    @pytest.mark.parametrize("n", SIZES)
    def test_round_trip_and_parseval(self, rng, n):
        a = rng.normal(size=(n, n))
        f = dct2(a)
        assert np.max(np.abs(idct2(f) - a)) < 1e-9
        assert abs(np.sum(a**2) - np.sum(f**2)) < 1e-9

    def test_dc_only_spectrum_inverts_to_ones(self):
        f = np.zeros((4, 6))
        f[0, 0] = np.sqrt(24)
        np.testing.assert_allclose(idct2(f), np.ones((4, 6)), atol=1e-12)


class TestSelection:
    def test_priors_start_at_dc(self):
        assert select_frequencies("pretrained_priors", 1, 7).indices == ((0, 0),)

    def test_priors_follow_data_file(self):
        pri = load_priority_list()
        assert len(pri) == 16 and pri[0] == (0, 0)
        spec = select_frequencies("pretrained_priors", 16, 7)
        assert list(spec.indices) == pri

    def test_priors_extend_in_zigzag(self):
        spec = select_frequencies("pretrained_priors", 20, 7)
        assert len(set(spec.indices)) == 20
        extra = [c for c in zigzag_order(7) if c not in load_priority_list()][:4]
        assert list(spec.indices[16:]) == extra

    def test_priors_on_smaller_grid_drop_out_of_range(self):
        spec = select_frequencies("pretrained_priors", 4, 3)
        assert all(u < 3 and v < 3 for u, v in spec.indices)
        assert spec.indices[:2] == ((0, 0), (0, 1))

    def test_random_is_seeded_and_keeps_dc(self):
        a = select_frequencies("random_selection", 4, 7, seed=11)
        b = select_frequencies("random_selection", 4, 7, seed=11)
        assert a == b
        assert (0, 0) in a.indices and len(a.indices) == 4

    def test_dynamic_top3_with_tie(self):
        imp = np.zeros((7, 7))
        imp[3, 4] = 0.9
        imp[1, 2] = 0.8
        imp[5, 0] = 0.8
        imp[0, 6] = 0.7
        spec = select_frequencies("dynamic_assignment", 3, 7, importance=imp)
        # sort-based oracle: descending weight, then (u, v)
        cells = [(u, v) for u in range(7) for v in range(7)]
        oracle = sorted(cells, key=lambda c: (-imp[c], c))[:3]
        assert list(spec.indices) == oracle == [(3, 4), (1, 2), (5, 0)]

    def test_dynamic_needs_map(self):
        with pytest.raises(UsageError):
            select_frequencies("dynamic_assignment", 3, 7)

    def test_m_too_large(self):
        with pytest.raises(ConfigError):
            select_frequencies("pretrained_priors", 50, 7)

    def test_spec_invariants(self):
        with pytest.raises(ConfigError):
            FrequencySpec("pretrained_priors", 7, ((0, 0), (0, 0)))
        with pytest.raises(ConfigError):
            FrequencySpec("random_selection", 7, ((1, 0), (0, 1)))
        with pytest.raises(ConfigError):
            FrequencySpec("pretrained_priors", 7, ((7, 0),))

    def test_zigzag(self):
        assert zigzag_order(3) == [(0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2), (1, 2), (2, 1), (2, 2)]


def _identity_mixer(C, M, p, freqs):
    cfg = MixerConfig(C, M, p, spec=FrequencySpec("pretrained_priors", p, freqs))
    mixer = MultiFrequencyMixer(cfg)
    for conv in (mixer.proj_in, mixer.proj_out):
        conv.weight.data = np.eye(C).reshape(C, C, 1, 1)
        conv.bias.data[...] = 0
    return mixer


class TestMixer:
    def test_shape_preserved(self, rng):
        mixer = MultiFrequencyMixer(MixerConfig(16, 8, 7))
        x = Tensor(rng.normal(size=(2, 16, 5, 9)))
        assert mfm_forward(x, mixer).shape == x.shape

    def test_dc_only_is_window_average(self, rng):
        p = 5
        mixer = _identity_mixer(3, 1, p, ((0, 0),))
        x = rng.normal(size=(1, 3, 6, 6))
        out = mfm_forward(Tensor(x), mixer).data
        padded = np.pad(x, ((0, 0), (0, 0), (2, 2), (2, 2)))
        for c in range(3):
            for i in range(6):
                for j in range(6):
                    assert out[0, c, i, j] == pytest.approx(padded[0, c, i : i + p, j : j + p].sum() / p, abs=1e-12)

    def test_per_head_oracle(self, rng):
        C, M, p = 8, 4, 7
        spec = select_frequencies("random_selection", M, p, seed=3)
        mixer = MultiFrequencyMixer(MixerConfig(C, M, p, spec=spec), rng=rng)
        x = rng.normal(size=(2, C, 6, 5))
        out = mfm_forward(Tensor(x), mixer).data

        def proj(conv, z):
            w = conv.weight.data[:, :, 0, 0]
            return np.einsum("oc,nchw->nohw", w, z) + conv.bias.data[None, :, None, None]

        a = proj(mixer.proj_in, x)
        per = C // M
        heads = []
        for i, (u, v) in enumerate(spec.indices):
            ai = a[:, i * per : (i + 1) * per]
            k = np.stack([dct_basis(p, u, v)] * per)[:, None]
            heads.append(conv2d_loops(ai, k, None, 1, (p // 2, p // 2), per))
        ref = proj(mixer.proj_out, np.concatenate(heads, axis=1))
        assert np.max(np.abs(out - ref)) < 1e-10

    def test_separable_filter_equals_2d(self, rng):
        freqs = [(0, 0), (3, 1), (6, 6), (2, 5)]
        filt = DctFilter(freqs, 7)
        x = rng.normal(size=(1, 4, 9, 8))
        ref = conv2d_loops(x, filt.kernels(), None, 1, (3, 3), 4)
        assert np.max(np.abs(filt(Tensor(x)).data - ref)) < 1e-10
        for c, (u, v) in enumerate(freqs):
            np.testing.assert_allclose(filt.kernels()[c, 0], dct_basis(7, u, v), atol=1e-15)

    @pytest.mark.parametrize("n,k", [(1, 3), (2, 7), (5, 3), (9, 7)])
    def test_band_matrix_is_zero_padded_correlation(self, rng, n, k):
        kern = rng.normal(size=k)
        x = rng.normal(size=n)
        ref = np.correlate(np.pad(x, k // 2), kern, mode="valid")
        np.testing.assert_allclose(band_matrix(kern, n) @ x, ref, atol=1e-12)

    def test_runs_share_matrices(self, rng):
        shared = DctFilter([(1, 2)] * 3 + [(0, 4)] * 3, 7)
        mixed = DctFilter([(1, 2), (0, 4), (1, 2), (0, 4), (1, 2), (0, 4)], 7)
        assert len(shared.groups) == 2 and len(mixed.groups) == 6
        x = rng.normal(size=(2, 6, 10, 11))
        a = shared(Tensor(x)).data
        b = mixed(Tensor(x[:, [0, 3, 1, 4, 2, 5]])).data
        np.testing.assert_allclose(a, b[:, [0, 2, 4, 1, 3, 5]], atol=1e-13)

    def test_self_check_passes(self):
        report = dct_self_check()
        assert len(report) == 1 + 3 * len(SIZES)
        assert all(ok for _, _, ok in report), [r for r in report if not r[2]]

    @pytest.mark.parametrize("C,M,p", [(8, 1, 7), (16, 4, 7), (16, 8, 5), (32, 16, 7)])
    def test_param_count_independent_of_frequencies(self, C, M, p):
        mixer = MultiFrequencyMixer(MixerConfig(C, M, p))
        assert mixer.num_parameters() == 2 * C * C + 2 * C == mixer_param_count(C)

    def test_expansion_param_count(self):
        mixer = MultiFrequencyMixer(MixerConfig(16, 8, 7, expansion=3))
        assert mixer.num_parameters() == mixer_param_count(16, 3) == 2 * 16 * 48 + 48 + 16

    def test_indivisible_heads(self):
        with pytest.raises(ConfigError):
            MixerConfig(12, 8, 7)

    def test_gradients_reach_projections_not_kernels(self, rng):
        mixer = MultiFrequencyMixer(MixerConfig(8, 4, 7))
        x = Tensor(rng.normal(size=(1, 8, 6, 6)), requires_grad=True)
        before = mixer.filter.kernels().copy()
        ops.sum_all(mfm_forward(x, mixer)).backward()
        assert x.grad is not None and all(p.grad is not None for p in mixer.parameters())
        names = [n for n, _ in mixer.named_parameters()]
        assert not any("filter" in n for n in names)
        np.testing.assert_array_equal(mixer.filter.kernels(), before)

    def test_gradcheck(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            mixer = MultiFrequencyMixer(MixerConfig(4, 2, 3, expansion=2), rng=rng)
            for p in mixer.parameters():
                p.data = rng.normal(size=p.shape)
            x = Tensor(rng.normal(size=(1, 4, 4, 4)), requires_grad=True)
            proj = Tensor(rng.normal(size=(1, 4, 4, 4)))
            res = gradcheck(lambda: ops.sum_all(ops.mul(mfm_forward(x, mixer), proj)), [x] + mixer.parameters())
            assert res.ok, res


class TestDynamicMixer:
    def test_selects_top_scores(self, rng):
        mixer = DynamicFrequencyMixer(MixerConfig(8, 4, 5, strategy="dynamic_assignment"), rng=rng)
        x = Tensor(rng.normal(size=(2, 8, 6, 6)))
        out = mixer(x)
        assert out.shape == x.shape
        spec = mixer.last_spec
        weights = mixer.scorer(mixer.proj_in(x)).data.reshape(5, 5)
        assert spec.strategy == "dynamic_assignment" and spec.M == 4
        assert list(spec.indices) == sorted(
            [(u, v) for u in range(5) for v in range(5)], key=lambda c: (-weights[c], c)
        )[:4]

    def test_gradcheck_including_scorer(self):
        rng = np.random.default_rng(5)
        mixer = DynamicFrequencyMixer(MixerConfig(4, 2, 3, strategy="dynamic_assignment"), rng=rng)
        for p in mixer.parameters():
            p.data = rng.normal(size=p.shape)
        x = Tensor(rng.normal(size=(1, 4, 4, 4)), requires_grad=True)
        proj = Tensor(rng.normal(size=(1, 4, 4, 4)))
        res = gradcheck(lambda: ops.sum_all(ops.mul(mixer(x), proj)), [x] + mixer.parameters())
        assert res.ok, res
        assert mixer.scorer.conv.weight in mixer.parameters()
