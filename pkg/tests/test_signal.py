import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blindeq.errors import InvalidConfigError, InvalidInputError
from blindeq.signal import (
    CHANNEL_PRESETS,
    ChannelSpec,
    PaddingMode,
    add_awgn,
    fir_convolve,
    generate_dataset,
    preset_channel,
    qpsk_bits,
    qpsk_modulate,
    qpsk_slice,
    read_iq_file,
    realized_snr_db,
    scale_noise_to_snr,
    tap_offset,
    write_iq_file,
)

from oracles import direct_conv


def crandn(rng, n):
    return rng.normal(size=n) + 1j * rng.normal(size=n)


class TestQPSK:
    def test_mapping(self):
        assert qpsk_modulate([0, 0])[0] == -1 - 1j
        assert qpsk_modulate([1, 1])[0] == 1 + 1j
        assert qpsk_modulate([1, 0])[0] == 1 - 1j

    def test_constant_modulus(self):
        bits = np.random.default_rng(0).integers(0, 2, 2000)
        assert np.allclose(np.abs(qpsk_modulate(bits)) ** 2, 2.0)

    def test_odd_bit_count_rejected(self):
        with pytest.raises(InvalidInputError):
            qpsk_modulate([0, 1, 1])

    def test_slicer(self):
        assert qpsk_slice([0.3 - 0.2j])[0] == 1 - 1j
        assert qpsk_slice([0j])[0] == 1 + 1j

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=64).map(lambda b: b + b[:1] if len(b) % 2 else b))
    def test_round_trip(self, bits):
        assert np.array_equal(qpsk_bits(qpsk_slice(qpsk_modulate(bits))), np.array(bits))


class TestConvolution:
    def test_identity(self):
        x = crandn(np.random.default_rng(1), 9)
        for mode in PaddingMode:
            assert np.array_equal(fir_convolve(x, [1 + 0j], mode), x)

    def test_centered_two_sample(self):
        a, b, c, d, e = 1 + 2j, -0.5j, 0.3, 2 - 1j, 0.7 + 0.1j
        y = fir_convolve([a, b], [c, d, e], PaddingMode.CENTERED)
        assert np.allclose(y, [a * d + b * c, a * e + b * d], rtol=0, atol=1e-15)

    def test_causal_single(self):
        assert np.allclose(fir_convolve([1 + 1j], [0.5, 0.5j], PaddingMode.CAUSAL), [0.5 + 0.5j])

    def test_centered_needs_odd_length(self):
        with pytest.raises(InvalidConfigError):
            fir_convolve(np.ones(4), np.ones(2), PaddingMode.CENTERED)

    @pytest.mark.parametrize("mode", list(PaddingMode))
    def test_matches_double_loop(self, mode):
        rng = np.random.default_rng(2)
        for m in (1, 3, 5, 7):
            x, h = crandn(rng, 23), crandn(rng, m)
            ref = direct_conv(x, h, tap_offset(m, mode))
            assert np.allclose(fir_convolve(x, h, mode), ref, rtol=1e-12, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4))
    def test_linearity(self, seed, half):
        rng = np.random.default_rng(seed)
        m = 2 * half + 1
        x1, x2, h = crandn(rng, 40), crandn(rng, 40), crandn(rng, m)
        al, be = complex(*rng.normal(size=2)), complex(*rng.normal(size=2))
        lhs = fir_convolve(al * x1 + be * x2, h, PaddingMode.CENTERED)
        rhs = al * fir_convolve(x1, h, PaddingMode.CENTERED) + be * fir_convolve(x2, h, PaddingMode.CENTERED)
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(np.linalg.norm(lhs), 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 3))
    def test_padding_equivalence(self, seed, half):
        rng = np.random.default_rng(seed)
        m = 2 * half + 1
        x, h = crandn(rng, 64), crandn(rng, m)
        c = (m - 1) // 2
        causal = fir_convolve(x, h, PaddingMode.CAUSAL)
        centered = fir_convolve(x, h, PaddingMode.CENTERED)
        # causal output lags centered by c; compare where both see full support
        assert np.array_equal(causal[m - 1 :], centered[c : x.size - c])


class TestNoise:
    def test_zero_variance(self):
        y = crandn(np.random.default_rng(3), 50)
        out, w = add_awgn(y, 0.0, 5)
        assert np.array_equal(out, y) and not w.any()

    def test_variance_per_rail(self):
        _, w = add_awgn(np.zeros(1_000_000, complex), 2.0, 11)
        assert abs(np.var(w.real) - 1.0) < 0.01
        assert abs(np.var(w.imag) - 1.0) < 0.01

    def test_same_seed_identical(self):
        y = np.zeros(100, complex)
        assert np.array_equal(add_awgn(y, 1.0, 9)[1], add_awgn(y, 1.0, 9)[1])

    def test_negative_variance(self):
        with pytest.raises(InvalidInputError):
            add_awgn(np.zeros(3, complex), -1.0, 0)

    @pytest.mark.parametrize("snr", [0.0, 10.0, -3.5, 27.0])
    def test_scale_to_snr(self, snr):
        rng = np.random.default_rng(4)
        s, w = crandn(rng, 500), crandn(rng, 500)
        scaled, sigma2 = scale_noise_to_snr(s, w, snr)
        ratio = np.linalg.norm(s) / np.linalg.norm(scaled)
        assert ratio == pytest.approx(10 ** (snr / 20), rel=1e-12)
        assert abs(realized_snr_db(s, scaled) - snr) <= 1e-12
        assert sigma2 == pytest.approx(np.sum(np.abs(scaled) ** 2) / 500, rel=1e-12)

    def test_scale_rejects_zero_noise(self):
        with pytest.raises(InvalidInputError):
            scale_noise_to_snr(np.ones(3, complex), np.zeros(3, complex), 10)


class TestDataset:
    def test_realized_snr(self):
        ds = generate_dataset(preset_channel("h1"), 2000, 10.0, seed=0)
        assert abs(ds.realized_snr_db - 10.0) <= 1e-10
        assert ds.train_observed.size == 2000 and ds.test_symbols.size == 10_000

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**63 - 1), st.floats(-5, 30), st.sampled_from(sorted(CHANNEL_PRESETS)))
    def test_noise_calibration(self, seed, snr, name):
        ds = generate_dataset(preset_channel(name), 300, snr, seed=seed, test_len=50)
        assert abs(ds.realized_snr_db - snr) <= 1e-10

    def test_deterministic(self):
        a = generate_dataset(preset_channel("h2"), 100, 5.0, seed=42, test_len=100)
        b = generate_dataset(preset_channel("h2"), 100, 5.0, seed=42, test_len=100)
        for field in ("train_observed", "test_symbols", "test_observed", "truth_train_symbols"):
            assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_noiseless_identity(self):
        ds = generate_dataset(ChannelSpec([1 + 0j]), 100, 300.0, seed=1, test_len=1000)
        assert np.max(np.abs(ds.test_observed - ds.test_symbols)) <= 1e-13

    def test_seeds_give_different_data(self):
        a = generate_dataset(preset_channel("h1"), 50, 5.0, seed=1, test_len=10)
        b = generate_dataset(preset_channel("h1"), 50, 5.0, seed=2, test_len=10)
        assert not np.array_equal(a.truth_train_symbols, b.truth_train_symbols)


class TestChannels:
    def test_preset_taps(self):
        assert preset_channel("h1").taps[2] == -0.7676 + 0.2788j
        assert preset_channel("h2").taps.size == 4
        assert preset_channel("h3").taps[4] == 0.7920 + 0.1281j
        assert [preset_channel(n).taps.size for n in ("h1", "h2", "h3")] == [5, 4, 10]

    def test_default_padding(self):
        for name in CHANNEL_PRESETS:
            ch = preset_channel(name)
            expect = PaddingMode.CENTERED if ch.taps.size % 2 else PaddingMode.CAUSAL
            assert ch.padding_mode is expect

    def test_unknown_preset_lists_names(self):
        with pytest.raises(InvalidConfigError, match="h1"):
            preset_channel("h7")

    def test_even_centered_rejected(self):
        with pytest.raises(InvalidConfigError):
            ChannelSpec([1, 0.5], padding_mode=PaddingMode.CENTERED)


class TestIQFiles:
    def test_round_trip(self, tmp_path):
        z = crandn(np.random.default_rng(5), 17)
        write_iq_file(tmp_path / "z.txt", z)
        assert np.array_equal(read_iq_file(tmp_path / "z.txt"), z)

    def test_malformed_line_number(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("1\t2\n3\t4\nfoo\t1\n")
        with pytest.raises(InvalidInputError, match=r"bad.txt:3"):
            read_iq_file(p)

    def test_empty(self, tmp_path):
        p = tmp_path / "empty.txt"
        p.write_text("")
        with pytest.raises(InvalidInputError, match="no samples"):
            read_iq_file(p)
