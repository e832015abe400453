import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epsfp.errors import ValidationError
from epsfp.filters import default_lowpass
from epsfp.waveform import (BARKER_11, FRAME_LEN, SAMPLE_RATE_HZ, ChannelProfile, DeviceProfile, DomainLabel,
                            IQFrame, analyze_humps, apply_channel, apply_impairments, barker_autocorrelation,
                            cfo_demo_frame, cfo_magnitude_grid, count_envelope_humps, default_population,
                            figure3_humps, generate_dsss_baseband)


def test_barker_sidelobes():
    ac = barker_autocorrelation()
    assert ac[10] == 11
    assert np.max(np.abs(np.delete(ac, 10))) == 1


def test_all_zero_payload_is_constant_modulus(cm_baseband):
    assert len(cm_baseband) == FRAME_LEN
    assert np.array_equal(np.abs(cm_baseband.samples), np.ones(FRAME_LEN))


def test_integer_samples_per_chip_length_and_power():
    s = generate_dsss_baseband(np.random.default_rng(0).integers(0, 2, 1200), samples_per_chip=2,
                               target_len=25170)
    assert len(s) == 25170
    assert abs(np.mean(np.abs(s.samples) ** 2) - 1) <= 1e-6
    # chips hold for exactly two samples
    assert np.array_equal(s.samples[0::2], s.samples[1::2])


def test_dbpsk_differential_encoding():
    s = generate_dsss_baseband([1, 0, 1], samples_per_chip=1, target_len=33).samples.real
    symbols = s.reshape(3, 11) / BARKER_11
    assert np.allclose(symbols[:, 0], [-1, -1, 1])


def test_pulse_shaped_baseband_unit_power():
    s = generate_dsss_baseband(np.ones(1300, dtype=int), pulse_filter=default_lowpass())
    assert len(s) == FRAME_LEN and abs(np.mean(np.abs(s.samples) ** 2) - 1) <= 1e-6


@pytest.mark.parametrize("kw", [dict(payload_bits=[]), dict(payload_bits=[0, 2]),
                                dict(payload_bits=[1], target_len=10), dict(payload_bits=[1], samples_per_chip=0)])
def test_baseband_errors(kw):
    with pytest.raises(ValidationError):
        generate_dsss_baseband(**kw)


def test_identity_device_is_exact(baseband):
    out = apply_impairments(baseband, DeviceProfile(3), seed=1)
    assert np.array_equal(out.samples, baseband.samples) and out.device_id == 3


@settings(max_examples=20, deadline=None)
@given(cfo=st.floats(-4.9e6, 4.9e6), seed=st.integers(0, 2 ** 32 - 1))
def test_cfo_preserves_modulus(baseband, cfo, seed):
    out = apply_impairments(baseband, DeviceProfile(0, cfo_hz=cfo, phase_noise_std_rad=1e-3), seed=seed)
    assert np.max(np.abs(np.abs(out.samples) - np.abs(baseband.samples))) <= 1e-12


def test_cfo_limit(baseband):
    with pytest.raises(ValidationError):
        apply_impairments(baseband, DeviceProfile(0, cfo_hz=SAMPLE_RATE_HZ / 4))


def test_imbalance_and_dc_formula(cm_baseband):
    d = DeviceProfile(0, iq_gain_imbalance_db=0.4, iq_phase_imbalance_rad=0.02, dc_offset=0.003 - 0.001j)
    out = apply_impairments(cm_baseband, d).samples
    g = 10 ** (0.4 / 20)
    eps = 2 * (g - 1) / (g + 1)
    i, q = cm_baseband.samples.real, cm_baseband.samples.imag
    ref = (1 + eps / 2) * i + 1j * (1 - eps / 2) * (q * np.cos(0.02) + i * np.sin(0.02)) + (0.003 - 0.001j)
    assert np.allclose(out, ref, rtol=0, atol=1e-15)
    assert np.isclose((1 + eps / 2) / (1 - eps / 2), g)


def test_impairments_deterministic(baseband, population):
    a = apply_impairments(baseband, population[0], seed=9)
    b = apply_impairments(baseband, population[0], seed=9)
    assert np.array_equal(a.samples, b.samples)


def test_unstabilized_device_drifts(cm_baseband):
    d = DeviceProfile(0, cfo_hz=5e3, stabilized=False, warmup_drift_hz=500.0)
    a = apply_impairments(cm_baseband, d, seed=1).samples
    b = apply_impairments(cm_baseband, d, seed=2).samples
    assert not np.allclose(a, b)


def test_channel_identity_and_scale(baseband):
    assert np.array_equal(apply_channel(baseband, ChannelProfile()).samples, baseband.samples)
    half = apply_channel(baseband, ChannelProfile(amplitude_scale=0.5)).samples
    assert np.array_equal(half, baseband.samples * 0.5)


def test_channel_delay_zero_prefix(baseband):
    out = apply_channel(baseband, ChannelProfile(delay_samples=37)).samples
    assert len(out) == len(baseband)
    assert not np.any(out[:37]) and np.array_equal(out[37:], baseband.samples[:-37])


@pytest.mark.parametrize("seed", range(5))
def test_channel_snr_empirical(baseband, seed):
    out = apply_channel(baseband, ChannelProfile(snr_db=20.0, seed=seed)).samples
    noise = out - baseband.samples
    snr = 10 * np.log10(np.mean(np.abs(baseband.samples) ** 2) / np.mean(np.abs(noise) ** 2))
    assert abs(snr - 20.0) <= 0.5


def test_channel_deterministic(baseband):
    c = ChannelProfile(snr_db=15.0, amplitude_scale=0.4, delay_samples=9, seed=5, phase_rad=0.3)
    assert np.array_equal(apply_channel(baseband, c).samples, apply_channel(baseband, c).samples)


@pytest.mark.parametrize("kw", [dict(amplitude_scale=0.0), dict(delay_samples=-1)])
def test_channel_validation(kw):
    with pytest.raises(ValidationError):
        ChannelProfile(**kw)


def test_frame_validation():
    with pytest.raises(ValidationError):
        IQFrame(np.array([1, np.inf], dtype=complex))
    with pytest.raises(ValidationError):
        DomainLabel(day=256)
    with pytest.raises(ValidationError):
        DeviceProfile(0, phase_noise_std_rad=-1)


# hump counts

def two_f_t(cfo, n=FRAME_LEN):
    return round(2 * abs(cfo) * n / SAMPLE_RATE_HZ)


@pytest.mark.parametrize("cfo", [2e3, 5e3, 10e3, 20e3, -7.3e3])
def test_hump_law_noiseless(cm_baseband, cfo):
    fr = apply_impairments(cm_baseband, DeviceProfile(0, cfo_hz=cfo))
    assert abs(count_envelope_humps(fr.rail("I")) - two_f_t(cfo)) <= 1


def test_hump_example_5khz_is_13(cm_baseband):
    fr = apply_impairments(cm_baseband, DeviceProfile(0, cfo_hz=5e3))
    assert abs(count_envelope_humps(fr.rail("I")) - 13) <= 1


@pytest.mark.parametrize("cfo", [5e3, 10e3])
@pytest.mark.parametrize("snr", [15.0, 25.0])
def test_awgn_moves_hump_count_by_at_most_one(cm_baseband, cfo, snr):
    fr = apply_impairments(cm_baseband, DeviceProfile(0, cfo_hz=cfo))
    clean = count_envelope_humps(fr.rail("I"))
    for seed in range(3):
        noisy = apply_channel(fr, ChannelProfile(snr_db=snr, seed=seed))
        assert abs(count_envelope_humps(noisy.rail("I")) - clean) <= 1


def test_zero_cfo_has_no_humps(cm_baseband):
    assert count_envelope_humps(cm_baseband.rail("I")) == 0


@settings(max_examples=15, deadline=None)
@given(gain=st.floats(-1.0, 1.0), theta_deg=st.floats(-3.0, 3.0),
       dc_re=st.floats(-0.01, 0.01), dc_im=st.floats(-0.01, 0.01))
def test_imbalance_and_dc_alone_show_no_humps(cm_baseband, gain, theta_deg, dc_re, dc_im):
    d = DeviceProfile(0, 0.0, gain, np.deg2rad(theta_deg), complex(dc_re, dc_im))
    fr = apply_impairments(cm_baseband, d)
    assert count_envelope_humps(fr.rail("I")) == 0
    assert count_envelope_humps(fr.rail("Q")) == 0


def test_figure3_counts():
    counts = {c: h.count for c, h in figure3_humps()}
    assert counts == {0.0: 0, 50.0: 1, 100.0: 2, 200.0: 4}


def test_figure3_peaks_follow_beat_period():
    (_, ha), = figure3_humps((200.0,))
    # humps of |cos(2 pi f t)| are 1 / (2 f) apart
    assert np.allclose(np.diff(ha.peak_samples) / SAMPLE_RATE_HZ, 1 / 400.0, rtol=0.02)


def test_figure3_impairments_without_cfo_on_signal_rail():
    rng = np.random.default_rng(3)
    for _ in range(5):
        d = DeviceProfile(0, 0.0, float(rng.uniform(-0.5, 0.5)), float(np.deg2rad(rng.uniform(-2, 2))),
                          complex(*rng.uniform(-0.007, 0.007, 2)), 1e-4)
        assert count_envelope_humps(cfo_demo_frame(0.0, device=d).rail("I"), max_cfo_hz=250.0) == 0


def test_hump_analysis_times_align_with_envelope():
    fr = cfo_demo_frame(100.0)
    ha = analyze_humps(fr.rail("I"), max_cfo_hz=250.0)
    assert ha.envelope.shape == ha.envelope_times_s.shape
    assert np.all(np.diff(ha.envelope_times_s) > 0)


# populations

def test_default_population(population):
    assert len(population) == 15
    mags = sorted(abs(d.cfo_hz) for d in population)
    assert mags[0] >= 2e3 and mags[-1] <= 25e3
    assert min(np.diff(mags)) >= 1.5e3 - 1e-6
    assert set(mags) <= set(cfo_magnitude_grid().tolist())
    for d in population:
        assert abs(d.iq_gain_imbalance_db) <= 0.5 and abs(np.rad2deg(d.iq_phase_imbalance_rad)) <= 2
        assert abs(d.dc_offset) <= 0.01 and d.phase_noise_std_rad == 1e-4


def test_population_deterministic():
    assert default_population() == default_population()


def test_population_too_large():
    with pytest.raises(ValidationError):
        default_population(n_devices=30)


def test_rogues_separated(population, rogues):
    assert len(rogues) == 5
    taken = [abs(d.cfo_hz) for d in population]
    for r in rogues:
        assert min(abs(abs(r.cfo_hz) - t) for t in taken) >= 3e3
        assert r.device_id not in {d.device_id for d in population}


def test_device_profile_dict_round_trip(population):
    for d in population:
        assert DeviceProfile.from_dict(d.to_dict()) == d
