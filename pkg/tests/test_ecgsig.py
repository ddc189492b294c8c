import numpy as np
import pytest
from scipy import stats

from afhorizon.cohort import Label, classify_exams
from afhorizon.ecgsig import (
    LEAD_GAINS,
    N_LEADS,
    SynthConfig,
    EcgWaveform,
    estimate_p_amplitude,
    generate_cohort,
    plan_cohort,
    read_waveform,
    resample,
    rr_intervals_s,
    synth_waveform,
    to_input_tensor,
    write_waveform,
    zero_pad,
)
from afhorizon.errors import ValidationError


def waveform(n, rate, fill=0.0):
    leads = np.full((N_LEADS, n), fill, dtype=np.float32)
    return EcgWaveform(leads=leads, sample_rate_hz=rate)


class TestResample:
    def test_sample_count_300_to_400(self):
        out = resample(waveform(2100, 300.0))
        assert out.n_samples == 2800
        assert out.sample_rate_hz == 400.0

    def test_constant_preserved(self):
        out = resample(waveform(1000, 512.0, fill=1.25))
        assert np.allclose(out.leads, 1.25, atol=1e-7)

    def test_sinusoid_against_closed_form(self):
        rate_in, freq = 600.0, 10.0
        t_in = np.arange(4200) / rate_in
        leads = np.tile(np.sin(2 * np.pi * freq * t_in), (N_LEADS, 1)).astype(np.float32)
        out = resample(EcgWaveform(leads=leads, sample_rate_hz=rate_in))
        t_out = np.arange(out.n_samples) / 400.0
        expected = np.sin(2 * np.pi * freq * t_out)
        assert np.abs(out.leads[0] - expected).max() < 1e-2

    def test_errors(self):
        with pytest.raises(ValidationError):
            resample(waveform(100, 400.0), target_hz=0.0)
        with pytest.raises(ValidationError):
            resample(waveform(100, 800.0))
        with pytest.raises(ValidationError):
            resample(waveform(1, 400.0))


class TestZeroPad:
    def test_identity_at_4096(self):
        w = waveform(4096, 400.0, fill=0.5)
        out = zero_pad(w)
        assert np.array_equal(out, w.leads)

    def test_centered_2800(self):
        w = waveform(2800, 400.0, fill=1.0)
        out = zero_pad(w)
        assert out.shape == (N_LEADS, 4096)
        assert np.all(out[:, :648] == 0)
        assert np.all(out[:, -648:] == 0)
        assert np.all(out[:, 648:-648] == 1.0)

    def test_odd_pad_extra_zero_trails(self):
        out = zero_pad(waveform(4001, 400.0, fill=1.0))
        assert np.all(out[:, :47] == 0)
        assert np.all(out[:, -48:] == 0)
        assert np.all(out[:, 47:-48] == 1.0)

    def test_content_bit_identical(self):
        rng = np.random.default_rng(0)
        leads = rng.standard_normal((N_LEADS, 3000)).astype(np.float32)
        w = EcgWaveform(leads=leads, sample_rate_hz=400.0)
        out = zero_pad(w)
        assert np.array_equal(out[:, 548 : 548 + 3000], leads)

    def test_refuses_truncation(self):
        with pytest.raises(ValidationError, match="truncate"):
            zero_pad(waveform(4097, 400.0))

    def test_wrong_rate_rejected(self):
        with pytest.raises(ValidationError):
            zero_pad(waveform(1000, 300.0))

    def test_resample_then_pad_always_full_and_finite(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            rate = float(rng.uniform(300, 600))
            n = int(rng.uniform(7, 10) * rate)
            leads = rng.standard_normal((N_LEADS, n)).astype(np.float32)
            tensor = to_input_tensor(EcgWaveform(leads=leads, sample_rate_hz=rate))
            assert tensor.shape == (N_LEADS, 4096)
            assert np.isfinite(tensor).all()


class TestWaveformFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        w = EcgWaveform(
            leads=rng.standard_normal((N_LEADS, 1234)).astype(np.float32),
            sample_rate_hz=512.0,
        )
        path = tmp_path / "x.ecg"
        write_waveform(path, w)
        back = read_waveform(path)
        assert back.sample_rate_hz == 512.0
        assert np.array_equal(back.leads, w.leads)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ecg"
        path.write_bytes(b"not a waveform file at all.....")
        with pytest.raises(ValidationError, match="magic"):
            read_waveform(path)


class TestSynthConfig:
    def test_bad_shares(self):
        with pytest.raises(ValidationError):
            SynthConfig(share_noaf=0.9, share_withaf=0.2, share_futureaf=0.02)

    def test_negative_scale(self):
        with pytest.raises(ValidationError):
            SynthConfig(noise_amplitude_mv=-1.0)


class TestGenerator:
    def test_class_shares_within_half_point(self):
        cfg = SynthConfig(n_patients=7000, seed=1)
        histories, _ = generate_cohort(cfg)
        labeled = classify_exams(histories)
        retained = [le for le in labeled if le.label is not Label.EXCLUDED]
        assert len(retained) >= 10_000
        n = len(retained)
        shares = {
            Label.NOAF: cfg.share_noaf,
            Label.WITHAF: cfg.share_withaf,
            Label.FUTUREAF: cfg.share_futureaf,
        }
        for label, target in shares.items():
            got = sum(1 for le in retained if le.label is label) / n
            assert abs(got - target) < 0.005, (label, got, target)

    def test_visits_respect_spacing(self):
        histories, _ = generate_cohort(SynthConfig(n_patients=200, seed=3))
        for h in histories:
            days = [e.exam_day for e in h.exams]
            assert all(b - a >= 7 for a, b in zip(days, days[1:]))

    def test_deterministic_waveform_bytes(self, tmp_path):
        cfg = SynthConfig(n_patients=30, seed=9)
        _, bank_a = generate_cohort(cfg)
        _, bank_b = generate_cohort(cfg)
        exam_id = next(iter(bank_a))
        pa, pb = tmp_path / "a.ecg", tmp_path / "b.ecg"
        write_waveform(pa, bank_a[exam_id])
        write_waveform(pb, bank_b[exam_id])
        assert pa.read_bytes() == pb.read_bytes()

    def test_plan_is_deterministic(self):
        cfg = SynthConfig(n_patients=50, seed=4)
        ha, ka = plan_cohort(cfg)
        hb, kb = plan_cohort(cfg)
        assert ha == hb and ka == kb

    def test_af_rr_variation_at_least_3x_sinus(self):
        cfg = SynthConfig(n_patients=120, seed=5)
        _, bank = generate_cohort(cfg)
        cv = {"sinus": [], "af": []}
        for exam_id in bank:
            kind = bank.kind(exam_id)
            if kind not in cv or len(cv[kind]) >= 12:
                continue
            rr = rr_intervals_s(bank[exam_id])
            if len(rr) >= 4:
                cv[kind].append(rr.std() / rr.mean())
        assert len(cv["sinus"]) >= 8 and len(cv["af"]) >= 8
        assert np.mean(cv["af"]) >= 3 * np.mean(cv["sinus"])

    def test_pre_af_indistinguishable_when_disabled(self):
        cfg = SynthConfig(
            n_patients=300,
            seed=6,
            share_noaf=0.5,
            share_withaf=0.25,
            share_futureaf=0.25,
            p_wave_attenuation=1.0,
            rr_jitter_af=0.0,
        )
        _, bank = generate_cohort(cfg)
        amps = {"sinus": [], "pre_af": []}
        for exam_id in bank:
            kind = bank.kind(exam_id)
            if kind in amps and len(amps[kind]) < 30:
                amps[kind].append(estimate_p_amplitude(bank[exam_id]))
        assert len(amps["pre_af"]) >= 20
        _, p = stats.ttest_ind(amps["sinus"][:30], amps["pre_af"], equal_var=False)
        assert p > 0.01

    def test_attenuation_separates_pre_af(self):
        cfg = SynthConfig(
            n_patients=300,
            seed=7,
            share_noaf=0.5,
            share_withaf=0.25,
            share_futureaf=0.25,
            p_wave_attenuation=0.5,
        )
        _, bank = generate_cohort(cfg)
        amps = {"sinus": [], "pre_af": []}
        for exam_id in bank:
            kind = bank.kind(exam_id)
            if kind in amps and len(amps[kind]) < 25:
                amps[kind].append(estimate_p_amplitude(bank[exam_id]))
        assert np.mean(amps["pre_af"]) < 0.75 * np.mean(amps["sinus"])

    def test_lead_projection(self):
        w = synth_waveform(SynthConfig(n_patients=1, seed=1), "p000000-e0", "sinus")
        assert w.leads.shape[0] == N_LEADS
        # lead 3 has a negative gain, so its R peaks point down
        assert LEAD_GAINS[3] < 0
        assert abs(w.leads[3].min()) > abs(w.leads[3].max())
