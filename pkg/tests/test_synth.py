import numpy as np
import pytest

from igbeat import gof, synth
from igbeat.synth import ParamTrajectory, generate_ecg, generate_rr


def test_constant_mean():
    s, truth = generate_rr(ParamTrajectory("constant", mu=0.8, sigma=0.05), 10_000, np.random.default_rng(0))
    assert len(s) == 9_999
    assert s.intervals.mean() == pytest.approx(0.8, abs=0.002)
    np.testing.assert_array_equal(truth.targets, s.intervals[1:])


def test_truth_rescales_uniformly():
    traj = ParamTrajectory("sinusoidal", mu=0.9, sigma=0.05, amplitude=0.05, period=4.0)
    s, truth = generate_rr(traj, 3000, np.random.default_rng(1))
    assert gof.evaluate_trajectory(truth).passed


def test_truth_follows_trajectory_in_time():
    traj = ParamTrajectory("sinusoidal", mu=0.9, sigma=0.05, amplitude=0.05, period=4.0, phase=0.3)
    s, truth = generate_rr(traj, 50, np.random.default_rng(2))
    # step i is the interval after peak i+1
    for i in range(len(truth)):
        assert truth.mu[i] == pytest.approx(traj.at(s.peak_times[i + 1])[0])


def test_two_beats_give_one_interval():
    s, _ = generate_rr(ParamTrajectory(), 2, np.random.default_rng(0))
    assert len(s) == 1
    with pytest.raises(ValueError):
        generate_rr(ParamTrajectory(), 1, np.random.default_rng(0))


def test_regime_switch():
    traj = ParamTrajectory("regime_switch", mu=0.8, sigma=0.05, switch_times=(10.0,), regimes=((1.2, 0.08),))
    assert traj.at(5.0) == (0.8, 0.05) and traj.at(10.5) == (1.2, 0.08)
    s, truth = generate_rr(traj, 200, np.random.default_rng(3))
    late = s.peak_times[1:-1] > 10.0
    assert np.all(truth.mu[late] == 1.2)


@pytest.mark.parametrize(
    "kw",
    [
        dict(kind="constant", mu=0.3),
        dict(kind="sinusoidal", mu=0.35, amplitude=0.1),
        dict(kind="constant", sigma=0.01),
        dict(kind="constant", sigma=3.0),
        dict(kind="wobble"),
        dict(kind="regime_switch", switch_times=(1.0,), regimes=()),
    ],
)
def test_invalid_trajectories(kw):
    with pytest.raises(ValueError):
        ParamTrajectory(**kw)


def test_subject_trajectory_deterministic():
    a = synth.subject_trajectory(np.random.default_rng(9))
    b = synth.subject_trajectory(np.random.default_rng(9))
    assert a == b and a.kind == "sinusoidal"


def test_ecg_snr_and_shape():
    rng = np.random.default_rng(4)
    peaks = 1.0 + np.arange(30) * 0.8
    clean = generate_ecg(peaks, 128.0, None, rng)
    noisy = generate_ecg(peaks, 128.0, 20.0, np.random.default_rng(4))
    noise = noisy.samples - clean.samples
    snr = 10 * np.log10(np.mean(clean.samples**2) / np.mean(noise**2))
    assert snr == pytest.approx(20.0, abs=0.5)
    idx = np.round(peaks * 128).astype(int)
    assert np.all(clean.samples[idx] > 0.9)


def test_ecg_validation():
    with pytest.raises(ValueError):
        generate_ecg([1.0, 0.5], 128.0, 20.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        generate_ecg([1.0], 50.0, 20.0, np.random.default_rng(0))
