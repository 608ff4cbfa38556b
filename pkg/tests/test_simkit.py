import numpy as np
import pytest

from inertia_kit import geom, simkit
from inertia_kit.errors import InvalidInputError
from inertia_kit.gtbias import GravityModel


def second_derivative(x, h):
    return (-x[:-4] + 16 * x[1:-3] - 30 * x[2:-2] + 16 * x[3:-1] - x[4:]) / (12 * h * h)


def test_static_profile():
    traj = simkit.synth_trajectory(simkit.MotionProfile.preset("static", duration=5.0))
    assert np.ptp(traj.poses.p, axis=0).max() == 0
    imu, _ = simkit.synth_imu(traj)
    assert np.allclose(imu.gyro, 0, atol=0)
    assert np.allclose(np.linalg.norm(imu.accel, axis=1), 9.81, atol=1e-12)
    expected = np.einsum("nji,j->ni", traj.R, GravityModel().g_w)
    assert np.allclose(imu.accel, expected, atol=1e-12)


def test_constant_gyro_bias_on_static():
    traj = simkit.synth_trajectory(simkit.MotionProfile.preset("static", duration=2.0))
    imu, track = simkit.synth_imu(traj, simkit.BiasTrajectory(b_w0=[0.01, 0, 0]))
    assert np.allclose(imu.gyro, [0.01, 0, 0], atol=1e-15)
    assert np.allclose(track.b_w, [0.01, 0, 0])


def test_walk_closure(walk_traj):
    assert abs(np.linalg.norm(walk_traj.poses.p[-1]) - 84.0) < 0.1


def test_rates_and_shapes(walk_traj):
    assert len(walk_traj.t) == 12001 and len(walk_traj.poses) == 3001
    assert np.allclose(np.diff(walk_traj.poses.t), 0.02)
    assert np.allclose(np.linalg.norm(walk_traj.poses.q, axis=1), 1, atol=1e-12)


@pytest.mark.parametrize("kind,stride", [("walk", 4), ("stairs", 4), ("walk", 1), ("run", 1), ("stairs", 1)])
def test_position_differentiation_reproduces_acceleration(kind, stride):
    # stride 4 is the 50 Hz pose stream; the run bob is too fast for 1e-3 there
    traj = simkit.synth_trajectory(simkit.MotionProfile.preset(kind, duration=20.0, seed=1))
    acc = second_derivative(traj.p[::stride], stride * 0.005)
    ref = traj.acc_world[::stride][2:-2]
    assert np.abs(acc - ref)[50:-50].max() < 1e-3


@pytest.mark.parametrize("kind", ["walk", "run", "stairs"])
def test_gyro_is_orientation_derivative(kind):
    # [ω]× = Rᵀ dR/dt by central differences of the analytic orientation
    prof = simkit.MotionProfile.preset(kind, duration=5.0, seed=2)
    t = np.linspace(0.1, 4.9, 200)
    h = 1e-6
    *_, R, w = simkit._kinematics(prof, t)
    _, _, _, Rp, _ = simkit._kinematics(prof, t + h)
    _, _, _, Rm, _ = simkit._kinematics(prof, t - h)
    W = np.einsum("nji,njk->nik", R, (Rp - Rm) / (2 * h))
    w_fd = np.stack([W[:, 2, 1], W[:, 0, 2], W[:, 1, 0]], axis=1)
    assert np.abs(w_fd - w).max() < 1e-6


@pytest.mark.parametrize("kind", ["walk", "run", "stairs"])
def test_accel_norm_bound(kind):
    prof = simkit.MotionProfile.preset(kind, duration=30.0, seed=3)
    imu, _ = simkit.synth_imu(simkit.synth_trajectory(prof))
    assert np.linalg.norm(imu.accel, axis=1).max() <= simkit.accel_bound(prof) + 1e-9


def test_stairs_rise_on_ramps():
    traj = simkit.synth_trajectory(simkit.MotionProfile.preset("stairs", duration=20.0, seed=1))
    vz = traj.v[:, 2]
    ramp = vz > 1e-3 * vz.max()
    z = traj.p[:, 2]
    dz = np.diff(z)[ramp[:-1] & ramp[1:]]
    assert np.all(dz > 0)
    assert np.all(np.diff(z) >= -1e-12)
    assert z[-1] > 0.17 * 2 * 0.8 * 20.0 * 0.9


def test_determinism(walk_traj):
    noise = simkit.NOISE_PRESETS["livox"]
    bias = simkit.BiasTrajectory("random_walk", walk_sigma_a=0.01, walk_sigma_w=0.001)
    a, ta = simkit.synth_imu(walk_traj, bias, noise, seed=4)
    b, tb = simkit.synth_imu(walk_traj, bias, noise, seed=4)
    c, _ = simkit.synth_imu(walk_traj, bias, noise, seed=5)
    assert a.accel.tobytes() == b.accel.tobytes() and a.gyro.tobytes() == b.gyro.tobytes()
    assert ta.b_a.tobytes() == tb.b_a.tobytes()
    assert a.accel.tobytes() != c.accel.tobytes()


def test_noise_statistics(walk_traj):
    clean, _ = simkit.synth_imu(walk_traj)
    noisy, _ = simkit.synth_imu(walk_traj, noise=simkit.NOISE_PRESETS["livox"], seed=1)
    assert abs(np.std(noisy.accel - clean.accel) - 0.02) < 0.001
    assert abs(np.std(noisy.gyro - clean.gyro) - 0.002) < 0.0001


def test_mount_rotates_measurements(walk_traj):
    M = geom.rot_exp([0.2, 0.1, -0.4])
    base, _ = simkit.synth_imu(walk_traj)
    mounted, _ = simkit.synth_imu(walk_traj, mount=M)
    assert np.allclose(mounted.accel, base.accel @ M, atol=1e-12)
    assert np.allclose(mounted.gyro, base.gyro @ M, atol=1e-12)


def test_sinusoid_and_random_walk_bias():
    t = np.arange(0, 60, 0.005)
    ba, bw = simkit.BiasTrajectory("sinusoid", b_a0=[0.1, 0, 0], sin_amp_a=0.03, sin_amp_w=0.005).sample(
        t, np.random.default_rng(0))
    assert abs(ba[:, 0].mean() - 0.1) < 1e-3 and abs(np.abs(ba[:, 0] - 0.1).max() - 0.03) < 1e-4
    ba, _ = simkit.BiasTrajectory("random_walk", walk_sigma_a=0.01).sample(t, np.random.default_rng(0))
    assert ba[0].tolist() == [0, 0, 0] and np.std(np.diff(ba[:, 0])) == pytest.approx(0.01 * np.sqrt(0.005), rel=0.05)


def test_profile_validation():
    with pytest.raises(InvalidInputError):
        simkit.MotionProfile(kind="swim")
    with pytest.raises(InvalidInputError):
        simkit.MotionProfile(duration=-1)
    with pytest.raises(InvalidInputError):
        simkit.MotionProfile(speed=-0.1)
    with pytest.raises(InvalidInputError):
        simkit.BiasTrajectory(mode="drift")
