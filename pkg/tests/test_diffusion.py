import numpy as np
import pytest

from preview_restore.diffusion import (
    NoiseSchedule,
    add_noise,
    cfg_combine,
    ddim_step,
    diffusion_loss,
    grid_successor,
    noise_to,
    x0_from_eps,
)
from preview_restore.errors import ScheduleError, ShapeError
from preview_restore.tensor import Rng, Tensor, precision


@pytest.fixture
def cosine():
    return NoiseSchedule(256)


def test_schedule_is_variance_preserving(cosine):
    np.testing.assert_allclose(cosine.alpha ** 2 + cosine.beta ** 2, 1.0, atol=1e-12)
    assert cosine.alpha[0] == 1.0 and cosine.beta[0] == 0.0
    assert np.all(np.diff(cosine.alpha) < 0)
    frame = cosine.to_frame()
    assert list(frame.columns) == ["t", "alpha", "beta"]
    assert len(frame) == 257


def test_schedule_rejects_bad_arguments():
    with pytest.raises(ScheduleError):
        NoiseSchedule(256, kind="linear")
    with pytest.raises(ScheduleError):
        NoiseSchedule(1)
    with pytest.raises(ScheduleError):
        NoiseSchedule.from_tables([1.0, 0.5], [0.0])


def test_inference_grid(cosine):
    np.testing.assert_array_equal(cosine.inference_grid(4), [255, 170, 86, 1])
    grid = cosine.inference_grid(50)
    assert len(grid) == 50 and grid[0] == 255 and grid[-1] == 1
    assert np.all(np.diff(grid) < 0)
    for steps in (0, 256):
        with pytest.raises(ScheduleError):
            cosine.inference_grid(steps)


def test_steps_outside_schedule_raise(cosine):
    x = Tensor(np.zeros((1, 1, 4, 4)))
    with pytest.raises(ScheduleError):
        noise_to(x, x, 257, cosine)
    with pytest.raises(ScheduleError):
        noise_to(x, x, -1, cosine)


def test_add_noise_matches_noise_to(cosine):
    x = Tensor(Rng(0).normal((2, 1, 4, 4)))
    sample = add_noise(x, np.array([10, 200]), Rng(1), cosine)
    np.testing.assert_array_equal(sample.z_t.data, noise_to(x, sample.eps, np.array([10, 200]), cosine).data)
    again = add_noise(x, np.array([10, 200]), Rng(1), cosine)
    np.testing.assert_array_equal(sample.eps.data, again.eps.data)


def test_noise_at_step_zero_is_identity(cosine):
    x = Tensor(Rng(0).normal((1, 1, 4, 4)))
    np.testing.assert_array_equal(add_noise(x, 0, Rng(1), cosine).z_t.data, x.data)


def test_x0_recovery_with_true_noise(cosine):
    with precision(np.float64):
        x = Tensor(Rng(0).normal((3, 1, 4, 4)))
        eps = Tensor(Rng(1).normal((3, 1, 4, 4)))
        steps = np.array([1, 128, 250])
        z_t = noise_to(x, eps, steps, cosine)
        np.testing.assert_allclose(x0_from_eps(z_t, eps, steps, cosine).data, x.data, atol=1e-8)
        assert x0_from_eps(z_t, eps, 0, cosine) is z_t
        with pytest.raises(ScheduleError):
            x0_from_eps(z_t, eps, 256, cosine)


def test_ddim_steps_compose(cosine):
    with precision(np.float64):
        z_t = Tensor(Rng(0).normal((2, 1, 4, 4)))
        x0 = Tensor(Rng(1).normal((2, 1, 4, 4)))
        direct = ddim_step(z_t, x0, 200, 50, cosine)
        chained = ddim_step(ddim_step(z_t, x0, 200, 120, cosine), x0, 120, 50, cosine)
        np.testing.assert_allclose(chained.data, direct.data, atol=1e-10)
        np.testing.assert_allclose(ddim_step(z_t, x0, 200, 0, cosine).data, x0.data, atol=1e-12)


def test_ddim_step_per_sample_steps(cosine):
    with precision(np.float64):
        z_t = Tensor(Rng(0).normal((2, 1, 4, 4)))
        x0 = Tensor(Rng(1).normal((2, 1, 4, 4)))
        batched = ddim_step(z_t, x0, np.array([200, 100]), np.array([150, 20]), cosine).data
        np.testing.assert_allclose(batched[0], ddim_step(z_t, x0, 200, 150, cosine).data[0], atol=1e-12)
        np.testing.assert_allclose(batched[1], ddim_step(z_t, x0, 100, 20, cosine).data[1], atol=1e-12)


def test_ddim_step_errors(cosine):
    z = Tensor(np.zeros((1, 1, 4, 4)))
    with pytest.raises(ScheduleError):
        ddim_step(z, z, 10, 20, cosine)
    with pytest.raises(ScheduleError):
        ddim_step(z, z, 0, 0, cosine)
    assert ddim_step(z, z, 30, 30, cosine) is z


def test_diffusion_loss():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 3)))
    assert diffusion_loss(a, b).item() == pytest.approx(1.0)
    with pytest.raises(ShapeError):
        diffusion_loss(a, Tensor(np.zeros((3, 2))))


def test_cfg_combine():
    uncond, cond = Tensor(np.array([1.0, 2.0])), Tensor(np.array([3.0, 0.0]))
    assert cfg_combine(uncond, cond, 1.0) is cond
    assert cfg_combine(uncond, cond, 0.0) is uncond
    np.testing.assert_allclose(cfg_combine(uncond, cond, 2.0).data, [5.0, -2.0])


def test_grid_successor(cosine):
    grid = cosine.inference_grid(4)
    np.testing.assert_array_equal(grid_successor(grid, np.array([255, 86])), [170, 1])
    assert int(grid_successor(grid, 170)) == 86
    with pytest.raises(ScheduleError):
        grid_successor(grid, 1)
    with pytest.raises(ScheduleError):
        grid_successor(grid, 100)


def test_scalar_updates_by_hand():
    tables = NoiseSchedule.from_tables([1.0, 0.9, 0.8], [0.0, 0.436, 0.6])
    with precision(np.float64):
        x0_hat = x0_from_eps(Tensor(np.array([1.0])), Tensor(np.array([0.5])), 2, tables)
        np.testing.assert_allclose(x0_hat.data, [0.875])
        z_prev = ddim_step(Tensor(np.array([1.0])), x0_hat, 2, 1, tables)
        np.testing.assert_allclose(z_prev.data, [1.0055])
        np.testing.assert_allclose(cfg_combine(Tensor(np.array([0.2])), Tensor(np.array([0.4])), 7.0).data, [1.6])


def test_add_noise_marginal_moments(cosine):
    x = Tensor(np.full((10000, 1, 2, 2), 0.5))
    sample = add_noise(x, 128, Rng(7), cosine)
    alpha, beta = cosine.alpha[128], cosine.beta[128]
    np.testing.assert_allclose(sample.z_t.data.mean(axis=0), alpha * 0.5, atol=0.03)
    assert np.var(sample.z_t.data - alpha * 0.5) == pytest.approx(beta ** 2, rel=0.05)
