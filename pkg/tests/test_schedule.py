import numpy as np
import pytest
import torch

from orca.errors import ContractViolation
from orca.schedule import (LatentTensor, NoiseSchedule, make_linear_schedule,
                           noise_batch, noise_latent)


def scalar_loop_noise(z0: np.ndarray, t: int, eps: np.ndarray,
                      schedule: NoiseSchedule) -> np.ndarray:
    """Independent oracle: Eq.-free elementwise loop over flat arrays."""
    bar = 1.0
    for i in range(t):
        bar *= float(schedule.alphas[i])
    out = np.empty_like(z0, dtype=np.float64)
    flat_z, flat_e, flat_o = z0.ravel(), eps.ravel(), out.ravel()
    for j in range(flat_z.size):
        flat_o[j] = (bar ** 0.5) * flat_z[j] + ((1.0 - bar) ** 0.5) * flat_e[j]
    return out


def test_schedule_invariants():
    sched = make_linear_schedule(1000)
    assert sched.bar_alphas[0] == 1.0
    assert sched.bar_alphas.shape == (1001,)
    assert np.all(np.diff(sched.bar_alphas) <= 0)
    assert np.all(sched.alphas > 0) and np.all(sched.alphas <= 1)
    assert np.all(sched.bar_alphas > 0) and np.all(sched.bar_alphas <= 1)


def test_schedule_rejects_bad_alphas():
    with pytest.raises(ContractViolation):
        NoiseSchedule(alphas=np.array([0.9, 1.2]))
    with pytest.raises(ContractViolation):
        NoiseSchedule(alphas=np.array([0.0, 0.5]))


def test_noise_latent_t0_is_bitwise_identity():
    sched = make_linear_schedule(100)
    z0 = LatentTensor(torch.randn(3, 8, 8))
    eps = LatentTensor(torch.randn(3, 8, 8))
    out = noise_latent(z0, 0, eps, sched)
    assert torch.equal(out.values, z0.values)


def test_noise_latent_scalar_case():
    # bar_alpha = 0.25 at t=1 via a single-step schedule
    sched = NoiseSchedule(alphas=np.array([0.25]))
    z0 = LatentTensor(torch.full((1, 1, 1), 2.0, dtype=torch.float64))
    eps = LatentTensor(torch.full((1, 1, 1), 1.0, dtype=torch.float64))
    out = noise_latent(z0, 1, eps, sched)
    assert float(out.values) == pytest.approx(1.8660254, abs=1e-6)


def test_noise_latent_zero_signal():
    sched = NoiseSchedule(alphas=np.array([0.5]))
    z0 = LatentTensor(torch.zeros(2, 4, 4, dtype=torch.float64))
    eps = LatentTensor(torch.randn(2, 4, 4, dtype=torch.float64))
    out = noise_latent(z0, 1, eps, sched)
    assert torch.allclose(out.values, (0.5 ** 0.5) * eps.values)


def test_noise_latent_shape_and_range_errors():
    sched = make_linear_schedule(10)
    z0 = LatentTensor(torch.zeros(3, 4, 4))
    with pytest.raises(ContractViolation):
        noise_latent(z0, 1, LatentTensor(torch.zeros(3, 2, 2)), sched)
    eps = LatentTensor(torch.zeros(3, 4, 4))
    with pytest.raises(IndexError):
        noise_latent(z0, 11, eps, sched)
    with pytest.raises(IndexError):
        noise_latent(z0, -1, eps, sched)


def test_noising_matches_scalar_loop_oracle():
    sched = make_linear_schedule(50)
    rng = np.random.default_rng(7)
    for _ in range(50):
        t = int(rng.integers(0, 51))
        z0 = rng.standard_normal((2, 3, 3))
        eps = rng.standard_normal((2, 3, 3))
        expected = scalar_loop_noise(z0, t, eps, sched)
        out = noise_latent(LatentTensor(torch.from_numpy(z0)), t,
                           LatentTensor(torch.from_numpy(eps)), sched)
        np.testing.assert_allclose(out.values.numpy(), expected, atol=1e-6)


def test_noise_batch_per_sample_timesteps():
    sched = make_linear_schedule(20)
    z0 = torch.randn(4, 3, 4, 4, dtype=torch.float64)
    eps = torch.randn(4, 3, 4, 4, dtype=torch.float64)
    t = torch.tensor([0, 5, 10, 20])
    out = noise_batch(z0, t, eps, sched)
    for i, ti in enumerate(t.tolist()):
        single = noise_latent(LatentTensor(z0[i]), ti, LatentTensor(eps[i]), sched)
        assert torch.allclose(out[i], single.values)


def test_statistical_moments_of_noised_latent():
    # fixed z0, eps resampled: sample mean -> sqrt(bar)*z0,
    # per-element variance -> (1 - bar), within 3 standard errors
    sched = make_linear_schedule(1000)
    t = 400
    bar = float(sched.bar_alphas[t])
    n = 10_000
    gen = torch.Generator().manual_seed(99)
    z0 = torch.tensor([[[0.7, -1.2], [0.1, 2.0]]], dtype=torch.float64)
    samples = torch.stack([
        noise_latent(LatentTensor(z0), t,
                     LatentTensor(torch.randn(z0.shape, generator=gen,
                                              dtype=torch.float64)),
                     sched).values
        for _ in range(n)])
    mean = samples.mean(dim=0)
    var = samples.var(dim=0, unbiased=True)
    se_mean = ((1 - bar) / n) ** 0.5
    se_var = (1 - bar) * (2.0 / (n - 1)) ** 0.5
    assert torch.all((mean - (bar ** 0.5) * z0).abs() < 3 * se_mean)
    assert torch.all((var - (1 - bar)).abs() < 3 * se_var)


def test_latent_tensor_contract():
    with pytest.raises(ContractViolation):
        LatentTensor(torch.zeros(4, 4))
    with pytest.raises(ContractViolation):
        LatentTensor(torch.zeros(3, 4, 4), space_tag="voxel")
