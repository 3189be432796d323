import numpy as np
import pytest
import torch

from orca.errors import ConfigError, ContractViolation, TrainingDiverged
from orca.policy import PolicyConfig, PolicyNet, bc_loss, predict_action, train
from orca.utils import frames_to_tensor, parameter_checksum

from helpers import build_tiny_agent, finite_difference_grad, synthetic_dataset


def test_bc_loss_identity_is_zero():
    a = torch.tensor([[0.3, -0.7]])
    assert float(bc_loss(a, a.clone())) == 0.0


def test_bc_loss_hand_case():
    pred = torch.tensor([[1.0, 0.0]])
    target = torch.tensor([[0.0, 0.0]])
    assert float(bc_loss(pred, target)) == pytest.approx(0.5)


def test_bc_loss_symmetry_and_nonnegative():
    g = torch.Generator().manual_seed(0)
    a, b = torch.randn(4, 3, generator=g), torch.randn(4, 3, generator=g)
    assert float(bc_loss(a, b)) == pytest.approx(float(bc_loss(b, a)))
    assert float(bc_loss(a, b)) >= 0
    assert float(bc_loss(a, b, kind="l1")) == pytest.approx(float((a - b).abs().mean()))


def test_bc_loss_shape_mismatch():
    with pytest.raises(ContractViolation):
        bc_loss(torch.zeros(2, 2), torch.zeros(2, 3))


def test_policy_zero_weights_zero_action():
    cfg = PolicyConfig(action_dim=3, hidden_sizes=(8,))
    net = PolicyNet(5, cfg, seed=0)
    for p in net.parameters():
        p.data.zero_()
    out = predict_action(net, torch.randn(5))
    assert torch.equal(out, torch.zeros(3))


def test_policy_deterministic_and_proprio_concat():
    cfg = PolicyConfig(action_dim=2, hidden_sizes=(8,), use_proprio=True)
    net = PolicyNet(6, cfg, seed=1)
    state, proprio = torch.randn(4), torch.randn(2)
    a = predict_action(net, state, proprio)
    b = predict_action(net, state, proprio)
    assert torch.equal(a, b)
    with pytest.raises(ContractViolation):
        predict_action(net, state)  # missing proprio -> wrong input length


def test_policy_config_validation():
    with pytest.raises(ConfigError):
        PolicyConfig(action_dim=0)
    with pytest.raises(ConfigError):
        PolicyConfig(action_dim=2, epochs=0)
    with pytest.raises(ConfigError):
        PolicyConfig(action_dim=2, loss_kind="huber")


def test_train_seed_determinism(tmp_path):
    losses = []
    for run in range(2):
        agent = build_tiny_agent(epochs=3, seed=5)
        ds = synthetic_dataset(seed=9)
        state = train(ds, agent, agent.policy_config, tmp_path / f"run{run}",
                      seed=11, eval_every=1000)
        losses.append(state.loss_history)
    assert losses[0] == losses[1]
    assert len(losses[0]) > 0


def test_train_checkpoints_and_eval_cadence(tmp_path):
    agent = build_tiny_agent(epochs=20, seed=2)
    ds = synthetic_dataset(n_episodes=1, steps=4, seed=3)
    seen = []
    state = train(ds, agent, agent.policy_config, tmp_path, seed=0, eval_every=10,
                  eval_fn=lambda epoch, path: seen.append((epoch, path.exists())) or 0.5)
    assert [e for e, _ in seen] == [10, 20]
    assert all(existed for _, existed in seen)
    assert sorted(p.name for p in tmp_path.glob("ckpt_*.pt")) == \
        ["ckpt_e010.pt", "ckpt_e020.pt"]
    assert state.eval_records == [(10, 0.5), (20, 0.5)]


def test_final_epoch_improves_on_first(tmp_path):
    agent = build_tiny_agent(epochs=30, seed=4, lr=3e-3)
    ds = synthetic_dataset(n_episodes=1, steps=2, seed=7)
    state = train(ds, agent, agent.policy_config, tmp_path, seed=1, eval_every=1000)
    assert state.epoch_losses[-1] < state.epoch_losses[0]


def test_trainable_set_exactness(tmp_path):
    agent = build_tiny_agent(variant="orca", epochs=1, seed=6)
    pipeline = agent.pipeline
    ds = synthetic_dataset(seed=8)
    frozen = [pipeline.backend.unet,
              pipeline.conditioner.text_encoder,
              pipeline.conditioner.vision_encoder]
    sums = [parameter_checksum(m) for m in frozen]
    train(ds, agent, agent.policy_config, tmp_path, seed=0, eval_every=1000)
    assert [parameter_checksum(m) for m in frozen] == sums
    for module in frozen:
        assert all(p.grad is None for p in module.parameters())
    bank = pipeline.conditioner.bank
    assert float(bank.task_tokens.grad.norm()) > 0
    assert float(bank.projector.weight.grad.norm()) > 0
    head = pipeline.compression.heads["down_1"]
    assert float(head.layers[0].weight.grad.norm()) > 0
    assert float(agent.policy.net[0].weight.grad.norm()) > 0


def test_gradient_matches_finite_differences():
    torch.manual_seed(0)
    agent = build_tiny_agent(image_size=8, dtype=torch.float64, seed=13)
    pipeline = agent.pipeline
    bank = pipeline.conditioner.bank
    rng = np.random.default_rng(17)
    frames = torch.from_numpy(
        np.round(rng.random((2, 8, 8, 3)) * 255) / 255).to(torch.float64)
    frames = frames.permute(0, 3, 1, 2).contiguous()
    target = torch.from_numpy(rng.uniform(-1, 1, (2, 2))).to(torch.float64)

    def loss_fn():
        vec = pipeline.state_vectors(frames)
        return bc_loss(agent.policy(vec), target)

    loss = loss_fn()
    bank.task_tokens.grad = None
    loss.backward()
    analytic = bank.task_tokens.grad.view(-1)
    coords = rng.choice(analytic.numel(), size=20, replace=False)
    with torch.no_grad():
        fd = finite_difference_grad(loss_fn, bank.task_tokens, coords, h=1e-5)
    for idx, fd_val in zip(coords, fd):
        ga = float(analytic[idx])
        rel = abs(ga - fd_val) / max(abs(ga), abs(fd_val), 1e-10)
        assert rel < 1e-4, f"coord {idx}: analytic {ga} vs fd {fd_val} (rel {rel})"


def test_divergence_aborts_with_manifest(tmp_path):
    agent = build_tiny_agent(epochs=2, seed=3)
    with torch.no_grad():
        agent.policy.net[0].weight.fill_(float("nan"))
    ds = synthetic_dataset(seed=4)
    with pytest.raises(TrainingDiverged) as err:
        train(ds, agent, agent.policy_config, tmp_path, seed=0, eval_every=1000)
    assert (tmp_path / "divergence_manifest.json").exists()
    assert err.value.manifest_path.endswith("divergence_manifest.json")


def test_loss_kind_switch_trains_l1(tmp_path):
    agent = build_tiny_agent(epochs=2, seed=5)
    agent.policy_config.loss_kind = "l1"
    ds = synthetic_dataset(n_episodes=1, steps=4, seed=5)
    state = train(ds, agent, agent.policy_config, tmp_path, seed=0, eval_every=1000)
    assert len(state.loss_history) > 0


def test_obs_stack_widens_policy_input():
    agent = build_tiny_agent(seed=7)
    fused = agent.pipeline.fused_length
    frames = np.stack([synthetic_dataset(1, 3, seed=1).episodes[0].observations])
    stacked = np.stack([frames[0][:2]])  # (B=1, stack=2, H, W, 3)
    agent.obs_stack = 2
    vec = agent.pipeline.state_vectors(stacked.reshape(2, 16, 16, 3))
    assert vec.shape == (2, fused)
    inputs = agent.state_inputs(stacked)
    assert inputs.shape == (1, fused * 2)
