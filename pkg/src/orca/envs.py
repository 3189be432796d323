"""Desk-scale image-based control environments with scripted experts.

Three tasks: point_reach (velocity-controlled dot), two_link_reach
(joint-velocity arm with forward kinematics) and press_pad (gripper that
must align with and press a floor pad). Frames are 64x64 RGB in [0,1],
quantized to the uint8 grid so the in-memory stream matches the archived
one exactly.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolation, GenerationError, ProtocolError

IMAGE_SIZE = 64
_ARCHIVE_DATE = (2020, 1, 1, 0, 0, 0)  # fixed timestamp keeps archives byte-identical


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    action_dim: int
    episode_len: int
    metric_kind: str  # normalized_score | success_rate
    proprio_dim: int
    use_proprio_default: bool
    default_demos: int
    image_size: tuple[int, int, int] = (IMAGE_SIZE, IMAGE_SIZE, 3)

    def __post_init__(self):
        if self.episode_len < 1:
            raise ContractViolation("episode_len must be >= 1")
        if self.metric_kind not in ("normalized_score", "success_rate"):
            raise ContractViolation(f"unknown metric kind {self.metric_kind!r}")


ENV_SPECS = {
    "point_reach": EnvSpec("point_reach", action_dim=2, episode_len=40,
                           metric_kind="normalized_score", proprio_dim=2,
                           use_proprio_default=False, default_demos=5),
    "two_link_reach": EnvSpec("two_link_reach", action_dim=2, episode_len=40,
                              metric_kind="normalized_score", proprio_dim=2,
                              use_proprio_default=True, default_demos=5),
    "press_pad": EnvSpec("press_pad", action_dim=2, episode_len=30,
                         metric_kind="success_rate", proprio_dim=2,
                         use_proprio_default=True, default_demos=2),
}


# ---------------------------------------------------------------------------
# Rendering (pure function of pose; world coordinates in [0,1], y up)
# ---------------------------------------------------------------------------

_GRID_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    if size not in _GRID_CACHE:
        centers = (np.arange(size, dtype=np.float64) + 0.5) / size
        xx = np.broadcast_to(centers[None, :], (size, size))
        yy = np.broadcast_to(1.0 - centers[:, None], (size, size))
        _GRID_CACHE[size] = (xx, yy)
    return _GRID_CACHE[size]


def _blend(img: np.ndarray, alpha: np.ndarray, color) -> None:
    a = alpha[:, :, None]
    img *= 1.0 - a
    img += np.asarray(color, dtype=np.float64) * a


def _disk_alpha(size: int, center, radius: float) -> np.ndarray:
    xx, yy = _grid(size)
    dist = np.hypot(xx - center[0], yy - center[1])
    edge = 0.5 / size  # half-pixel anti-aliasing band
    return np.clip((radius + edge - dist) / (2 * edge), 0.0, 1.0)


def _soft_disk_alpha(size: int, center, radius: float) -> np.ndarray:
    """Gaussian-profile blob; spatially smooth so nearby poses yield
    overlapping activations downstream (helps policies interpolate)."""
    xx, yy = _grid(size)
    dist_sq = (xx - center[0]) ** 2 + (yy - center[1]) ** 2
    sigma = radius / 1.5
    return np.exp(-0.5 * dist_sq / (sigma * sigma))


def _segment_alpha(size: int, p0, p1, thickness: float) -> np.ndarray:
    xx, yy = _grid(size)
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    sq_len = dx * dx + dy * dy
    if sq_len < 1e-12:
        return _disk_alpha(size, p0, thickness)
    t = np.clip(((xx - p0[0]) * dx + (yy - p0[1]) * dy) / sq_len, 0.0, 1.0)
    dist = np.hypot(xx - (p0[0] + t * dx), yy - (p0[1] + t * dy))
    edge = 0.5 / size
    return np.clip((thickness + edge - dist) / (2 * edge), 0.0, 1.0)


def _rect_alpha(size: int, x0, y0, x1, y1) -> np.ndarray:
    xx, yy = _grid(size)
    edge = 0.5 / size
    ax = np.clip((np.minimum(xx - x0, x1 - xx)) / (2 * edge) + 0.5, 0.0, 1.0)
    ay = np.clip((np.minimum(yy - y0, y1 - yy)) / (2 * edge) + 0.5, 0.0, 1.0)
    return ax * ay


def _quantize(img: np.ndarray) -> np.ndarray:
    """Snap a float frame onto the uint8 grid (archive round trips bit-exactly)."""
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
            .astype(np.float32) / 255.0)


_BG = (0.08, 0.09, 0.12)


# ---------------------------------------------------------------------------
# Environments
# ---------------------------------------------------------------------------


class ToyEnv:
    """Common stepping/bookkeeping: subclasses provide dynamics and drawing."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self._t = 0
        self._done = True
        self._success = False
        self.clipped_steps: list[int] = []

    # subclass hooks
    def _sample_state(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _advance(self, action: np.ndarray) -> float:
        raise NotImplementedError

    def _draw(self, img: np.ndarray) -> None:
        raise NotImplementedError

    def _draw_agent_alpha(self, size: int) -> np.ndarray:
        raise NotImplementedError

    def proprio(self) -> np.ndarray:
        raise NotImplementedError

    def expert_action(self) -> np.ndarray:
        raise NotImplementedError

    # shared API
    def reset(self, seed: int):
        rng = np.random.default_rng(seed)
        self._sample_state(rng)
        self._t = 0
        self._done = False
        self._success = False
        self.clipped_steps = []
        return self.render(), self.proprio()

    def step(self, action):
        if self._done:
            raise ProtocolError("step() called after episode end")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape[0] != self.spec.action_dim:
            raise ContractViolation(
                f"action dim {action.shape[0]} != {self.spec.action_dim}")
        if np.any(np.abs(action) > 1.0 + 1e-9):
            self.clipped_steps.append(self._t)
        action = np.clip(action, -1.0, 1.0)
        reward = self._advance(action)
        success_now = self._check_success()
        self._success = self._success or success_now
        self._t += 1
        self._done = self._t >= self.spec.episode_len
        return self.render(), self.proprio(), reward, self._done, self._success

    def _check_success(self) -> bool:
        raise NotImplementedError

    @property
    def success(self) -> bool:
        return self._success

    def render(self) -> np.ndarray:
        size = self.spec.image_size[0]
        img = np.empty((size, size, 3), dtype=np.float64)
        img[:] = _BG
        self._draw(img)
        return _quantize(img)

    def agent_mask(self) -> np.ndarray:
        """Binary mask of the agent's pixels (renderer-derived, for grounding)."""
        return self._draw_agent_alpha(self.spec.image_size[0]) > 0.5

    def salient_mask(self) -> np.ndarray:
        """Task-relevant pixels (agent plus goal/pad), for fixture weighting."""
        return self._draw_salient_alpha(self.spec.image_size[0]) > 0.25

    def _draw_salient_alpha(self, size: int) -> np.ndarray:
        return self._draw_agent_alpha(size)

    def episode_metric(self) -> float:
        if not self._done:
            raise ProtocolError("episode_metric() before episode end")
        if self.spec.metric_kind == "success_rate":
            return 1.0 if self._success else 0.0
        return self._normalized_score()

    def _normalized_score(self) -> float:
        raise NotImplementedError


class PointReachEnv(ToyEnv):
    """Velocity-controlled blob that must reach a goal blob.

    The agent spawns centrally and the goal on a surrounding annulus, and
    both render as smooth gaussian blobs; the scripted expert jitters its
    approach away from the goal so demonstrations carry recovery behavior.
    """

    MAX_SPEED = 0.06
    SUCCESS_DIST = 0.05
    AGENT_COLOR = (0.95, 0.55, 0.15)
    GOAL_COLOR = (0.25, 0.85, 0.35)
    RADIUS = 5.0 / IMAGE_SIZE
    EXPERT_NOISE = 0.35

    def __init__(self):
        super().__init__(ENV_SPECS["point_reach"])
        self.pos = np.zeros(2)
        self.goal = np.zeros(2)
        self.initial_dist = 1.0
        self._rng = np.random.default_rng(0)

    def _sample_state(self, rng):
        self._rng = rng
        while True:
            self.pos = rng.uniform(0.40, 0.60, size=2)
            angle = rng.uniform(-np.pi, np.pi)
            radius = rng.uniform(0.22, 0.36)
            self.goal = self.pos + radius * np.array([np.cos(angle), np.sin(angle)])
            if np.all((self.goal > 0.08) & (self.goal < 0.92)):
                break
        self.initial_dist = float(np.linalg.norm(self.pos - self.goal))

    def _advance(self, action):
        self.pos = np.clip(self.pos + action * self.MAX_SPEED, 0.04, 0.96)
        return -float(np.linalg.norm(self.pos - self.goal))

    def _check_success(self):
        return float(np.linalg.norm(self.pos - self.goal)) < self.SUCCESS_DIST

    def _normalized_score(self):
        if self.initial_dist < self.SUCCESS_DIST:
            return 1.0
        final = float(np.linalg.norm(self.pos - self.goal))
        return max(0.0, 1.0 - final / self.initial_dist)

    def _draw(self, img):
        size = img.shape[0]
        _blend(img, _soft_disk_alpha(size, self.goal, self.RADIUS), self.GOAL_COLOR)
        _blend(img, _soft_disk_alpha(size, self.pos, self.RADIUS), self.AGENT_COLOR)

    def _draw_agent_alpha(self, size):
        return _soft_disk_alpha(size, self.pos, self.RADIUS)

    def _draw_salient_alpha(self, size):
        return np.maximum(_soft_disk_alpha(size, self.pos, self.RADIUS),
                          _soft_disk_alpha(size, self.goal, self.RADIUS))

    def proprio(self):
        return self.pos.astype(np.float32).copy()

    def expert_action(self):
        to_goal = self.goal - self.pos
        u = to_goal / self.MAX_SPEED
        if np.linalg.norm(to_goal) > 2 * self.SUCCESS_DIST:
            u = u + self._rng.normal(0.0, self.EXPERT_NOISE, size=2)
        return np.clip(u, -1.0, 1.0)


def _wrap_angle(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


class TwoLinkReachEnv(ToyEnv):
    """Two-joint arm; joint-velocity control toward a goal dot."""

    ANCHOR = np.array([0.5, 0.52])
    L1, L2 = 0.21, 0.16
    MAX_OMEGA = 0.22
    SUCCESS_DIST = 0.045
    ELBOW_LIMIT = 2.8

    def __init__(self):
        super().__init__(ENV_SPECS["two_link_reach"])
        self.theta = np.zeros(2)
        self.goal = np.zeros(2)
        self.initial_dist = 1.0

    def _fk(self):
        t1, t2 = self.theta
        elbow = self.ANCHOR + self.L1 * np.array([np.cos(t1), np.sin(t1)])
        tip = elbow + self.L2 * np.array([np.cos(t1 + t2), np.sin(t1 + t2)])
        return elbow, tip

    def _sample_state(self, rng):
        while True:
            self.theta = np.array([rng.uniform(-np.pi, np.pi),
                                   rng.uniform(-2.2, 2.2)])
            radius = rng.uniform(self.L1 - self.L2 + 0.04, self.L1 + self.L2 - 0.02)
            angle = rng.uniform(-np.pi, np.pi)
            self.goal = self.ANCHOR + radius * np.array([np.cos(angle), np.sin(angle)])
            _, tip = self._fk()
            in_frame = np.all((self.goal > 0.08) & (self.goal < 0.92))
            if in_frame and np.linalg.norm(tip - self.goal) >= 0.18:
                break
        _, tip = self._fk()
        self.initial_dist = float(np.linalg.norm(tip - self.goal))

    def _advance(self, action):
        self.theta[0] = _wrap_angle(self.theta[0] + action[0] * self.MAX_OMEGA)
        self.theta[1] = np.clip(self.theta[1] + action[1] * self.MAX_OMEGA,
                                -self.ELBOW_LIMIT, self.ELBOW_LIMIT)
        _, tip = self._fk()
        return -float(np.linalg.norm(tip - self.goal))

    def _check_success(self):
        _, tip = self._fk()
        return float(np.linalg.norm(tip - self.goal)) < self.SUCCESS_DIST

    def _normalized_score(self):
        _, tip = self._fk()
        final = float(np.linalg.norm(tip - self.goal))
        if self.initial_dist < self.SUCCESS_DIST:
            return 1.0
        return max(0.0, 1.0 - final / self.initial_dist)

    def _draw(self, img):
        size = img.shape[0]
        elbow, tip = self._fk()
        _blend(img, _disk_alpha(size, self.goal, 3.0 / IMAGE_SIZE), (0.25, 0.85, 0.35))
        _blend(img, _segment_alpha(size, self.ANCHOR, elbow, 2.2 / IMAGE_SIZE),
               (0.5, 0.58, 0.72))
        _blend(img, _segment_alpha(size, elbow, tip, 2.0 / IMAGE_SIZE),
               (0.72, 0.76, 0.86))
        _blend(img, _disk_alpha(size, self.ANCHOR, 2.0 / IMAGE_SIZE), (0.35, 0.38, 0.45))
        _blend(img, _disk_alpha(size, tip, 2.5 / IMAGE_SIZE), (0.95, 0.55, 0.15))

    def _draw_agent_alpha(self, size):
        elbow, tip = self._fk()
        alpha = _segment_alpha(size, self.ANCHOR, elbow, 2.2 / IMAGE_SIZE)
        alpha = np.maximum(alpha, _segment_alpha(size, elbow, tip, 2.0 / IMAGE_SIZE))
        return np.maximum(alpha, _disk_alpha(size, tip, 2.5 / IMAGE_SIZE))

    def proprio(self):
        return self.theta.astype(np.float32).copy()

    def expert_action(self):
        delta = self.goal - self.ANCHOR
        r = np.clip(np.linalg.norm(delta), abs(self.L1 - self.L2) + 1e-3,
                    self.L1 + self.L2 - 1e-3)
        cos_t2 = (r ** 2 - self.L1 ** 2 - self.L2 ** 2) / (2 * self.L1 * self.L2)
        t2_target = np.arccos(np.clip(cos_t2, -1.0, 1.0))
        if self.theta[1] < 0:  # keep the current elbow bend to avoid long detours
            t2_target = -t2_target
        t1_target = np.arctan2(delta[1], delta[0]) - np.arctan2(
            self.L2 * np.sin(t2_target), self.L1 + self.L2 * np.cos(t2_target))
        err = np.array([_wrap_angle(t1_target - self.theta[0]),
                        t2_target - self.theta[1]])
        return np.clip(err / self.MAX_OMEGA, -1.0, 1.0)


class PressPadEnv(ToyEnv):
    """Gripper that must align horizontally with a pad and press down on it."""

    SPEED = 0.07
    ALIGN_TOL = 0.06
    PRESS_HEIGHT = 0.25
    PAD_TOP = 0.2
    GRIP_HALF = 3.5 / IMAGE_SIZE

    def __init__(self):
        super().__init__(ENV_SPECS["press_pad"])
        self.pos = np.zeros(2)
        self.pad_x = 0.5

    def _sample_state(self, rng):
        self.pos = np.array([rng.uniform(0.15, 0.85), rng.uniform(0.55, 0.85)])
        while True:
            self.pad_x = rng.uniform(0.2, 0.8)
            if abs(self.pad_x - self.pos[0]) >= 0.2:
                break

    def _aligned(self):
        return abs(self.pos[0] - self.pad_x) <= self.ALIGN_TOL

    def _advance(self, action):
        already = self._success
        self.pos = np.clip(self.pos + action * self.SPEED,
                           [0.05, 0.24], [0.95, 0.95])
        # pressing means descending to the pad while aligned
        pressed_now = self._aligned() and self.pos[1] <= self.PRESS_HEIGHT
        return 1.0 if (pressed_now and not already) else 0.0

    def _check_success(self):
        return self._aligned() and self.pos[1] <= self.PRESS_HEIGHT

    def _draw(self, img):
        size = img.shape[0]
        _blend(img, _rect_alpha(size, 0.0, 0.0, 1.0, 0.16), (0.15, 0.16, 0.2))
        pad_color = (0.3, 0.95, 0.4) if self._success else (0.85, 0.2, 0.2)
        _blend(img, _rect_alpha(size, self.pad_x - 0.07, 0.16, self.pad_x + 0.07,
                                self.PAD_TOP), pad_color)
        _blend(img, self._draw_agent_alpha(size), (0.7, 0.72, 0.82))
        tip = (self.pos[0], self.pos[1] - self.GRIP_HALF)
        _blend(img, _disk_alpha(size, tip, 1.5 / IMAGE_SIZE), (0.95, 0.55, 0.15))

    def _draw_agent_alpha(self, size):
        return _rect_alpha(size, self.pos[0] - self.GRIP_HALF, self.pos[1] - self.GRIP_HALF,
                           self.pos[0] + self.GRIP_HALF, self.pos[1] + self.GRIP_HALF)

    def proprio(self):
        return self.pos.astype(np.float32).copy()

    def expert_action(self):
        dx = self.pad_x - self.pos[0]
        if abs(dx) > 0.02:
            # stay high while traversing so the press is deliberate
            dy = 0.4 if self.pos[1] < 0.4 else 0.0
            return np.clip(np.array([dx / self.SPEED, dy]), -1.0, 1.0)
        return np.array([np.clip(dx / self.SPEED, -1.0, 1.0), -1.0])

    def _normalized_score(self):
        return 1.0 if self._success else 0.0


_ENV_CLASSES = {
    "point_reach": PointReachEnv,
    "two_link_reach": TwoLinkReachEnv,
    "press_pad": PressPadEnv,
}


def make_env(env_id: str) -> ToyEnv:
    if env_id not in _ENV_CLASSES:
        raise ConfigError(f"unknown env {env_id!r}; choose from {sorted(_ENV_CLASSES)}")
    return _ENV_CLASSES[env_id]()


# ---------------------------------------------------------------------------
# Episodes and datasets
# ---------------------------------------------------------------------------


@dataclass
class Episode:
    observations: list[np.ndarray]
    proprios: list[np.ndarray]
    actions: list[np.ndarray]
    rewards: list[float]
    success: bool
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        n = len(self.observations)
        if not (len(self.proprios) == len(self.actions) == len(self.rewards) == n):
            raise ContractViolation("episode lists must have equal lengths")
        if not np.all(np.isfinite(self.rewards)):
            raise ContractViolation("non-finite reward in episode")

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class DemoDataset:
    env_id: str
    episodes: list[Episode]
    generator_seed: int
    expert_id: str = "scripted_v1"

    def validate(self) -> None:
        if not self.episodes:
            raise ContractViolation("dataset must contain at least one episode")
        for ep in self.episodes:
            ep.validate()


def rollout(env: ToyEnv, act_fn, seed: int) -> tuple[Episode, float]:
    """Run one episode; act_fn(obs, proprio, env) -> action."""
    obs, proprio = env.reset(seed)
    observations, proprios, actions, rewards = [], [], [], []
    done = False
    while not done:
        action = np.asarray(act_fn(obs, proprio, env), dtype=np.float32)
        observations.append(obs)
        proprios.append(proprio)
        actions.append(action)
        obs, proprio, reward, done, success = env.step(action)
        rewards.append(float(reward))
    metric = env.episode_metric()
    episode = Episode(observations=observations, proprios=proprios, actions=actions,
                      rewards=rewards, success=env.success,
                      meta={"score": metric, "seed": seed,
                            "clipped_steps": list(env.clipped_steps)})
    return episode, metric


def expert_act(obs, proprio, env):
    return env.expert_action()


def generate_demos(env_id: str, n_episodes: int, seed: int,
                   quality_bar: float = 0.95, max_attempts_per_episode: int = 5) -> DemoDataset:
    """Scripted-expert demonstrations, post-filtered to the quality bar.

    Every stored episode has normalized score >= quality_bar or success on
    success-rate tasks; fresh seeds are drawn for retries up to the budget.
    """
    env = make_env(env_id)
    episodes = []
    budget = n_episodes * max_attempts_per_episode
    attempt = 0
    while len(episodes) < n_episodes and attempt < budget:
        ep_seed = int(np.random.SeedSequence([seed, attempt]).generate_state(1)[0])
        episode, metric = rollout(env, expert_act, ep_seed)
        attempt += 1
        good = episode.success if env.spec.metric_kind == "success_rate" \
            else metric >= quality_bar
        if good:
            episodes.append(episode)
    if len(episodes) < n_episodes:
        raise GenerationError(
            f"expert produced {len(episodes)}/{n_episodes} acceptable episodes "
            f"in {attempt} attempts on {env_id}")
    ds = DemoDataset(env_id=env_id, episodes=episodes, generator_seed=seed)
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# Archive I/O (deterministic zip: fixed entry order and timestamps)
# ---------------------------------------------------------------------------


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


def save_demos(dataset: DemoDataset, path: Path | str) -> Path:
    """Write a demo archive; identical datasets produce byte-identical files."""
    dataset.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": 1,
        "env_id": dataset.env_id,
        "generator_seed": dataset.generator_seed,
        "expert_id": dataset.expert_id,
        "n_episodes": len(dataset.episodes),
        "quality_bar": 0.95,
    }
    manifest["config_hash"] = hashlib.sha256(
        json.dumps(manifest, sort_keys=True).encode()).hexdigest()[:12]
    entries: list[tuple[str, bytes]] = [
        ("manifest.json", json.dumps(manifest, indent=2, sort_keys=True).encode())]
    for i, ep in enumerate(dataset.episodes):
        obs = np.round(np.stack(ep.observations) * 255.0).astype(np.uint8)
        prefix = f"ep{i:03d}"
        entries.append((f"{prefix}/obs.npy", _npy_bytes(obs)))
        entries.append((f"{prefix}/proprio.npy",
                        _npy_bytes(np.stack(ep.proprios).astype(np.float32))))
        entries.append((f"{prefix}/actions.npy",
                        _npy_bytes(np.stack(ep.actions).astype(np.float32))))
        entries.append((f"{prefix}/rewards.npy",
                        _npy_bytes(np.asarray(ep.rewards, dtype=np.float32))))
        meta = dict(ep.meta, success=bool(ep.success))
        entries.append((f"{prefix}/meta.json",
                        json.dumps(meta, indent=2, sort_keys=True).encode()))
    with zipfile.ZipFile(path, "w") as zh:
        for name, payload in entries:
            info = zipfile.ZipInfo(name, date_time=_ARCHIVE_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            zh.writestr(info, payload, compresslevel=6)
    return path


def load_demos(path: Path | str) -> DemoDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with zipfile.ZipFile(path) as zh:
        manifest = json.loads(zh.read("manifest.json"))
        episodes = []
        for i in range(manifest["n_episodes"]):
            prefix = f"ep{i:03d}"
            obs = np.load(io.BytesIO(zh.read(f"{prefix}/obs.npy")))
            proprio = np.load(io.BytesIO(zh.read(f"{prefix}/proprio.npy")))
            actions = np.load(io.BytesIO(zh.read(f"{prefix}/actions.npy")))
            rewards = np.load(io.BytesIO(zh.read(f"{prefix}/rewards.npy")))
            meta = json.loads(zh.read(f"{prefix}/meta.json"))
            episodes.append(Episode(
                observations=[f.astype(np.float32) / 255.0 for f in obs],
                proprios=list(proprio),
                actions=list(actions),
                rewards=[float(r) for r in rewards],
                success=bool(meta.pop("success")),
                meta=meta,
            ))
    ds = DemoDataset(env_id=manifest["env_id"], episodes=episodes,
                     generator_seed=manifest["generator_seed"],
                     expert_id=manifest["expert_id"])
    ds.validate()
    return ds
