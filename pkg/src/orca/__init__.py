"""Task-adaptive visual state representations from a frozen conditional
denoiser, with learnable task/visual prompts and behavior cloning on top."""

__version__ = "0.1.0"

from .backbone import (BackendDescriptor, ExtractionConfig, FeatureBundle,
                       ToyBackend, ToyUNet, create_backend, extract_features,
                       list_tap_points, register_backend)
from .compression import CompressionBank, CompressionConfig, compress, fuse
from .conditioner import ConditionEmbedding, Conditioner, PromptBank, project_visual
from .config import RunConfig, load_config
from .encoders import ToyTextEncoder, ToyVisionEncoder
from .envs import (ENV_SPECS, DemoDataset, Episode, generate_demos, load_demos,
                   make_env, save_demos)
from .evaluation import (AblationGrid, RunResult, aggregate, evaluate_policy,
                         make_grid, run_ablation)
from .policy import PolicyConfig, PolicyNet, bc_loss, predict_action, train
from .schedule import (LatentTensor, NoiseSchedule, make_linear_schedule,
                       noise_latent)

__all__ = [
    "AblationGrid", "BackendDescriptor", "CompressionBank", "CompressionConfig",
    "ConditionEmbedding", "Conditioner", "DemoDataset", "ENV_SPECS", "Episode",
    "ExtractionConfig", "FeatureBundle", "LatentTensor", "NoiseSchedule",
    "PolicyConfig", "PolicyNet", "PromptBank", "RunConfig", "RunResult",
    "ToyBackend", "ToyTextEncoder", "ToyUNet", "ToyVisionEncoder", "aggregate",
    "bc_loss", "compress", "create_backend", "evaluate_policy",
    "extract_features", "fuse", "generate_demos", "list_tap_points",
    "load_config", "load_demos", "make_env", "make_grid",
    "make_linear_schedule", "noise_latent", "predict_action", "project_visual",
    "register_backend", "run_ablation", "save_demos", "train",
]
