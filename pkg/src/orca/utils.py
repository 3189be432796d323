"""Small shared helpers: seeding, parameter checksums, tensor conversion."""

from __future__ import annotations

import contextlib
import hashlib

import numpy as np
import torch


@contextlib.contextmanager
def seeded_init(seed: int):
    """Run module construction under a forked, seeded global RNG.

    Keeps weight initialization reproducible without disturbing the caller's
    RNG stream.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def derive_seed(*parts) -> int:
    """Deterministically derive a 63-bit seed from a tuple of ints/strings."""
    h = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def parameter_checksum(module: torch.nn.Module) -> str:
    """SHA-256 over all parameters and buffers, in named order.

    Detects any in-place mutation of a supposedly frozen network, including
    normalization buffers.
    """
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def freeze_module(module: torch.nn.Module) -> torch.nn.Module:
    """Mark every parameter non-trainable and switch to eval mode."""
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module


def frames_to_tensor(frames: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Convert (B,H,W,3) or (H,W,3) float frames in [0,1] to (B,3,H,W) tensors."""
    arr = np.asarray(frames, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected (B,H,W,3) frames, got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def grad_norm(params) -> float:
    """L2 norm over the .grad of an iterable of parameters (missing grads count as 0)."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return total ** 0.5
