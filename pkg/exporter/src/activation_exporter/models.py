"""Builtin demonstration models.

Each builder seeds torch's RNG before constructing the module, so a given
(model, seed) pair always carries the same weights — a stand-in for
downloading published checkpoints, which this tool deliberately avoids.
Models are returned in eval mode.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ModelLoadError


class _Residual(nn.Module):
    """Stem conv plus a residual branch merged by addition."""

    def __init__(self) -> None:
        super().__init__()
        self.stem = nn.Conv2d(3, 16, 3, padding=1)
        self.branch = nn.Conv2d(16, 16, 3, padding=1)
        self.act = nn.ReLU()
        self.down = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.flatten = nn.Flatten()
        self.head = nn.Linear(32, 10)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.act(self.stem(x))
        x = x + self.act(self.branch(x))
        x = self.act(self.down(x))
        return self.head(self.flatten(self.pool(x)))


def _tinyconv() -> nn.Module:
    return nn.Sequential(
        nn.Conv2d(3, 16, 3, padding=1), nn.ReLU(),
        nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.ReLU(),
        nn.Conv2d(32, 24, 3, padding=1), nn.ReLU(),
        nn.AdaptiveAvgPool2d(1), nn.Flatten(),
        nn.Linear(24, 10),
    )


def _depthwise() -> nn.Module:
    return nn.Sequential(
        nn.Conv2d(3, 16, 3, padding=1), nn.ReLU(),
        nn.Conv2d(16, 16, 3, padding=1, groups=16), nn.ReLU(),
        nn.Conv2d(16, 32, 1), nn.ReLU(),
        nn.AdaptiveAvgPool2d(1), nn.Flatten(),
        nn.Linear(32, 10),
    )


_REGISTRY = {
    "tinyconv": _tinyconv,
    "residual": _Residual,
    "depthwise": _depthwise,
}


def available_models() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def load_model(name: str, seed: int) -> nn.Module:
    builder = _REGISTRY.get(name)
    if builder is None:
        raise ModelLoadError(
            f"unknown model {name!r}; available: {', '.join(available_models())}")
    torch.manual_seed(seed)
    try:
        model = builder()
    except Exception as exc:  # pragma: no cover - defensive
        raise ModelLoadError(f"failed to construct model {name!r}: {exc}") from exc
    model.eval()
    return model
