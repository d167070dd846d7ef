"""Continual identification of shared latents across tasks."""

from ._icon import (
    ContractError,
    DivergenceError,
    Error,
    Flow,
    IngestionError,
    alignment,
    generate,
    kl_gauss,
    manifold_distance,
    run,
    spectral_norm,
)

__all__ = [
    "ContractError",
    "DivergenceError",
    "Error",
    "Flow",
    "IngestionError",
    "alignment",
    "generate",
    "kl_gauss",
    "manifold_distance",
    "run",
    "spectral_norm",
]
