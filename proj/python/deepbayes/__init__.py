"""Deep generative classifier laboratory: Python surface over the C++ core."""

from deepbayes._core import (
    Model,
    attack,
    calibrate,
    load_model,
    run_pipeline,
    run_two_rings_demo,
    sample_two_rings,
    train_model,
    two_rings_model,
    __version__,
)

__all__ = [
    "Model",
    "attack",
    "calibrate",
    "load_model",
    "run_pipeline",
    "run_two_rings_demo",
    "sample_two_rings",
    "train_model",
    "two_rings_model",
    "__version__",
]
