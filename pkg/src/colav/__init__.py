"""Collision-aware multimodal trajectory prediction on occupancy maps.

Submodules are imported lazily so that deployment code paths such as
`colav.model.predict` never pay for (or depend on) the training-only
machinery in `sampling`, `nce`, `losses`, and `training`.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "OccupancyMap": "gridmap",
    "MapPatch": "gridmap",
    "MapFormatError": "gridmap",
    "ProjectionError": "gridmap",
    "load_map": "gridmap",
    "load_pgm": "gridmap",
    "save_pgm": "gridmap",
    "load_homography": "gridmap",
    "save_homography": "gridmap",
    "SamplingConfig": "sampling",
    "SampleStreams": "sampling",
    "SampleSet": "sampling",
    "draw_positive": "sampling",
    "select_seeds": "sampling",
    "expand_negatives": "sampling",
    "build_sample_set": "sampling",
    "ContrastiveBatch": "nce",
    "QueryEncoder": "nce",
    "KeyEncoder": "nce",
    "mapnce_loss": "nce",
    "loss_from_batch": "nce",
    "collides": "losses",
    "collision_mask": "losses",
    "env_collision_loss": "losses",
    "variety_loss": "losses",
    "total_loss": "losses",
    "LossBreakdown": "losses",
    "ade_fde_min": "metrics",
    "ecfl": "metrics",
    "MetricsReport": "metrics",
    "PedestrianTrack": "data",
    "TrajectoryWindow": "data",
    "Scene": "data",
    "TrajectoryFormatError": "data",
    "load_trajectories": "data",
    "make_windows": "data",
    "stack_windows": "data",
    "load_manifest": "data",
    "load_scenes": "data",
    "write_tsv": "data",
    "ModelConfig": "model",
    "init_params": "model",
    "predict": "model",
    "save_checkpoint": "model",
    "load_checkpoint": "model",
    "TrainConfig": "training",
    "TrainState": "training",
    "NonFiniteLossError": "training",
    "ABLATIONS": "training",
    "train": "training",
    "check_gradients": "training",
    "run_gradcheck": "training",
    "save_state": "training",
    "load_state": "training",
    "SceneSpec": "synth",
    "generate_scene": "synth",
    "as_scene": "synth",
    "write_scene": "synth",
    "render_svg": "viz",
    "Tensor": "autodiff",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str):
    module_name = _EXPORTS.get(name)
    if module_name is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    module = importlib.import_module(f".{module_name}", __name__)
    return getattr(module, name)


def __dir__():
    return __all__
