"""Rigid CT-to-X-ray registration: renderer, similarity encoder, optimizers."""

import importlib

__all__ = [
    "EncoderConfig",
    "ParamSet",
    "Pose",
    "ProjectionGeometry",
    "Volume",
    "compose",
    "exp_map",
    "geodesic_sq",
    "gradient_correlation",
    "init_encoder_params",
    "inverse",
    "load_params",
    "load_volume",
    "log_map",
    "make_phantom",
    "mtre",
    "ncc",
    "pose_from_json",
    "pose_to_json",
    "project",
    "project_with_jacobian",
    "register_cmaes",
    "register_net",
    "register_pipeline",
    "sample_pose",
    "save_params",
    "save_volume",
    "success_rate",
    "train",
]

try:
    _core = importlib.import_module("._radreg", __name__)
except ImportError:
    # plain CMake build: the extension sits on sys.path, not inside the package
    _core = importlib.import_module("_radreg")

for _name in __all__:
    globals()[_name] = getattr(_core, _name)
del _name
