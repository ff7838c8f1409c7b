"""Camera pose estimation from object silhouettes and semantic part maps
using untextured mesh templates."""

from .errors import SilposeError
from .geometry import CameraPose, Mesh, geodesic_distance, load_obj, quat_from_view, save_obj
from .pose import PipelineConfig, PoseEstimate, fit_image, run_pipeline
from .render import RenderConfig, iou, render_silhouette, silhouette_loss_grad
from .semantics import SemanticTemplate, infer_template, smooth_miou

__all__ = [
    "CameraPose",
    "Mesh",
    "PipelineConfig",
    "PoseEstimate",
    "RenderConfig",
    "SemanticTemplate",
    "SilposeError",
    "fit_image",
    "geodesic_distance",
    "infer_template",
    "iou",
    "load_obj",
    "quat_from_view",
    "render_silhouette",
    "run_pipeline",
    "save_obj",
    "silhouette_loss_grad",
    "smooth_miou",
]

__version__ = "0.1.0"
