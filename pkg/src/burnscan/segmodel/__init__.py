from .config import FULL_WIDTH, REDUCED_WIDTH, TINY_WIDTH, ModelConfig
from .estimator import BurnedAreaSegmenter, binarize, predict_patch
from .network import BurnSegNet, segmentation_loss
from .serialization import export_weights, import_weights


def build_model(config: ModelConfig, **kwargs) -> BurnedAreaSegmenter:
    """Untrained segmenter with deterministically initialised weights."""
    return BurnedAreaSegmenter.from_config(config, **kwargs).build()


__all__ = [
    "BurnSegNet",
    "BurnedAreaSegmenter",
    "FULL_WIDTH",
    "ModelConfig",
    "REDUCED_WIDTH",
    "TINY_WIDTH",
    "binarize",
    "build_model",
    "export_weights",
    "import_weights",
    "predict_patch",
    "segmentation_loss",
]
