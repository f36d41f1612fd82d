"""Dense ViT patch-feature extraction into DSFT tensor files."""

from .extract import ExtractorConfig, extract, extract_segment_crops, extract_to_file
from .vit import FEATURE_SOURCES, PRESETS, VisionTransformer, build_model

__version__ = "0.1.0"
