"""Spectral decomposition of images over fused deep-feature and color affinities.

Feature affinities (thresholded Gram of normalized per-patch vectors) are
fused with a sparse KNN color graph; eigenvectors of the normalized graph
Laplacian then drive object localization, object segmentation, dataset-level
semantic segmentation, and soft image mattes.
"""

from .affinity import AffinityMatrix, feature_affinity, fuse_affinities, \
    knn_color_affinity, normalize_features
from .localize import BoundingBox, corloc, fiedler_bisect, iou, \
    largest_connected_component, localize, mask_to_bbox, select_foreground
from .matting import build_fullres_affinity, composite, soft_matte
from .pipeline import PipelineConfig
from .segment import CrfParams, coarse_object_mask, crf_refine, miou
from .semseg import ClusterModel, SegmentDescriptor, SegmentMap, cluster_dataset, \
    evaluate_semseg, hungarian, kmeans, per_image_segments, segment_descriptor
from .spectral import ConvergenceError, EigenDecomposition, SparseMatrix, \
    build_laplacian, build_normalized_laplacian, cut_value, dense_eigen_oracle, \
    quadratic_form, smallest_eigenpairs
from .tensor_io import DsftError, FeatureMap, bilinear_resize, crop_to_patch_multiple, \
    read_feature_map, replicate_pad, rgb_to_hsv, write_feature_map

__version__ = "0.1.0"
