"""Single-object localization from the Fiedler eigenvector.

Pipeline order: sign-threshold the first nonzero-eigenvalue eigenvector,
keep the smaller sign region as foreground, keep its largest 4-connected
component, then scale the tight box around it back to pixel coordinates.
The final box is invariant to the eigenvector's sign ambiguity.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import label_components
from .spectral import EigenDecomposition

NONZERO_EIGENVALUE_TOL = 1e-6
CORLOC_IOU_THRESHOLD = 0.5


class DegenerateSpectrumError(ValueError):
    """No eigenvector with eigenvalue above the zero threshold."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, inclusive-exclusive pixel coordinates."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {(self.x1, self.y1, self.x2, self.y2)}")

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def fiedler_vector(eig: EigenDecomposition, zero_tol: float = NONZERO_EIGENVALUE_TOL):
    """First eigenvector whose eigenvalue exceeds the zero threshold.

    Extra zero modes from disconnected graphs carry component indicators,
    not bisection information, so they are skipped along with the constant
    eigenvector.
    """
    for i, lam in enumerate(eig.eigenvalues):
        if lam > zero_tol:
            return eig.eigenvectors[i]
    raise DegenerateSpectrumError(
        f"no eigenvalue above {zero_tol:g} among {len(eig.eigenvalues)} computed pairs"
    )


def fiedler_bisect(eig: EigenDecomposition, zero_tol: float = NONZERO_EIGENVALUE_TOL) -> np.ndarray:
    """Binary mask from the sign of the Fiedler eigenvector on its grid."""
    if eig.grid is None:
        raise ValueError("decomposition has no grid shape attached")
    y = fiedler_vector(eig, zero_tol)
    return (y >= 0).reshape(eig.grid)


def select_foreground(mask: np.ndarray) -> np.ndarray:
    """Keep the smaller of the two sign regions, re-encoded as ones.

    Exact ties keep the side that was 1 in the input.
    """
    mask = np.asarray(mask).astype(bool)
    if mask.size == 0:
        raise ValueError("empty mask")
    ones = int(mask.sum())
    return mask if ones <= mask.size - ones else ~mask


def largest_connected_component(mask: np.ndarray) -> np.ndarray:
    """Largest 4-connected component; size ties go to the component whose
    first cell appears earliest in row-major order."""
    mask = np.asarray(mask).astype(bool)
    if not mask.any():
        raise ValueError("mask has no set cells")
    labels = label_components(mask)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best_size = sizes.max()
    candidates = np.flatnonzero(sizes == best_size)
    if candidates.size == 1:
        winner = candidates[0]
    else:
        flat = labels.ravel()
        winner = min(candidates, key=lambda c: int(np.argmax(flat == c)))
    return labels == winner


def mask_to_bbox(mask: np.ndarray, patch_size: int) -> BoundingBox:
    """Tight box around set cells, scaled to pixels by the patch size."""
    mask = np.asarray(mask).astype(bool)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("mask has no set cells")
    return BoundingBox(
        x1=int(cols[0]) * patch_size,
        y1=int(rows[0]) * patch_size,
        x2=(int(cols[-1]) + 1) * patch_size,
        y2=(int(rows[-1]) + 1) * patch_size,
    )


def localize(eig: EigenDecomposition, patch_size: int) -> BoundingBox:
    """Full per-image localization: bisect, pick foreground, box the largest blob."""
    mask = select_foreground(fiedler_bisect(eig))
    return mask_to_bbox(largest_connected_component(mask), patch_size)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = max(0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def corloc(preds: Sequence[BoundingBox], gts: Sequence[Sequence[BoundingBox]]) -> float:
    """Fraction of images whose predicted box overlaps any ground-truth box
    with IoU above 0.5."""
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions for {len(gts)} ground-truth sets")
    if not preds:
        raise ValueError("empty image list")
    hits = sum(
        1
        for pred, boxes in zip(preds, gts)
        if any(iou(pred, gt) > CORLOC_IOU_THRESHOLD for gt in boxes)
    )
    return hits / len(preds)
