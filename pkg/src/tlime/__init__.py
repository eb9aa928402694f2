"""Local surrogate explanations of image classifiers with decision trees (TLIME) and linear models (LIME)."""

from .explainer import (
    ComparisonReport,
    Explanation,
    ExplainerConfig,
    compare,
    compare_batch,
    explain_linear,
    explain_tree,
    prediction_error,
    top_labels,
)
from .representation import Image, SegmentMap, full_instance, l2_distance, recover
from .sampling import KernelConfig, PerturbationSet, build_database
from .segmentation import SegmentationConfig, segment, segment_grid, segment_slic
from .surrogate import LinearSurrogate, SurrogateTree, fit_linear, fit_tree

__version__ = "0.1.0"
