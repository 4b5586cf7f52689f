"""Recurrent stereo disparity engine with monocular-depth initialization,
scale-recovery updates, and desk-scale evaluation machinery."""

__version__ = "0.1.0"

from .config import EngineConfig, LookupConfig
from .correlation import (CorrelationPyramid, LookupTable, build_correlation,
                          build_pyramid, lookup_allocation_count,
                          max_search_range, precompute_lookup_indexes,
                          pyramid_lookup, scale_lookup)
from .dataio import (WeightBundle, load_weights, read_disp_png16, read_pfm,
                     read_pfm_disparity, save_weights, write_disp_png16,
                     write_pfm)
from .depth_provider import (DepthEstimate, PerturbSpec, RegionScale,
                             load_external_depth, perturb_depth)
from .encoders import (ContextSet, FeaturePair, encode_context,
                       encode_matching, fuse_features, generate_weights)
from .evalkit import (AffineFit, EmptyEvaluationError, MetricReport,
                      affine_align, compute_metrics, ratio_map_std,
                      sequence_loss)
from .ops import avg_pool_last, bilinear_sample_last, conv2d_forward
from .scene_synth import Layer, SceneSpec, quarter_ground_truth, synth_scene
from .updater import (DisparityState, InferenceResult, convex_upsample,
                      delta_update_step, greedy_scale_step, gru_step,
                      init_disparity, run_inference, scale_update_step)

__all__ = [
    "EngineConfig", "LookupConfig",
    "CorrelationPyramid", "LookupTable", "build_correlation", "build_pyramid",
    "lookup_allocation_count", "max_search_range", "precompute_lookup_indexes",
    "pyramid_lookup", "scale_lookup",
    "WeightBundle", "load_weights", "read_disp_png16", "read_pfm",
    "read_pfm_disparity", "save_weights", "write_disp_png16", "write_pfm",
    "DepthEstimate", "PerturbSpec", "RegionScale", "load_external_depth",
    "perturb_depth",
    "ContextSet", "FeaturePair", "encode_context", "encode_matching",
    "fuse_features", "generate_weights",
    "AffineFit", "EmptyEvaluationError", "MetricReport", "affine_align",
    "compute_metrics", "ratio_map_std", "sequence_loss",
    "avg_pool_last", "bilinear_sample_last", "conv2d_forward",
    "Layer", "SceneSpec", "quarter_ground_truth", "synth_scene",
    "DisparityState", "InferenceResult", "convex_upsample", "delta_update_step",
    "greedy_scale_step", "gru_step", "init_disparity", "run_inference",
    "scale_update_step",
]
