"""Panoramic affordance heatmap toolkit.

Desk-scale building blocks for grounding affordance classes in
equirectangular panoramas: deterministic float32 numerics, ERP geometry
and augmentation, latitude-compensated spectral token refinement,
seed-driven activation densification, multi-level losses with analytic
gradients, and saliency-style evaluation metrics.
"""

from .densify import (AffinityMatrix, AffordanceMap, DensifierParams,
                      confidence_map, cosine_affinity, densify,
                      initial_activations, refine_activations, select_seeds,
                      to_pixel_map)
from .errors import (ConfigError, ContractError, DomainError, ParameterError,
                     PFTFormatError, ShapeError, VocabularyError)
from .geometry import (AugmentParams, KeypointAnnotation, LatitudeProfile,
                       annotation_from_dict, annotation_to_dict, augment,
                       blur_supervision, keypoints_to_heatmap,
                       latitude_profile, load_vocabulary,
                       normalize_to_distribution, sample_augment_params,
                       wrap_shift)
from .metrics import MetricReport, MetricRow, evaluate_dataset, kld, nss, sim
from .numerics import (PanoPadding, conv2d_pano, gaussian_kernel, gelu,
                       laplacian_kernel, matmul, mean_std, row_softmax,
                       sigmoid, tensor, topk_indices)
from .objectives import (LossBreakdown, LossWeights, bce_loss, grad_heatmap_losses,
                         grad_info_nce, info_nce_loss, kl_loss, optimize_heatmap,
                         region_pool, total_loss, two_blob_target)
from .pft import read_pft, write_pft, write_pgm
from .pipeline import (PipelineConfig, forward, init_params, load_config,
                       load_params, save_config, save_params)
from .spectral import (ModulatorParams, TextEmbeddings, VisualTokens,
                       contextual_reaggregate, cross_modal_inject,
                       frequency_decompose, fuse_with_gates, fusion_gates,
                       gated_fuse, modulate, multi_head_attention,
                       sharpen_high_freq, stabilize_low_freq)

__version__ = "0.1.0"
