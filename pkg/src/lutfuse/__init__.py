"""Multi-exposure image fusion with learned per-exposure 1D lookup tables.

The deployment path queries a K x 256 weight table per pixel, upsamples the
low-resolution weight maps with a guided filter, and alpha-blends the
exposures; the tables are distilled from an attention CNN trained without
ground truth against a structure-similarity objective.
"""

from .baseline import MertensConfig, mertens_fuse, mertens_weights, pyramid_blend
from .errors import (ConfigError, FormatError, FusionError, IoError,
                     MetadataError, NumericsError, ShapeError,
                     StackShapeError, WeightDomainError)
from .imgio import (ExposureStack, LutMatrix, YuvImage, choose_rate,
                    downsample_bilinear, load_sequence, load_sequence_dir,
                    read_image, read_lut, resize_bilinear, rgb_to_yuv,
                    write_lut, write_png, yuv_to_rgb)
from .lut_engine import (FusionConfig, adapt_frame_count, blend_y, fuse,
                         fuse_network, gfu_upsample, merge_uv,
                         normalize_weights, query_weights)
from .metrics import EvalRow, evaluate, psnr_brightness_sub, report_tsv, ssim
from .network import (NetworkParams, cfca_forward, conv2d, disa_forward,
                      init_params, load_params, network_forward, save_params)
from .synth import synthetic_dataset, synthetic_stack
from .training import (TrainConfig, adam_init, adam_step, extract_luts,
                       gradients, loss, loss_and_gradients, mef_ssim_score,
                       train)

__version__ = "0.1.0"
