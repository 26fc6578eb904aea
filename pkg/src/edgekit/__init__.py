"""Edge-guidance losses, gated fusion and one-step latent denoising for diffusion SR."""

__version__ = "0.1.0"

from .ameloss import (
    EntropyReport,
    HybridWeights,
    ImagePair,
    LossMatrix,
    WeightVector,
    ame_loss,
    build_loss_matrix,
    compute_weights,
    entropy,
    entropy_weights,
    hybrid_loss,
    minmax_normalize,
)
from .detectors import CannyParams, DetectorId, EdgeConfig, canny, detect, ingest_hed, log_response, sobel
from .edgemetrics import SsimParams, edge_loss_gradient, l1_loss, l2_loss, psnr, ssim, ssim_loss
from .gatedfusion import GateMlp, GateWeights, fuse, gate_pipeline, mlp_forward, softmax_gate
from .imagecore import GrayImage, LatentTensor, SemanticVector, load_image, resize_bicubic, save_image
from .onestep import DiffusionSchedule, build_vp_schedule, denoise_step, forward_diffuse, one_step_sr

__all__ = [name for name in dir() if not name.startswith("_")]
