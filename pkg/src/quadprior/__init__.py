"""Illumination-invariant quadruple prior, toy diffusion enhancer and bypass decoder."""
from .errors import ImageIOError, InvalidArgumentError, NumericError, QuadPriorError, StateError
from .imagecore import ImageF, Kernel1D, conv_separable, gaussian_kernel, load_png, load_qpt, save_png, save_qpt
from .prior import ColorModel, QuadPrior, apply_color_model, extract_prior
from .distortion import IlluminationSpec, NoiseSpec, add_gauss_poisson, apply_illumination, distort
from .diffmath import NoiseSchedule, forward_sample, make_linear_schedule, reconstruct_z0
from .metrics import loe, psnr, ssim
from .kernels import available_backends, set_backend

__version__ = "0.1.0"

__all__ = [
    "QuadPriorError", "InvalidArgumentError", "ImageIOError", "NumericError", "StateError",
    "ImageF", "Kernel1D", "gaussian_kernel", "conv_separable", "load_png", "save_png", "load_qpt", "save_qpt",
    "ColorModel", "QuadPrior", "apply_color_model", "extract_prior",
    "NoiseSpec", "IlluminationSpec", "apply_illumination", "add_gauss_poisson", "distort",
    "NoiseSchedule", "make_linear_schedule", "forward_sample", "reconstruct_z0",
    "psnr", "ssim", "loe", "available_backends", "set_backend", "__version__",
]
