"""tcaq - Timestep-channel aware post-training quantization of a toy diffusion model."""

__version__ = "1.0.0"
