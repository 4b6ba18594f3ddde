__version__ = "0.1.0"


DEFAULT_DENOISER = "default"
