"""Bottom-up multiscale image quality assessment with text-embedding scoring."""

__version__ = "0.1.0"

from .autograd import Tensor, no_grad  # noqa: F401
from .kernels import active_backend  # noqa: F401
