"""Cross-resolution recognition toolkit.

Train a high-resolution teacher, distill a low-resolution student with
instance-level (decoupled distribution) and relation-level (contrastive)
losses, adapt the student's batch-norm statistics on unlabeled target data,
and evaluate with verification/identification protocols on a synthetic
cross-resolution benchmark.
"""

from ._kernels import BACKEND as kernel_backend
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "no_grad", "kernel_backend", "__version__"]
