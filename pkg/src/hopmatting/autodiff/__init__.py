from . import ops
from .gradcheck import CheckReport, finite_diff_check
from .ops import linear, softmax
from .serialize import load_archive, load_tensor, save_archive, save_tensor
from .tensor import GradTape, ShapeError, Tensor, as_tensor, backward

__all__ = [
    "CheckReport",
    "GradTape",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "backward",
    "finite_diff_check",
    "linear",
    "load_archive",
    "load_tensor",
    "ops",
    "save_archive",
    "save_tensor",
    "softmax",
]
