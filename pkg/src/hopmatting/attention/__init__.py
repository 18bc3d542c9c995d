from .hop import (
    HopBlockParams,
    global_attention,
    global_hop_forward,
    global_logits,
    local_attention,
    local_attention_weights,
    local_hop_forward,
    self_attention_forward,
)
from .kernels import BACKEND
from .posenc import (
    BG,
    FG,
    UNKNOWN,
    LocalRelativePe,
    SiPositionalEncoding,
    si_encoding,
    sinusoidal_code,
    trimap_code,
    trimap_onehot,
)

__all__ = [
    "BACKEND",
    "BG",
    "FG",
    "UNKNOWN",
    "HopBlockParams",
    "LocalRelativePe",
    "SiPositionalEncoding",
    "global_attention",
    "global_hop_forward",
    "global_logits",
    "local_attention",
    "local_attention_weights",
    "local_hop_forward",
    "self_attention_forward",
    "si_encoding",
    "sinusoidal_code",
    "trimap_code",
    "trimap_onehot",
]
