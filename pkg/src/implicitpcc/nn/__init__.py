from .network import (
    NetworkArch,
    NetworkParams,
    backward,
    encode_batch,
    forward,
    forward_with_cache,
    init_params,
    normalize_coords,
    positional_encode,
    predict_coords,
    zeros,
)
from .optim import (
    OptimizerState,
    adam_step,
    adam_update,
    l1_subgradient,
    make_optimizer,
    quarter_boundaries,
)
from .quantization import QuantizedParams, dequantize, quantize, quantize_array

__all__ = [
    "NetworkArch", "NetworkParams", "QuantizedParams", "OptimizerState",
    "adam_step", "adam_update", "backward", "dequantize", "encode_batch",
    "forward", "forward_with_cache", "init_params", "l1_subgradient",
    "make_optimizer", "normalize_coords", "positional_encode",
    "predict_coords", "quantize", "quantize_array", "quarter_boundaries",
    "zeros",
]
