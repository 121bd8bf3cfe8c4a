from .arith import (
    BitstreamExhaustedError,
    ModelDesyncError,
    decode_cube_map,
    decode_indices,
    encode_cube_map,
    encode_indices,
    morton_order,
)
from .container import (
    MAGIC,
    MODES,
    SECTION_ATTRIBUTES,
    SECTION_CUBES,
    SECTION_GEOMETRY,
    VERSION,
    BadMagicError,
    CodedStream,
    ContainerError,
    LengthOverrunError,
    Section,
    StreamHeader,
    VersionMismatchError,
    assemble,
    code_to_tau,
    disassemble,
    header_bytes,
    tau_to_code,
)

__all__ = [
    "BadMagicError", "BitstreamExhaustedError", "CodedStream",
    "ContainerError", "LengthOverrunError", "MAGIC", "MODES",
    "ModelDesyncError", "SECTION_ATTRIBUTES", "SECTION_CUBES",
    "SECTION_GEOMETRY", "Section", "StreamHeader", "VERSION",
    "VersionMismatchError", "assemble", "code_to_tau", "decode_cube_map",
    "decode_indices", "disassemble", "encode_cube_map", "encode_indices",
    "header_bytes", "morton_order", "tau_to_code",
]
