from .container import (ChecksumError, ContainerError, MagicError, SceneParts, VersionError, pack, unpack)
from .huffman import huffman_decode, huffman_encode
from .positions import decode_positions, dequantize_positions, encode_positions, quantize_positions
from .scene import (EncodeResult, PipelineConfig, SizeReport, compress, decode_scene, encode_scene, inspect,
                    score_importance)
