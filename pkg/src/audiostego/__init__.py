"""Hide long audio clips inside a single image with an invertible coupling network."""

from .audio import MelSpectrogram, Waveform, mel_compress, mel_decompress
from .inn import INNStack, es_gate, init_weights
from .nested import AccessLevel, NestedStack
from .packer import Format, PackedSecret, channels_for

__version__ = "0.1.0"

__all__ = [
    "AccessLevel",
    "Format",
    "INNStack",
    "MelSpectrogram",
    "NestedStack",
    "PackedSecret",
    "Waveform",
    "channels_for",
    "es_gate",
    "init_weights",
    "mel_compress",
    "mel_decompress",
]
