"""Style augmentation: semantic self-reconstruction behind providers, plus conventional transforms."""

from .ops import (
    MAX_RECONSTRUCTIONS,
    AugmentationRecord,
    TraditionalAugConfig,
    caption,
    hflip,
    self_reconstruct,
    shift_hue,
    traditional_augment,
)
from .providers import (
    CAPTION_PROVIDERS,
    RECONSTRUCTION_PROVIDERS,
    CaptionProvider,
    HashCaptionStub,
    IdentityReconstructionStub,
    NoiseReconstructionStub,
    ReconstructionProvider,
    TransformersCaptionProvider,
    make_caption_provider,
    make_reconstruction_provider,
    register_caption_provider,
    register_reconstruction_provider,
)
