"""Channel-aware pseudo-labeling for mixed-bandwidth speech pretraining.

Narrow- and wide-band audio get separate k-means codebooks whose cluster IDs
are pooled without overlap, so a frame's pseudo-label also identifies its
channel. The package covers the full desk-scale pipeline: WAV handling and
resampling, log-mel features, clustering, run-length-collapsed decoder
targets, span masking, the composite pretraining and finetuning losses, and
diagnostics for band energy and label/channel mutual information.
"""

__version__ = "0.1.0"

from .audio import (
    AudioBuffer,
    CHANNEL_RATES,
    NARROW,
    NARROW_RATE,
    WIDE,
    WIDE_RATE,
    channel_for_rate,
    load_wav,
    parse_wav,
    rate_for_channel,
    resample,
    save_wav,
    synthesize,
    write_wav,
)
from .clustering import (
    Codebook,
    FrameLabelSequence,
    PooledCodebook,
    assign,
    assign_channel_aware,
    inertia,
    kmeans_fit,
    pool_codebooks,
)
from .dsp import (
    BandEnergyReport,
    FeatureMatrix,
    MelFilterbankConfig,
    band_energy_ratio,
    export_spectrogram,
    frame_count,
    logmel,
    mel_filterbank,
    power_spectrum,
    spectrogram_db,
)
from .errors import (
    AlreadyWrapped,
    ChannelMismatch,
    DimensionMismatch,
    EmptyInput,
    InsufficientData,
    InvalidConfig,
    InvalidFrequency,
    InvalidTarget,
    LabelOutOfRange,
    LengthMismatch,
    MalformedFile,
    MixbandError,
    NoMaskedFrames,
    OffsetTooSmall,
    TargetTooLong,
    TooShort,
    UnsupportedChannels,
    UnsupportedFormat,
    UnsupportedRatio,
)
from .formats import (
    UtteranceRecord,
    decode_fmx1,
    encode_fmx1,
    load_codebook,
    load_fmx1,
    load_label_file,
    load_manifest,
    load_mask_file,
    save_codebook,
    save_fmx1,
    save_label_file,
    save_manifest,
    save_mask_file,
)
from .labeling import (
    MaskPlan,
    TargetSequence,
    Vocabulary,
    channel_entropy,
    channel_mutual_information,
    collapse_ids,
    collapse_repeats,
    span_mask,
    wrap_with_boundaries,
)
from .losses import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    LossBreakdown,
    ctc_greedy_decode,
    ctc_loss,
    finetune_loss,
    finite_diff_check,
    masked_prediction_grad,
    masked_prediction_loss,
    pretrain_loss,
    sequence_loss,
)
from .pipeline import PipelineConfig, config_from_dict, run_label_pipeline
