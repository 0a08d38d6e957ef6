"""roughsense: audio-based surface roughness sensing and vibrotactile rendering.

Dual-microphone audio in, low-latency rough/smooth/no-contact decisions out,
rendered as a parameter-smoothed sine for a vibrotactile actuator; plus the
training and evaluation tooling around the classifier.
"""

from .audio_core import (
    AnalysisWindow,
    AudioBuffer,
    ChunkRing,
    LoudnessDbfs,
    dbfs_to_linear,
    linear_to_dbfs,
    rms_dbfs,
)
from .classifier import (
    Architecture,
    ClassScores,
    ModelParams,
    TrainConfig,
    forward,
    load_model,
    loss_and_grad,
    save_model,
    train,
)
from .dataset import (
    DatasetManifest,
    DynamicThreshold,
    FixedThreshold,
    LabeledChunkSet,
    chunk_and_label,
    ingest,
    synth_dataset,
)
from .dsp_frontend import Decimator, DspConfig, FeatureVector, featurize, make_ring
from .errors import (
    ConfigError,
    DataError,
    FingerprintError,
    NetworkError,
    NumericError,
    RoughsenseError,
)
from .gate_and_synth import (
    Decision,
    DecisionClass,
    GateConfig,
    Oscillator,
    decision_to_targets,
    gate,
)
from .pipeline import LatencyReport, StreamProcessor
from .transport import FramePacket, JitterBuffer, UdpReceiver, UdpSender, impair

__version__ = "0.1.0"
