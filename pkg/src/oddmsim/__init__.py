"""oddmsim: delay-Doppler multicarrier link simulator and analysis toolkit."""

from .modem import (
    Constellation,
    DDGrid,
    ModemParams,
    TimeSequence,
    dd_to_time,
    make_constellation,
    time_to_dd,
)
from .channel import (
    ChannelProfile,
    DDPath,
    DiscreteChannel,
    apply_channel,
    dd_reference_output,
    eva_profile,
    full_matrix,
    sample_channel,
    subchannel,
)
from .pilot import (
    EstimatedChannel,
    PilotConfig,
    embed_pilot,
    estimate_channel,
    gains_from_estimate,
    perturb_channel,
    pilot_amplitude_for_snr,
)
from .detectors import (
    DetectionResult,
    DetectorConfig,
    run_detector,
)

__version__ = "0.1.0"
