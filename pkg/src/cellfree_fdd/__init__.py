"""FDD cell-free massive MIMO: angle-domain estimation, beamforming,
spectral/energy efficiency evaluation, and max-min power control."""

__version__ = "0.1.0"

from .config import (ConfigError, Streams, SystemConfig, noise_var_for_snr,
                     reference_beta, stream, system_noise_var)
from .geometry import Layout, build_layout, wrap_distance
from .channel import (ChannelRealization, apply_reciprocity, draw_channel,
                      path_loss_db, steering_vector)
from .training import (PilotObservation, observe_pilots, observe_pilots_raw,
                       pilot_matrix)
from .estimation import (MseOracle, MultipathEstimate, MultipathEstimator,
                         dft_spectrum, estimate_multipath, exact_estimate,
                         pick_peaks, rotate_refine, theoretical_mse)
from .beamforming import (BeamformerSet, assemble, build_beamformers,
                          equal_power_gamma, precoder_amf, precoder_ammse,
                          precoder_azf)
from .performance import (EnergyReport, GenieRates, RateReport,
                          closed_form_rates, closed_form_sinr,
                          energy_efficiency, genie_rates)
from .allocation import (AllocationResult, SdpFeasibilityProblem,
                         build_feasibility, maxmin_allocation, select_aps_uc,
                         solve_feasibility, waterfill_dl)
from .sdp_kernel import (FeasibilityResult, HermitianBlock,
                         barrier_feasibility, eigh, nearest_psd)

__all__ = [
    "__version__",
    "ConfigError", "Streams", "SystemConfig", "noise_var_for_snr",
    "reference_beta", "stream", "system_noise_var",
    "Layout", "build_layout", "wrap_distance",
    "ChannelRealization", "apply_reciprocity", "draw_channel",
    "path_loss_db", "steering_vector",
    "PilotObservation", "observe_pilots", "observe_pilots_raw", "pilot_matrix",
    "MseOracle", "MultipathEstimate", "MultipathEstimator", "dft_spectrum",
    "estimate_multipath", "exact_estimate", "pick_peaks", "rotate_refine",
    "theoretical_mse",
    "BeamformerSet", "assemble", "build_beamformers", "equal_power_gamma",
    "precoder_amf", "precoder_ammse", "precoder_azf",
    "EnergyReport", "GenieRates", "RateReport", "closed_form_rates",
    "closed_form_sinr", "energy_efficiency", "genie_rates",
    "AllocationResult", "SdpFeasibilityProblem", "build_feasibility",
    "maxmin_allocation", "select_aps_uc", "solve_feasibility", "waterfill_dl",
    "FeasibilityResult", "HermitianBlock", "barrier_feasibility", "eigh",
    "nearest_psd",
]
