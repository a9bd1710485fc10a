"""Max-min throughput optimization for wireless powered networks
assisted by a simultaneously transmitting and reflecting surface."""

__version__ = "0.1.0"

from .channel import (ChannelSet, CombinedChannels, FadingParams, Point3,
                      ScenarioGeometry, combine, generate_channels, path_gain,
                      place_users_semicircle, strip_surface)
from .model import (ConstraintReport, EsSolution, Scenario, SharedReflectProfile,
                    StarEsProfile, StarTsProfile, SystemParams, TsSolution,
                    energy_es, energy_ts, rates_es, rates_ts, validate)
from .es_noma import EsConfig, algorithm1, bcd_inner, mmse_receivers
from .ts_tdma import (TsConfig, TsGains, algorithm2, min_total_time,
                      mrt_beamformers, solve_time_allocation, solve_ts_passive)
from .baselines import (BaselineKind, solve_conventional_ris, solve_es_noma_gr,
                        solve_no_ris)
from . import sdp

__all__ = [
    "ChannelSet", "CombinedChannels", "FadingParams", "Point3",
    "ScenarioGeometry", "combine", "generate_channels", "path_gain",
    "place_users_semicircle", "strip_surface",
    "ConstraintReport", "EsSolution", "Scenario", "SharedReflectProfile",
    "StarEsProfile", "StarTsProfile", "SystemParams", "TsSolution",
    "energy_es", "energy_ts", "rates_es", "rates_ts", "validate",
    "EsConfig", "algorithm1", "bcd_inner", "mmse_receivers",
    "TsConfig", "TsGains", "algorithm2", "min_total_time", "mrt_beamformers",
    "solve_time_allocation", "solve_ts_passive",
    "BaselineKind", "solve_conventional_ris", "solve_es_noma_gr", "solve_no_ris",
    "sdp",
]
