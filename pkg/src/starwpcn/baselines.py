"""Comparison schemes: no surface, conventional reflect-only surface,
and the Gaussian-randomization variant of the NOMA pipeline.

The no-surface baseline strips the cascaded links and runs the same
solvers on direct channels only.  The conventional baseline moves the
surface to a position serving both users by reflection and, under NOMA,
shares a single full-amplitude phase vector per phase.  The
randomization baseline replaces the penalty loops by plain relaxation
plus coupled Gaussian sampling.
"""

from __future__ import annotations

from dataclasses import replace
from enum import Enum

from .channel import Point3, ScenarioGeometry, strip_surface
from .es_noma import EsConfig, algorithm1
from .model import Scenario
from .ts_tdma import TsConfig, algorithm2

CONVENTIONAL_RIS_POSITION = Point3(10.0, 1.0, 0.0)


class BaselineKind(str, Enum):
    NO_RIS = "no_ris"
    CONVENTIONAL_RIS = "conventional_ris"
    ES_NOMA_GR = "es_noma_gr"


class _StrippedScenario(Scenario):
    """Scenario view whose channels drop all surface links.

    Channel draws are kept identical to the assisted scenario so direct
    links match seed-for-seed; only the cascade is removed.
    """

    def channels(self):
        return strip_surface(super().channels())


def solve_no_ris(scenario: Scenario, strategy: str, es_config: EsConfig = EsConfig(),
                 ts_config: TsConfig = TsConfig()):
    """Direct-link-only performance: the same pipelines at M = 0."""
    stripped = _StrippedScenario(**vars(scenario))
    if strategy == "noma":
        return algorithm1(stripped, es_config)
    if strategy == "tdma":
        return algorithm2(stripped, ts_config)
    raise ValueError(f"unknown strategy {strategy!r}")


def conventional_geometry(geometry: ScenarioGeometry,
                          position: Point3 = CONVENTIONAL_RIS_POSITION) -> ScenarioGeometry:
    """Shift the surface to the reflect-only deployment point.

    The conventional surface is offset from the user corridor so both
    users fall into its reflection half-space; region tags become
    informational only.
    """
    return ScenarioGeometry(hap=geometry.hap, ris=position, users=geometry.users,
                            n_antennas=geometry.n_antennas,
                            n_elements=geometry.n_elements, surface="reflect_only")


def solve_conventional_ris(scenario: Scenario, strategy: str,
                           es_config: EsConfig = EsConfig(),
                           ts_config: TsConfig = TsConfig(),
                           position: Point3 = CONVENTIONAL_RIS_POSITION):
    """Reflect-only surface baseline.

    TDMA runs unchanged (per-slot retuning is still per-user).  NOMA
    shares one unit-modulus vector across users per phase, replacing
    the power-splitting coupling with full-amplitude diagonals.
    """
    shifted = replace(scenario, geometry=conventional_geometry(scenario.geometry,
                                                               position))
    if strategy == "tdma":
        return algorithm2(shifted, ts_config)
    if strategy == "noma":
        cfg = replace(es_config, passive_mode="shared_reflect")
        return algorithm1(shifted, cfg)
    raise ValueError(f"unknown strategy {strategy!r}")


def solve_es_noma_gr(scenario: Scenario, es_config: EsConfig = EsConfig()):
    """NOMA pipeline with randomization instead of the penalty loops."""
    cfg = replace(es_config, rank_one_method="gr")
    return algorithm1(scenario, cfg)
