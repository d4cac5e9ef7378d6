"""
Wireless technologies available to the handover matrix.

Capacity and average RTT describe the simulated link; the stationary values
are what a single rate-controlled flow settles at on that technology and
feed the analytic model.
"""
from typing import Dict, List

from freezetfrc.errors import UnknownTechnologyError
from freezetfrc.models import TechnologyProfile

PROFILES: Dict[str, TechnologyProfile] = {
    'umts': TechnologyProfile('umts', capacity=384e3, rtt=0.25,
                              stationary_x_recv=44_000.0, stationary_rtt=0.96),
    '802.11b': TechnologyProfile('802.11b', capacity=11e6, rtt=0.02,
                                 stationary_x_recv=1.27e6, stationary_rtt=0.05),
    '802.11g': TechnologyProfile('802.11g', capacity=54e6, rtt=0.02,
                                 stationary_x_recv=4.82e6, stationary_rtt=0.04),
    '802.16': TechnologyProfile('802.16', capacity=9.5e6, rtt=0.08,
                                stationary_x_recv=1.10e6, stationary_rtt=0.17),
}

# Row/column order of the handover matrix.
MATRIX_ORDER: List[str] = ['umts', '802.16', '802.11b', '802.11g']


def get_profile(name: str) -> TechnologyProfile:
    try:
        return PROFILES[name.strip().lower()]
    except KeyError:
        raise UnknownTechnologyError(
            f"unknown technology '{name}' (choose from {', '.join(MATRIX_ORDER)})"
        )


def technology_pairs() -> List[tuple]:
    """Every (from, to) cell of the matrix in row-major order."""
    return [(src, dst) for src in MATRIX_ORDER for dst in MATRIX_ORDER]
