"""Receiver-driven semantic HARQ simulator with tube-structured package transport."""

__version__ = "0.1.0"

from .catalog import (  # noqa: E402
    ClipMasks,
    LatentUniverse,
    Package,
    PackageCatalog,
    Tube,
    build_catalog,
    build_universe,
    extract_tubes,
    generate_synthetic_clip,
    split_into_packages,
    validate_catalog,
)
from .channel import GEParams, match_ge_params, stationary_per, transmit_units  # noqa: E402
from .distortion import DistortionModel, ProxyModel, make_distortion_model  # noqa: E402
from .metrics import aois_auc, audit_stats, motion_score, paired_gap, recovery_delay  # noqa: E402
from .policies import PolicyKind  # noqa: E402
from .protocol import SessionConfig, SessionTrace, apply_round, init_session  # noqa: E402
from .simulate import run_session  # noqa: E402
