"""American puts with delivery lags: pricing, boundaries, and oracles."""

from .european import (
    DPair,
    ThetaProfile,
    d_pair,
    find_x_bar,
    norm_cdf,
    norm_pdf,
    put_price,
    put_price_dx,
    theta,
)
from .model import LagContract, LogCoords, MarketParams, from_log, to_log
from .perpetual import (
    CharRoots,
    PerpetualSolution,
    char_roots,
    find_x_under,
    l_function,
    u_infinity,
)

__version__ = "0.1.0"

__all__ = [
    "MarketParams",
    "LagContract",
    "LogCoords",
    "to_log",
    "from_log",
    "norm_cdf",
    "norm_pdf",
    "DPair",
    "d_pair",
    "put_price",
    "put_price_dx",
    "theta",
    "ThetaProfile",
    "find_x_bar",
    "CharRoots",
    "char_roots",
    "l_function",
    "PerpetualSolution",
    "find_x_under",
    "u_infinity",
    "__version__",
]
