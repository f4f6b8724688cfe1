"""Passivity estimates, feedback interconnections and converse-passivity
falsification for sampled input-output systems."""

from . import errors
from ._kernels import backend, backend_name, use_backend
from .errors import *  # noqa: F401,F403
from .falsify import *  # noqa: F401,F403
from .interconnect import *  # noqa: F401,F403
from .passivity import *  # noqa: F401,F403
from .signals import *  # noqa: F401,F403
from .systems import *  # noqa: F401,F403

__version__ = "0.1.0"
