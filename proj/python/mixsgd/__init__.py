"""Mixed-sample SGD for constrained transfer learning."""

from ._core import *  # noqa: F401,F403
from ._core import MixSgdError, __doc__  # noqa: F401

__all__ = [name for name in dir() if not name.startswith("_")]
