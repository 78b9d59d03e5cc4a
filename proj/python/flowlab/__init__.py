"""Summary-statistics theory of flow-based generative models on two-cluster Gaussian mixtures."""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
