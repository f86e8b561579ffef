"""Desk-scale multimodal fusion: adapters, tiling, and metrics.

The heavy lifting lives in the C++ extension `_omnifuse`; this package
re-exports its public surface.
"""

try:
    from ._omnifuse import *  # noqa: F401,F403  (wheel layout)
    from ._omnifuse import __version__  # noqa: F401
except ImportError:  # development build: extension on sys.path
    from _omnifuse import *  # noqa: F401,F403
    from _omnifuse import __version__  # noqa: F401
