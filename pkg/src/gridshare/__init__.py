"""Distributed output-consensus control of islanded DC microgrids.

Simulation of the nonlinear network with constant-power loads, six
interchangeable consensus controller laws, Newton equilibrium solving,
a linear-systems oracle for the closed-form consensus value, and
numerical checks of the storage-function decrease certificates.
"""

from ._core import COMPILED, backend_name

__version__ = "0.1.0"
__all__ = ["COMPILED", "backend_name", "__version__"]
