"""Physical constants shared by the compiled kernels and the numpy fallback.

``_kernels.pyx`` hardcodes the same numbers as C constants; the test suite
checks ``_kernels.CONSTANTS == CONSTANTS``.
"""

DT = 0.05
CTRL_COST = 0.01

# LineHopper / TwinWalker
THRUST = 2.0
DRAG = 0.5
STIFFNESS = 4.0
DAMPING = 1.0
TORQUE_GAIN = 6.0
LEG_COUPLING = 1.0

# DiskReacher
REACH_GAIN = 8.0
REACH_DAMPING = 1.0
REACH_MARGIN = 0.3

CONSTANTS = (DT, CTRL_COST, THRUST, DRAG, STIFFNESS, DAMPING, TORQUE_GAIN,
             LEG_COUPLING, REACH_GAIN, REACH_DAMPING, REACH_MARGIN)
