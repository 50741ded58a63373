"""qblab: a numerical bench for q-Borel/q-Laplace analysis.

The package studies a singularly perturbed linear q-difference-differential
equation in two time scales through its Borel-plane fixed point: theta
kernels and q-Laplace ray integrals (`qkernel`), exponentially weighted
function spaces (`spaces`), problem instances and their sector geometry
(`problem`), the contraction-map solver and solution assembly (`solver`),
and decay-law / asymptotic-order estimation (`asymptotics`). `cli` wires
these into reproducible command-line experiments.
"""

__version__ = "0.1.0"
