from algos.signal import linear_solvers
from algos.transport import flux_schemes
from algos.verify import checks

__all__ = ["checks", "flux_schemes", "linear_solvers"]
