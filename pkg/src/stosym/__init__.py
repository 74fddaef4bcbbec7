"""stosym: symmetry analysis of stochastic differential equations.

The subpackages follow the workflow: build expressions (``expr``), generators
(``fields``), equations (``ito``, ``strato``, ``random``), solve for
symmetries (``solve``), apply structure results (``reduce``) and check
numerically (``sim``).  ``cli`` is the only module doing I/O.
"""

__version__ = "0.1.0"

from .expr import (  # noqa: E402
    Context, Expr, ResidualSystem, Verdict, ZeroPolicy, differentiate, evaluate, is_zero,
    normalize, parse, substitute, to_str,
)
from .fields import VectorField, lie_bracket, prolong  # noqa: E402
from .ito import ItoSDE, fp_determining, ito_change_of_variables, ito_determining, make_context  # noqa: E402
from .strato import StratSDE, ito_to_strat, strat_determining, strat_to_ito, strongly_conserved  # noqa: E402
from .random import delta_random_scalar, random_determining  # noqa: E402
from .solve import Ansatz, solve_symmetries  # noqa: E402
from .reduce import kozlov_condition, kozlov_mu, linearize, reduce_by_spatial_symmetry  # noqa: E402
from .sim import SimConfig, simulate  # noqa: E402

__all__ = [
    "__version__", "Context", "Expr", "ResidualSystem", "Verdict", "ZeroPolicy", "differentiate",
    "evaluate", "is_zero", "normalize", "parse", "substitute", "to_str", "VectorField", "lie_bracket",
    "prolong", "ItoSDE", "fp_determining", "ito_change_of_variables", "ito_determining",
    "make_context", "StratSDE", "ito_to_strat", "strat_determining", "strat_to_ito",
    "strongly_conserved", "delta_random_scalar", "random_determining", "Ansatz",
    "solve_symmetries", "kozlov_condition", "kozlov_mu", "linearize", "reduce_by_spatial_symmetry",
    "SimConfig", "simulate",
]
