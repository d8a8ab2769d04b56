"""dimerlab: numerical laboratory for near-critical dimer models.

Discrete side: Temperleyan isoradial graphs, near-critical Kasteleyn
operators, discrete massive Green functions and holomorphicity operators,
exact enumeration oracles, height moments.  Continuum side: massive Green
functions and Dirac-type kernels with boundary-value-problem checks,
conformal pushforwards, and fourth-order Fredholm determinant summaries.
"""

from .geometry import (
    IsoradialGraph,
    ReflectedGraph,
    Rhombus,
    StraightBoundary,
    SuperpositionGraph,
    build_square_superposition,
    load_isoradial,
    reflect_extend,
    save_isoradial,
)
from .potential import (
    EdgeWeights,
    PotentialField,
    discrete_mass,
    edge_weights,
    eval_field,
    kasteleyn_phases,
    make_potential,
)

__version__ = "0.1.0"
