"""Matrix-free Lanczos and Arnoldi iterations with adjoint-method gradients."""

from .arnoldi import ArnoldiCotangents, ArnoldiFactorization, arnoldi_adjoint, arnoldi_forward
from .dense_funm import EXP, FUNCTIONS, INV_SQRT, LOG, SQRT, ScalarFunction
from .funm_action import FunmResult, funm_arnoldi_exp, funm_lanczos, quadratic_form_funm
from .lanczos import (
    BreakdownError,
    LanczosCotangents,
    LanczosFactorization,
    lanczos_adjoint,
    lanczos_forward,
)
from .operator import (
    MatVecOperator,
    make_dense_operator,
    make_hilbert_operator,
    make_rbf_kernel_operator,
    make_sparse_operator,
    make_wave_operator,
    read_matrix_market,
)
from .solvers import LowRankFactor, pcg_solve, pivoted_cholesky, woodbury_apply
from .stochastic import ProbeStream, diagonal_estimate, hutchinson_trace, logdet_estimate

__version__ = "0.1.0"
