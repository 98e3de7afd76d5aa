"""Delegated-portfolio contracting lab.

Computes the optimal compensation contract and investment strategy for a
portfolio manager facing an exogenous random default time: closed-form agent
strategy, backward finite-difference solution of the principal's integro-HJB
equations (bounded and unbounded default), and Monte Carlo reproduction of
the reference experiments.
"""

from pa_lab.market import MarketParams, EllipticityError, risk_premium, wealth_step
from pa_lab.default_time import DefaultModel, Family
from pa_lab.contract import (
    AdmissibilityError,
    ControlTuple,
    QForm,
    agent_strategy,
    build_qform,
    generator_F,
    q_dist,
    q_norm,
    raw_f,
    reservation_y0,
)
from pa_lab.hjb import (
    GridSpec,
    PolicyGrid,
    SolverConfig,
    ValueGrid,
    actor_critic,
    hamiltonian,
    jump_evaluate,
    maximize_hamiltonian,
    principal_value,
    solve_pde_frozen,
    terminal_condition,
)
from pa_lab.monte_carlo import (
    PathEnsemble,
    SimConfig,
    compare_linear,
    experiment_suite,
    martingale_check,
    simulate,
)

__version__ = "0.1.0"
