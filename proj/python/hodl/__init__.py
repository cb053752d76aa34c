"""Bilevel fixed-point learning: operators, inner/outer loops, hypergradients."""

from ._hodl import (  # noqa: F401
    HodlConfigError,
    HodlIoError,
    HodlNumericError,
    Problem,
    __version__,
    envelope_check,
    envelope_value,
    fd_hypergradient,
    g_norm,
    gradcheck_all,
    gradient_check,
    hypercleaning,
    hypergradient,
    inner_loop,
    outer_loop,
    power_iteration_norm,
    project_box,
    quadratic_oracle,
    run_experiment,
    soft_threshold,
    sparse_coding,
    step_size,
    subspace_case,
)
