"""QoS exponent analysis and simulation of 2-step random access with fast retrial."""

from fastretrial.analytic import (
    AnalyticSolution,
    QosTarget,
    SystemConfig,
    alpha_asymptotic,
    alpha_from_empty_prob,
    alpha_max_asymptotic,
    analyze,
    is_stable,
    lambda_max,
    max_arrival_rate,
    max_devices,
    min_preambles,
    qos_bounds,
    qos_exponent,
    required_exponent,
    solve_alpha,
    solve_alpha_max,
    success_prob,
    success_prob_asymptotic,
    tail_probability,
    throughput_per_device,
)
from fastretrial.lambertw import lambert_w0
from fastretrial.simulator import SimConfig, SimEstimate, empirical_success_prob, run_simulation

__version__ = "0.1.0"
