import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qoe_incentive.harness import case_study_scenario, generate_scenario
from qoe_incentive.model import AspParams, Channel, Demand, MuParams, Scenario

settings.register_profile(
    "repo", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


def single_pair(kappa=1.0, xi=300.0, c_f=1.5e-14, c_b=3.5e-12, f_max=10e12, b_max=200e6,
                theta_hat=1e-7, x_in=500, x_out=500, snr_db=20.0, mu=3.0, r_min=1e-3, r_max=1.0):
    return Scenario(
        [AspParams(kappa, xi, c_f, c_b, f_max, b_max)],
        [MuParams(mu, r_min, r_max)],
        [[Demand(theta_hat, x_in, x_out)]],
        [[Channel.from_db(snr_db)]],
    )


def tight_budgets(scenario, n=0, frac=0.3, rewards=None):
    """Shrink ASP n's budgets to a fraction of its unconstrained demand."""
    r = scenario.midpoint_rewards() if rewards is None else rewards
    f = np.sqrt(r[n] * scenario.compute_load[n] / scenario.c_f[n]).sum()
    b = np.sqrt(r[n] * scenario.comm_load[n] / scenario.c_b[n]).sum()
    # never below what QoE >= 0 needs
    f_need = (scenario.compute_load[n] / scenario.kappa[n]).sum() * 2.5
    b_need = (scenario.comm_load[n] / scenario.kappa[n]).sum() * 2.5
    return scenario.with_asp(n, f_max=max(frac * f, f_need), b_max=max(frac * b, b_need))


@pytest.fixture(scope="session")
def case_study():
    return case_study_scenario()


@pytest.fixture(scope="session")
def small_market():
    return generate_scenario(11, 2, 3)
