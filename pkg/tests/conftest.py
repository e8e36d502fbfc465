import numpy as np
import pytest

from globe_mec.model import NetworkConfig, SlotObservation

_ACCEPTANCE_LINES: list[str] = []


def ring_network(n_bs=2, users_per_bs=1, neighbors=1, **overrides) -> NetworkConfig:
    """Ring topology with the default network parameters of the bundled preset."""
    U = n_bs * users_per_bs
    home = np.repeat(np.arange(n_bs), users_per_bs)
    cand = np.zeros((U, n_bs), dtype=bool)
    for u in range(U):
        for d in range(-neighbors, neighbors + 1):
            cand[u, (home[u] + d) % n_bs] = True
    kw = dict(cpu_speed=np.full(n_bs, 2.4e9), tx_power=np.ones(n_bs), home_bs=home,
              candidates=cand, c_tx=np.full(U, 10.0), c_com=np.full(U, 0.01),
              data_size=np.full(U, 1e8), bandwidth=2e7, noise=0.01, cycles_per_task=8e5,
              delay_bound=1e-3, kappa=2.5e-22, harvest_cap=10.0, mu_max=10.0,
              lambda_max=3000.0, grid_cap=10.0, battery_cap=1e6)
    kw.update(overrides)
    return NetworkConfig(**kw)


def random_observation(rng, net: NetworkConfig, p_range=(1.0, 3.0), price=None):
    U, N = net.n_users, net.n_bs
    p = np.full((N, U), np.inf)
    p[net.candidates.T] = rng.uniform(*p_range, size=int(net.candidates.sum()))
    return SlotObservation(
        tx_demand=rng.uniform(0, net.mu_max, U),
        comp_demand=rng.uniform(0, net.lambda_max, U),
        harvest=rng.uniform(0, net.harvest_cap, N),
        price=float(rng.uniform(0, 2) if price is None else price),
        tx_energy=p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance():
    """Record a PASS/FAIL line for the end-of-run acceptance summary."""
    def report(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}"
        if detail:
            line += f" ({detail})"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
