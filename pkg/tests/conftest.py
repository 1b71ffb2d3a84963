import numpy as np
import pytest

from crossnet.data import Dataset, n_pairs
from crossnet.model import Hyperparameters, ModelState, shrinkage_weights

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(str(k).split(".")[0]), str(k))):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {status}  {detail}")


def random_problem(rng, n=7, V=4, H=3, R=2, K=None, n_i=6, min_size=1):
    """A random dataset, hyperparameters and a valid state drawn loosely from the prior."""
    L = n_pairs(V)
    counts = rng.multinomial(n_i, np.full(V, 1.0 / V), size=n)
    counts[:, 0] += 1
    edges = (rng.random((n, L)) < 0.4).astype(np.uint8)
    data = Dataset.from_arrays(counts, edges)
    hp = Hyperparameters(alpha_c=rng.uniform(0.3, 3.0), alpha=rng.uniform(0.5, 2.0, V),
                         mu=rng.normal(0, 1, L), sigma2=rng.uniform(0.5, 3.0, L),
                         a1=2.5, a2=3.5, H=H, R=R)
    K = K or int(rng.integers(1, min(n // min_size, 4) + 1))
    C = np.concatenate([np.repeat(np.arange(K), min_size), rng.integers(0, K, n - K * min_size)])
    rng.shuffle(C)
    _, C = np.unique(C, return_inverse=True)
    state = ModelState(
        C=C.astype(np.int64), G=rng.integers(0, H, n).astype(np.int64),
        p=rng.dirichlet(np.ones(V), size=K), nu=rng.dirichlet(np.ones(H), size=K),
        Z=rng.normal(0, 1, L), Xbar=np.zeros((H, V, R)), theta=rng.gamma(2.0, 1.0, (H, R)) + 0.2,
    )
    state.Xbar = rng.normal(0, 1, (H, V, R)) * np.sqrt(shrinkage_weights(state.theta))[:, None, :]
    state.omega = rng.gamma(2.0, 0.3, (H, L))
    return data, hp, state


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
