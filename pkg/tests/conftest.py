import numpy as np
import pytest

from cateselect.data import ObservationalDataset
from cateselect.dgp import DgpConfig, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_dataset():
    """Tiny deterministic dataset with oracle fields."""
    rng = np.random.default_rng(7)
    n = 40
    X = rng.standard_normal((n, 3))
    t = (np.arange(n) % 2).astype(np.int64)
    tau = X[:, 0]
    y0 = X[:, 1]
    y1 = y0 + tau
    y = np.where(t == 1, y1, y0)
    return ObservationalDataset(
        covariates=X, treatment=t, outcome=y,
        y0_oracle=y0, y1_oracle=y1, true_cate_oracle=tau,
    )


def make_generated(n=400, d=4, seed=0, xi=0.0, rho=0.1, noise_sd=0.1, missing_ratio=0.0):
    cfg = DgpConfig(n=n, d=d, seed=seed, xi=xi, rho=rho,
                    noise_sd=noise_sd, missing_ratio=missing_ratio)
    return generate_dataset(cfg)
