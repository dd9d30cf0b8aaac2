import numpy as np
import pytest

from csi_mtl import ScenarioConfig, TaskSpec, generate_split_datasets

# Small geometry keeps unit tests fast: 64 subcarriers, 8x8 angular-delay
# images, ratio 1/4 -> code length 32.
SMALL_DIMS = (64, 8, 8)
TINY_PARAMS = {"embed_dim": 16, "cnn_width": 4}


@pytest.fixture(scope="session")
def indoor_cfg():
    return ScenarioConfig.preset("indoor", seed=3)


@pytest.fixture(scope="session")
def outdoor_cfg():
    return ScenarioConfig.preset("outdoor", seed=3)


@pytest.fixture(scope="session")
def small_sets(indoor_cfg):
    return generate_split_datasets(indoor_cfg, {"train": 40, "val": 12, "test": 12}, SMALL_DIMS)


@pytest.fixture(scope="session")
def task_pair(indoor_cfg, small_sets):
    def make(family):
        return TaskSpec(indoor_cfg, family, "1/4", train=small_sets["train"],
                        val=small_sets["val"], test=small_sets["test"])

    return [make("csinet"), make("stnet")]


def loss_and_grads(module, x, w):
    """Scalar loss sum(w * forward(x)); returns (loss, dx) and fills .grad."""
    y = module.forward(x)
    loss = float(np.sum(w * y))
    module.zero_grad()
    dx = module.backward(w.astype(y.dtype))
    return loss, dx


def fd_gradient_check(module, x, n_coords=120, step=1e-5, rel_tol=1e-3, seed=0,
                      check_input=True):
    """Compare analytic gradients of sum(w * module(x)) against central finite
    differences on a float64 shadow of the module.

    Samples n_coords coordinates across all parameters (plus the input when
    check_input is set) and asserts |fd - analytic| <= rel_tol * max(|fd|,
    |analytic|, 1e-6) for each.
    """
    rng = np.random.default_rng(seed)
    m64 = module.astype(np.float64)
    x64 = np.asarray(x, dtype=np.float64)
    w = rng.standard_normal(m64.forward(x64).shape)

    _, dx = loss_and_grads(m64, x64, w)
    params = m64.parameters()
    assert params, "module has no parameters to check"

    targets = [(p.name, p.data, p.grad) for p in params]
    if check_input:
        targets.append(("<input>", x64, dx))

    sizes = np.array([t[1].size for t in targets], dtype=np.float64)
    picks = rng.choice(len(targets), size=n_coords, p=sizes / sizes.sum())
    worst = 0.0
    for t in picks:
        name, data, grad = targets[t]
        idx = np.unravel_index(rng.integers(data.size), data.shape)
        orig = data[idx]
        data[idx] = orig + step
        lp, _ = loss_and_grads(m64, x64, w)
        data[idx] = orig - step
        lm, _ = loss_and_grads(m64, x64, w)
        data[idx] = orig
        fd = (lp - lm) / (2.0 * step)
        an = 0.0 if grad is None else grad[idx]
        err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
        worst = max(worst, err)
        assert err <= rel_tol, (
            f"{name}{list(idx)}: fd={fd:.8g} analytic={an:.8g} rel err {err:.2e}")
    return worst
