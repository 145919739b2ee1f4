import numpy as np
import pytest

from vbmpipe.fields import DisplacementField3D, ShootingConfig, jacobian_determinant, shoot, warp
from vbmpipe.losses import ElasticityParams, syn_loss_grad
from vbmpipe.volume import Volume3D


@pytest.fixture(scope="session", autouse=True)
def warm_jit():
    """Compile the numba kernels once so timed tests measure the math."""
    dims = (6, 6, 6)
    rng = np.random.default_rng(0)
    v = DisplacementField3D(dims=dims, spacing=(1, 1, 1),
                            u=rng.normal(0, 0.2, (3,) + dims))
    vol = Volume3D.from_data(rng.random(dims))
    phi = shoot(v, ShootingConfig(tau=2))
    warp(vol, phi)
    jacobian_determinant(phi)
    syn_loss_grad(vol, Volume3D.from_data(rng.random(dims)), v, v,
                  ElasticityParams(), ShootingConfig(tau=2))
