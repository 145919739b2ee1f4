import numpy as np
import pytest

from vbmpipe.diffops import central_diff, central_diff_adjoint
from vbmpipe.fields import DisplacementField3D, ShootingConfig
from vbmpipe.losses import (
    ElasticityParams,
    SupervisedLossConfig,
    linear_elasticity,
    linear_elasticity_grad,
    mse_dissimilarity,
    supervised_velocity_jacobian_loss,
    supervised_velocity_loss,
    syn_loss,
    syn_loss_grad,
)
from vbmpipe.volume import Volume3D


def rand_field(dims, seed, scale=0.3, spacing=(1, 1, 1)):
    rng = np.random.default_rng(seed)
    return DisplacementField3D(dims=dims, spacing=spacing,
                               u=rng.normal(0, scale, (3,) + dims))


def test_mse_basics():
    a = Volume3D.from_data(np.zeros((4, 4, 4)))
    b = Volume3D.from_data(np.ones((4, 4, 4)))
    assert mse_dissimilarity(a, a) == 0.0
    assert mse_dissimilarity(a, b) == 1.0
    c = Volume3D.from_data(np.array([0.0, 2.0]).reshape(2, 1, 1))
    d = Volume3D.from_data(np.array([0.0, 0.0]).reshape(2, 1, 1))
    assert mse_dissimilarity(c, d) == 2.0


def test_adjoint_identity():
    rng = np.random.default_rng(0)
    for axis in range(3):
        for n in (2, 3, 5, 9):
            shape = [4, 4, 4]
            shape[axis] = n
            f = rng.normal(size=shape)
            g = rng.normal(size=shape)
            lhs = np.sum(central_diff(f, axis) * g)
            rhs = np.sum(f * central_diff_adjoint(g, axis))
            assert lhs == pytest.approx(rhs, rel=1e-12)


def test_elasticity_zero_for_translation():
    dims = (6, 6, 6)
    u = np.broadcast_to(np.array([1.0, -2.0, 0.5])[:, None, None, None],
                        (3,) + dims).copy()
    fld = DisplacementField3D(dims=dims, spacing=(1.0, 1.3, 0.7), u=u)
    assert linear_elasticity(fld, ElasticityParams()) == pytest.approx(0.0, abs=1e-20)
    assert np.allclose(linear_elasticity_grad(fld, ElasticityParams()), 0.0)


def test_elasticity_linear_zoom_closed_form():
    # u(x) = c*x has strain c*I everywhere (one-sided borders included)
    dims = (7, 6, 5)
    c = 0.04
    grid = np.indices(dims, dtype=np.float64)
    fld = DisplacementField3D(dims=dims, spacing=(1, 1, 1), u=c * grid)
    n = np.prod(dims)
    # mu=1, lam=0: |eps|_F^2 = 3 c^2 per voxel
    e = linear_elasticity(fld, ElasticityParams(mu=1.0, lam=0.0))
    assert e == pytest.approx(n * 3 * c ** 2, rel=1e-12)
    # mu=0, lam=2: (lam/2) tr(eps)^2 = (3c)^2 per voxel
    e = linear_elasticity(fld, ElasticityParams(mu=0.0, lam=2.0))
    assert e == pytest.approx(n * (3 * c) ** 2, rel=1e-12)


def test_elasticity_gradient_matches_fd():
    params = ElasticityParams(mu=1.0, lam=0.5, big_lambda=0.01)
    eps = 1e-6
    for seed in range(10):
        fld = rand_field((8, 8, 8), seed, scale=0.4, spacing=(1.0, 1.2, 0.9))
        grad = linear_elasticity_grad(fld, params)
        rng = np.random.default_rng(seed + 100)
        fd_vals, an_vals = [], []
        for _ in range(30):
            c, i, j, k = (rng.integers(0, 3), rng.integers(0, 8),
                          rng.integers(0, 8), rng.integers(0, 8))
            up = fld.u.copy(); up[c, i, j, k] += eps
            um = fld.u.copy(); um[c, i, j, k] -= eps
            fd_vals.append((linear_elasticity(fld.like(up), params)
                            - linear_elasticity(fld.like(um), params)) / (2 * eps))
            an_vals.append(grad[c, i, j, k])
        fd_vals = np.array(fd_vals)
        an_vals = np.array(an_vals)
        rel = np.linalg.norm(fd_vals - an_vals) / np.linalg.norm(fd_vals)
        assert rel < 1e-4


def _setup_syn(seed, dims=(8, 8, 8)):
    rng = np.random.default_rng(seed)
    img = Volume3D.from_data(rng.random(dims))
    tmpl = Volume3D.from_data(rng.random(dims))
    vf = rand_field(dims, seed + 1)
    vb = rand_field(dims, seed + 2)
    return img, tmpl, vf, vb


def test_syn_loss_zero_at_identity():
    dims = (8, 8, 8)
    rng = np.random.default_rng(3)
    img = Volume3D.from_data(rng.random(dims))
    z = DisplacementField3D.zero(dims)
    terms = syn_loss(img, img, z, z)
    assert terms.total == 0.0
    assert terms.regularization == 0.0


def test_syn_loss_term_structure():
    img, tmpl, vf, vb = _setup_syn(11)
    params0 = ElasticityParams(mu=1.0, lam=0.5, big_lambda=0.0)
    params1 = ElasticityParams(mu=1.0, lam=0.5, big_lambda=0.02)
    t0 = syn_loss(img, tmpl, vf, vb, params0)
    t1 = syn_loss(img, tmpl, vf, vb, params1)
    # lambda = 0 leaves only the three dissimilarity terms
    assert t0.total == t0.dissim_forward + t0.dissim_backward + t0.dissim_half
    assert t0.regularization == 0.0
    # the reported total is the exact float sum of the four terms
    assert t1.total == (t1.dissim_forward + t1.dissim_backward + t1.dissim_half
                        + t1.regularization)
    # regularization is exactly big_lambda times the raw elasticity
    assert t1.regularization == params1.big_lambda * t1.elasticity_raw
    assert t1.elasticity_raw == t0.elasticity_raw  # independent of the weight


def test_syn_gradient_matches_fd_per_component():
    params = ElasticityParams(mu=1.0, lam=0.5, big_lambda=0.01)
    cfg = ShootingConfig(tau=7)
    img, tmpl, vf, vb = _setup_syn(21)
    terms, gf, gb = syn_loss_grad(img, tmpl, vf, vb, params, cfg)
    h = 1e-6
    rng = np.random.default_rng(22)

    def loss(a, b):
        return syn_loss(img, tmpl, vf.like(a), vb.like(b), params, cfg).total

    for grad, which in ((gf, "fwd"), (gb, "bwd")):
        for _ in range(20):
            c, i, j, k = (rng.integers(0, 3), rng.integers(0, 8),
                          rng.integers(0, 8), rng.integers(0, 8))
            if which == "fwd":
                up = vf.u.copy(); up[c, i, j, k] += h
                um = vf.u.copy(); um[c, i, j, k] -= h
                fd = (loss(up, vb.u) - loss(um, vb.u)) / (2 * h)
            else:
                up = vb.u.copy(); up[c, i, j, k] += h
                um = vb.u.copy(); um[c, i, j, k] -= h
                fd = (loss(vf.u, up) - loss(vf.u, um)) / (2 * h)
            denom = max(abs(fd), 1e-8)
            assert abs(fd - grad[c, i, j, k]) / denom < 1e-3


def test_supervised_velocity_loss():
    dims = (6, 6, 6)
    z = DisplacementField3D.zero(dims)
    assert supervised_velocity_loss(z, z, z, z) == 0.0
    n = np.prod(dims)
    e = 0.7
    u = np.zeros((3,) + dims)
    u[1, 2, 3, 4] = e
    pred = DisplacementField3D(dims=dims, spacing=(1, 1, 1), u=u)
    assert supervised_velocity_loss(pred, z, z, z) == pytest.approx(e ** 2 / n)
    # symmetric in (pred, target)
    a, b = rand_field(dims, 1), rand_field(dims, 2)
    assert supervised_velocity_loss(a, z, b, z) == pytest.approx(
        supervised_velocity_loss(b, z, a, z))


def test_supervised_jacobian_loss_zero_when_equal():
    dims = (8, 8, 8)
    v = rand_field(dims, 5)
    z = rand_field(dims, 6)
    assert supervised_velocity_jacobian_loss(v, z, v, z,
                                             loss_cfg=SupervisedLossConfig(beta=0.0)) == 0.0


def test_supervised_jacobian_loss_with_syn_term():
    dims = (8, 8, 8)
    rng = np.random.default_rng(8)
    img = Volume3D.from_data(rng.random(dims))
    z = DisplacementField3D.zero(dims)
    # pred = target = zero velocities and img = tmpl: every term vanishes
    total = supervised_velocity_jacobian_loss(z, z, z, z, img=img, tmpl=img,
                                              loss_cfg=SupervisedLossConfig(beta=1.0))
    assert total == 0.0


def test_supervised_jacobian_loss_translation_pair():
    # target velocities are a small uniform translation, prediction is zero:
    # the velocity term dominates and the Jacobian mismatch stays a small
    # boundary effect (translation determinants are 1 in the interior)
    dims = (24, 24, 24)
    c = np.array([0.2, 0.1, -0.15])
    u = np.broadcast_to(c[:, None, None, None], (3,) + dims).copy()
    target = DisplacementField3D(dims=dims, spacing=(1, 1, 1), u=u)
    z = DisplacementField3D.zero(dims)
    lv = supervised_velocity_loss(z, z, target, target)
    assert lv == pytest.approx(2 * np.sum(c ** 2), rel=1e-12)
    total = supervised_velocity_jacobian_loss(z, z, target, target,
                                              loss_cfg=SupervisedLossConfig(beta=0.0))
    assert total - lv < 0.1 * lv
