"""Registration objectives: image dissimilarity, elasticity regularization,
symmetric (SyN-style) loss and supervised velocity losses, with exact
reverse-mode gradients for the velocity-field optimizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _interp
from .errors import GeometryMismatch
from .fields import (
    DisplacementField3D,
    ShootingConfig,
    full_deformations,
    jacobian_determinant,
)
from .volume import Volume3D, require_same_geometry


@dataclass(frozen=True)
class ElasticityParams:
    """Linear-elasticity weights: mu penalizes zoom, lam penalizes shear/trace,
    big_lambda trades regularity against image similarity."""

    mu: float = 1.0
    lam: float = 0.5
    big_lambda: float = 0.01

    def __post_init__(self):
        if self.mu < 0 or self.lam < 0 or self.big_lambda < 0:
            raise ValueError("elasticity weights must be nonnegative")


@dataclass(frozen=True)
class SupervisedLossConfig:
    beta: float = 2e-5

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


def mse_dissimilarity(a: Volume3D, b: Volume3D) -> float:
    """Mean squared voxel difference."""
    require_same_geometry(a, b)
    return float(np.mean((a.data - b.data) ** 2))


def _elasticity_raw(u: np.ndarray, spacing, params: ElasticityParams, need_grad: bool):
    """Elastic energy of a displacement array, optionally with its gradient.

    Strain is the symmetrized gradient of the mm-scaled displacement
    (d(u_i * sp_i) / d(x_j * sp_j)), dimensionless; the energy carries the
    voxel volume. The gradient is the exact adjoint of the forward chain.
    """
    scratch = np.empty((7,) + u.shape[1:])
    s0, s1, s2 = (float(s) for s in spacing)
    energy = _interp.elasticity_fwd_kernel(
        u[0], u[1], u[2], s0, s1, s2, params.mu, params.lam,
        scratch[0], scratch[1], scratch[2], scratch[3], scratch[4], scratch[5],
        scratch[6])
    voxel_volume = s0 * s1 * s2
    if not need_grad:
        return energy * voxel_volume, None
    grad = np.empty_like(u)
    _interp.elasticity_bwd_kernel(
        scratch[0], scratch[1], scratch[2], scratch[3], scratch[4], scratch[5],
        scratch[6], s0, s1, s2, params.mu, params.lam, voxel_volume,
        grad[0], grad[1], grad[2])
    return energy * voxel_volume, grad


def linear_elasticity(phi: DisplacementField3D, params: ElasticityParams) -> float:
    """Linear-elastic energy ``sum(mu*|eps|_F^2 + lam/2*tr(eps)^2) * voxel_volume``."""
    energy, _ = _elasticity_raw(phi.u, phi.spacing, params, need_grad=False)
    return energy


def linear_elasticity_grad(phi: DisplacementField3D, params: ElasticityParams) -> np.ndarray:
    """Exact adjoint gradient of linear_elasticity w.r.t. the displacement."""
    _, grad = _elasticity_raw(phi.u, phi.spacing, params, need_grad=True)
    return grad


@dataclass(frozen=True)
class SynLossTerms:
    """The symmetric registration loss and its four summands.

    ``regularization`` is the elasticity term already weighted by big_lambda,
    so ``total`` is the exact float sum of the four reported terms.
    """

    total: float
    dissim_forward: float
    dissim_backward: float
    dissim_half: float
    regularization: float
    elasticity_raw: float


class SynEngine:
    """Workspace for repeated symmetric-loss evaluations on one geometry.

    All large intermediates (four shooting tapes, deformations, warps and
    cotangent buffers) are allocated once and reused, which matters when an
    optimizer evaluates hundreds of iterations on 64^3+ grids. ``forward``
    overwrites the tape buffers; ``backward`` may only be called while the
    matching forward state is still current. Gradient buffers survive
    subsequent forwards, so a rejected trial step costs one forward only.
    """

    def __init__(self, img: Volume3D, tmpl: Volume3D,
                 params: ElasticityParams = ElasticityParams(),
                 cfg: ShootingConfig = ShootingConfig()):
        require_same_geometry(img, tmpl)
        self.I = img.data
        self.J = tmpl.data
        self.spacing = img.spacing
        self.params = params
        self.tau = cfg.tau
        shape = (3,) + img.dims
        # tapes[s][k]: s indexes the four shoots (v_f, -v_b, v_b, -v_f);
        # slot tau holds the finished half deformation.
        self.tapes = [[np.empty(shape) for _ in range(self.tau + 1)] for _ in range(4)]
        self.phi_f = np.empty(shape)
        self.phi_b = np.empty(shape)
        self.neg = np.empty(shape)
        self.w = [np.empty(img.dims) for _ in range(4)]
        self.sc = np.empty(img.dims)
        self.eps = np.empty((7,) + img.dims)
        self.cot_a = np.empty(shape)
        self.cot_b = np.empty(shape)
        self.ping = np.empty(shape)
        self.res_a = np.empty(shape)
        self.res_b = np.empty(shape)
        self.grad_vf = np.empty(shape)
        self.grad_vb = np.empty(shape)

    def _shoot_into(self, slot: int, v: np.ndarray, negate: bool):
        tape = self.tapes[slot]
        np.multiply(v, (-1.0 if negate else 1.0) / 2.0 ** self.tau, out=tape[0])
        for k in range(self.tau):
            a = tape[k]
            o = tape[k + 1]
            _interp.compose_kernel(a[0], a[1], a[2], a[0], a[1], a[2],
                                   o[0], o[1], o[2])

    def forward(self, vf: np.ndarray, vb: np.ndarray) -> SynLossTerms:
        I, J = self.I, self.J
        n = I.size
        self._shoot_into(0, vf, False)
        self._shoot_into(1, vb, True)
        self._shoot_into(2, vb, False)
        self._shoot_into(3, vf, True)
        h_f = self.tapes[0][self.tau]
        h_nb = self.tapes[1][self.tau]
        h_b = self.tapes[2][self.tau]
        h_nf = self.tapes[3][self.tau]
        _interp.compose_kernel(h_f[0], h_f[1], h_f[2], h_nb[0], h_nb[1], h_nb[2],
                               self.phi_f[0], self.phi_f[1], self.phi_f[2])
        _interp.compose_kernel(h_b[0], h_b[1], h_b[2], h_nf[0], h_nf[1], h_nf[2],
                               self.phi_b[0], self.phi_b[1], self.phi_b[2])
        w1, w2, w3a, w3b = self.w
        _interp.warp_kernel(I, self.phi_f[0], self.phi_f[1], self.phi_f[2], w1)
        _interp.warp_kernel(J, self.phi_b[0], self.phi_b[1], self.phi_b[2], w2)
        _interp.warp_kernel(I, h_f[0], h_f[1], h_f[2], w3a)
        _interp.warp_kernel(J, h_b[0], h_b[1], h_b[2], w3b)

        sc = self.sc
        np.subtract(w1, J, out=sc)
        d1 = float(np.dot(sc.ravel(), sc.ravel())) / n
        np.subtract(I, w2, out=sc)
        d2 = float(np.dot(sc.ravel(), sc.ravel())) / n
        np.subtract(w3a, w3b, out=sc)
        d3 = float(np.dot(sc.ravel(), sc.ravel())) / n

        s0, s1, s2 = (float(s) for s in self.spacing)
        e = self.eps
        r_raw = _interp.elasticity_fwd_kernel(
            self.phi_f[0], self.phi_f[1], self.phi_f[2], s0, s1, s2,
            self.params.mu, self.params.lam,
            e[0], e[1], e[2], e[3], e[4], e[5], e[6]) * (s0 * s1 * s2)
        reg = self.params.big_lambda * r_raw
        total = d1 + d2 + d3 + reg
        return SynLossTerms(total=total, dissim_forward=d1, dissim_backward=d2,
                            dissim_half=d3, regularization=reg, elasticity_raw=r_raw)

    def min_jacobian(self) -> float:
        """Minimum Jacobian determinant of the current full forward deformation."""
        return float(_interp.jacobian_min_kernel(self.phi_f[0], self.phi_f[1], self.phi_f[2]))

    def backward(self):
        """Gradients w.r.t. (v_f, v_b) for the state left by the last forward.

        Results are written into the engine-owned ``grad_vf``/``grad_vb``
        buffers (returned), which later forwards do not touch.
        """
        I, J = self.I, self.J
        n = I.size
        h_f = self.tapes[0][self.tau]
        h_nb = self.tapes[1][self.tau]
        h_b = self.tapes[2][self.tau]
        h_nf = self.tapes[3][self.tau]
        cot_a, cot_b, sc = self.cot_a, self.cot_b, self.sc

        # cot of phi_f: image term plus weighted elasticity gradient
        np.subtract(self.w[0], J, out=sc)
        sc *= 2.0 / n
        _interp.warp_vjp_kernel(I, self.phi_f[0], self.phi_f[1], self.phi_f[2],
                                sc, cot_a[0], cot_a[1], cot_a[2])
        if self.params.big_lambda > 0:
            s0, s1, s2 = (float(s) for s in self.spacing)
            e = self.eps
            g = self.neg  # scratch
            _interp.elasticity_bwd_kernel(
                e[0], e[1], e[2], e[3], e[4], e[5], e[6], s0, s1, s2,
                self.params.mu, self.params.lam,
                self.params.big_lambda * s0 * s1 * s2, g[0], g[1], g[2])
            cot_a += g
        # through compose(h_f, h_nb): accumulate into cot of h_f, assign cot of h_nb
        ghf = self.grad_vf  # reuse as cot accumulation target before the tape walk
        np.subtract(self.w[2], self.w[3], out=sc)
        sc *= 2.0 / n
        _interp.warp_vjp_kernel(I, h_f[0], h_f[1], h_f[2], sc,
                                ghf[0], ghf[1], ghf[2])
        _interp.compose_vjp_kernel(h_f[0], h_f[1], h_f[2], h_nb[0], h_nb[1], h_nb[2],
                                   cot_a[0], cot_a[1], cot_a[2],
                                   ghf[0], ghf[1], ghf[2],
                                   cot_b[0], cot_b[1], cot_b[2])
        gvf = self._tape_vjp(0, ghf, self.res_a)     # d/d vf via shoot(vf)
        gnb = self._tape_vjp(1, cot_b, self.res_b)   # d/d (-vb) via shoot(-vb)

        # cot of phi_b: template term
        np.subtract(self.w[1], I, out=sc)
        sc *= 2.0 / n
        _interp.warp_vjp_kernel(J, self.phi_b[0], self.phi_b[1], self.phi_b[2],
                                sc, cot_a[0], cot_a[1], cot_a[2])
        ghb = self.grad_vb
        np.subtract(self.w[3], self.w[2], out=sc)
        sc *= 2.0 / n
        _interp.warp_vjp_kernel(J, h_b[0], h_b[1], h_b[2], sc,
                                ghb[0], ghb[1], ghb[2])
        _interp.compose_vjp_kernel(h_b[0], h_b[1], h_b[2], h_nf[0], h_nf[1], h_nf[2],
                                   cot_a[0], cot_a[1], cot_a[2],
                                   ghb[0], ghb[1], ghb[2],
                                   cot_b[0], cot_b[1], cot_b[2])
        gvb = self._tape_vjp(2, ghb, self.neg)       # neg is free elasticity scratch here
        gnf = self._tape_vjp(3, cot_b, self.cot_a)

        np.subtract(gvf, gnf, out=self.grad_vf)
        np.subtract(gvb, gnb, out=self.grad_vb)
        return self.grad_vf, self.grad_vb

    def _tape_vjp(self, slot: int, cot: np.ndarray, result: np.ndarray) -> np.ndarray:
        """Walk one squaring tape backwards, writing the gradient into ``result``.

        ``cot`` is consumed as scratch. The fused self-compose kernel handles
        the cotangent of both (identical) composition arguments in one pass.
        """
        cur = cot
        out = self.ping if cot is not self.ping else self.cot_b
        tape = self.tapes[slot]
        for k in range(self.tau - 1, -1, -1):
            out[...] = 0.0
            u_k = tape[k]
            _interp.self_compose_vjp_kernel(u_k[0], u_k[1], u_k[2],
                                            cur[0], cur[1], cur[2],
                                            out[0], out[1], out[2])
            cur, out = out, cur
        np.multiply(cur, 1.0 / 2.0 ** self.tau, out=result)
        return result


def syn_loss(img: Volume3D, tmpl: Volume3D,
             v_half_fwd: DisplacementField3D, v_half_bwd: DisplacementField3D,
             params: ElasticityParams = ElasticityParams(),
             cfg: ShootingConfig = ShootingConfig()) -> SynLossTerms:
    """Symmetric dissimilarity of image and template under the half-velocity pair.

    Sums the forward, backward and half-way MSE terms plus the weighted
    elasticity of the full forward deformation.
    """
    _check_vel(img, tmpl, v_half_fwd, v_half_bwd)
    return SynEngine(img, tmpl, params, cfg).forward(v_half_fwd.u, v_half_bwd.u)


def syn_loss_grad(img: Volume3D, tmpl: Volume3D,
                  v_half_fwd: DisplacementField3D, v_half_bwd: DisplacementField3D,
                  params: ElasticityParams = ElasticityParams(),
                  cfg: ShootingConfig = ShootingConfig()):
    """Loss terms plus gradients w.r.t. both half velocities.

    Backward-mode differentiation through the whole chain
    shoot -> compose -> warp -> MSE/elasticity, using the adjoint of each
    primitive.
    """
    _check_vel(img, tmpl, v_half_fwd, v_half_bwd)
    eng = SynEngine(img, tmpl, params, cfg)
    terms = eng.forward(v_half_fwd.u, v_half_bwd.u)
    gvf, gvb = eng.backward()
    return terms, gvf.copy(), gvb.copy()


def _check_vel(img, tmpl, vf, vb):
    require_same_geometry(img, tmpl)
    if img.dims != vf.dims or vf.dims != vb.dims:
        raise GeometryMismatch("image and velocity geometries differ")


def supervised_velocity_loss(pred_fwd: DisplacementField3D, pred_bwd: DisplacementField3D,
                             target_fwd: DisplacementField3D, target_bwd: DisplacementField3D) -> float:
    """Mean squared vector disagreement of both predicted half velocities."""
    for f in (pred_bwd, target_fwd, target_bwd):
        if f.dims != pred_fwd.dims:
            raise GeometryMismatch("velocity geometries differ")
    n = float(np.prod(pred_fwd.dims))
    sq = np.sum((target_fwd.u - pred_fwd.u) ** 2) + np.sum((target_bwd.u - pred_bwd.u) ** 2)
    return float(sq / n)


def supervised_velocity_jacobian_loss(pred_fwd: DisplacementField3D, pred_bwd: DisplacementField3D,
                                      target_fwd: DisplacementField3D, target_bwd: DisplacementField3D,
                                      cfg: ShootingConfig = ShootingConfig(),
                                      loss_cfg: SupervisedLossConfig = SupervisedLossConfig(),
                                      img: Volume3D | None = None,
                                      tmpl: Volume3D | None = None,
                                      params: ElasticityParams = ElasticityParams()) -> float:
    """Velocity MSE plus Jacobian-determinant MSE of the full forward deformations,
    optionally regularized by ``beta`` times the symmetric image loss."""
    lv = supervised_velocity_loss(pred_fwd, pred_bwd, target_fwd, target_bwd)
    phi_pred, _ = full_deformations(pred_fwd, pred_bwd, cfg)
    phi_tgt, _ = full_deformations(target_fwd, target_bwd, cfg)
    j_pred = jacobian_determinant(phi_pred)
    j_tgt = jacobian_determinant(phi_tgt)
    total = lv + float(np.mean((j_tgt.data - j_pred.data) ** 2))
    if img is not None and tmpl is not None and loss_cfg.beta > 0:
        total += loss_cfg.beta * syn_loss(img, tmpl, pred_fwd, pred_bwd, params, cfg).total
    return total
