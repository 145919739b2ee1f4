"""Affine and diffeomorphic registration by gradient descent.

Both optimizers use heavy-ball momentum with step-halving: a trial step that
does not decrease the loss is rejected, the learning rate halves and the
momentum resets, so the accepted-loss sequence is non-increasing by
construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMask, JacobianFoldover, NonFiniteLoss
from .fields import DisplacementField3D, ShootingConfig
from .losses import ElasticityParams, SynEngine, SynLossTerms
from .volume import (
    AffineTransform,
    Volume3D,
    gaussian_smooth,
    require_same_geometry,
    resample_to_spacing,
    sample_array_trilinear,
)

DICE_EPS = 1e-6


# ---------------------------------------------------------------------------
# affine registration
# ---------------------------------------------------------------------------

def _rotation_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mx @ my @ mz


def params_to_affine(q: np.ndarray, center: np.ndarray) -> np.ndarray:
    """12-parameter vector to a 4x4 world-space matrix.

    Layout: translation mm (3), rotation degrees (3), log-scale percent (3),
    shear percent (3); rotation/scale/shear act about ``center``. The mixed
    units keep all parameters at comparable magnitude for the optimizer.
    """
    t = q[0:3]
    r = np.deg2rad(q[3:6])
    s = np.exp(q[6:9] / 100.0)
    h = q[9:12] / 100.0
    shear = np.array([[1.0, h[0], h[1]], [0.0, 1.0, h[2]], [0.0, 0.0, 1.0]])
    lin = _rotation_matrix(*r) @ shear @ np.diag(s)
    m = np.eye(4)
    m[:3, :3] = lin
    m[:3, 3] = t + center - lin @ center
    return m


def soft_dice_loss(a: np.ndarray, b: np.ndarray) -> float:
    """1 - 2*sum(ab) / (sum(a) + sum(b) + eps) on continuous mask values."""
    inter = float(np.sum(a * b))
    return 1.0 - 2.0 * inter / (float(np.sum(a)) + float(np.sum(b)) + DICE_EPS)


@dataclass
class AffineStage:
    resolution_mm: float
    iterations: int


@dataclass
class AffineResult:
    transform: AffineTransform
    trace: list = field(default_factory=list)  # (stage, iteration, loss, accepted)
    final_loss: float = math.nan


DEFAULT_AFFINE_STAGES = (AffineStage(12.0, 500), AffineStage(6.0, 100))


class _AffineObjective:
    """MSE + soft-Dice evaluated on the template grid at one stage resolution.

    The fixed side is resampled once onto the coarse grid; the moving image
    and mask stay at native resolution and are interpolated through the
    candidate transform in a single sampling step, so both sides carry one
    interpolation blur each.
    """

    def __init__(self, img, tmpl, img_mask, tmpl_mask, resolution_mm):
        res = (resolution_mm,) * 3
        # anti-alias both sides at the stage scale: a symmetric blur keeps the
        # optimum at true alignment instead of at interpolation artifacts
        self.img = gaussian_smooth(img, resolution_mm)
        self.mask = gaussian_smooth(img_mask, resolution_mm)
        tmpl_c = resample_to_spacing(gaussian_smooth(tmpl, resolution_mm), res)
        tmask_c = resample_to_spacing(gaussian_smooth(tmpl_mask, resolution_mm), res)
        self.tmpl_data = tmpl_c.data.ravel()
        self.tmask_data = tmask_c.data.ravel()
        grid = np.indices(tmpl_c.dims, dtype=np.float64).reshape(3, -1)
        self.world = tmpl_c.affine[:3, :3] @ grid + tmpl_c.affine[:3, 3:4]
        self.img_inv = np.linalg.inv(self.img.affine)
        self.n = self.tmpl_data.size

    def __call__(self, matrix: np.ndarray) -> float:
        moved = matrix[:3, :3] @ self.world + matrix[:3, 3:4]
        vox = self.img_inv[:3, :3] @ moved + self.img_inv[:3, 3:4]
        si = sample_array_trilinear(self.img.data, vox)
        sm = sample_array_trilinear(self.mask.data, vox)
        mse = float(np.mean((si - self.tmpl_data) ** 2))
        return mse + soft_dice_loss(sm, self.tmask_data)


def affine_register(img: Volume3D, tmpl: Volume3D,
                    img_mask: Volume3D, tmpl_mask: Volume3D,
                    stages=DEFAULT_AFFINE_STAGES,
                    momentum: float = 0.9,
                    growth: float = 1.2) -> AffineResult:
    """Two-stage affine registration of ``img`` onto ``tmpl``.

    Minimizes MSE between the transformed image and the template plus the
    soft Dice loss between the transformed brain mask and the template mask,
    by coarse-to-fine gradient descent on 12 affine parameters (finite
    -difference gradients). The returned transform maps template world
    coordinates to image world coordinates.
    """
    if not np.any(img_mask.data > 0) or not np.any(tmpl_mask.data > 0):
        raise EmptyMask("registration masks must contain foreground voxels")

    center_vox = (np.asarray(tmpl.dims, dtype=np.float64) - 1.0) / 2.0
    center = tmpl.voxel_to_world(center_vox.reshape(3, 1)).ravel()

    q = np.zeros(12)
    result = AffineResult(transform=AffineTransform.identity())
    fd_step = 1e-2

    for stage_idx, stage in enumerate(stages):
        objective = _AffineObjective(img, tmpl, img_mask, tmpl_mask, stage.resolution_mm)

        def loss_of(qv):
            return objective(params_to_affine(qv, center))

        def grad_curv_of(qv, base):
            # central differences give the gradient and, for free, a diagonal
            # curvature estimate used to precondition the wildly different
            # parameter scales (mm translations vs. degree rotations).
            g = np.zeros(12)
            c = np.zeros(12)
            for i in range(12):
                qp = qv.copy(); qp[i] += fd_step
                qm = qv.copy(); qm[i] -= fd_step
                lp = loss_of(qp)
                lm = loss_of(qm)
                g[i] = (lp - lm) / (2.0 * fd_step)
                c[i] = (lp + lm - 2.0 * base) / fd_step ** 2
            floor = max(np.max(np.abs(c)) * 1e-4, 1e-12)
            return g / np.maximum(np.abs(c), floor), g

        loss = loss_of(q)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"stage {stage_idx}: non-finite initial loss")
        direction, grad = grad_curv_of(q, loss)
        lr = 1.0
        vel = np.zeros(12)
        result.trace.append((stage_idx, 0, loss, True))
        for it in range(1, stage.iterations + 1):
            step = momentum * vel - lr * direction
            q_prop = q + step
            new_loss = loss_of(q_prop)
            if math.isfinite(new_loss) and new_loss <= loss:
                q = q_prop
                vel = step
                loss = new_loss
                direction, grad = grad_curv_of(q, loss)
                lr = min(lr * growth, 4.0)
                result.trace.append((stage_idx, it, loss, True))
            else:
                vel[:] = 0.0
                lr *= 0.5
                result.trace.append((stage_idx, it, new_loss, False))

    result.transform = AffineTransform(params_to_affine(q, center))
    result.final_loss = loss
    return result


# ---------------------------------------------------------------------------
# diffeomorphic registration
# ---------------------------------------------------------------------------

@dataclass
class DiffeoTraceRow:
    iteration: int
    loss: float
    dissim_forward: float
    dissim_backward: float
    dissim_half: float
    regularization: float
    min_jacobian: float
    learning_rate: float
    accepted: bool


@dataclass
class DiffeoResult:
    v_half_fwd: DisplacementField3D
    v_half_bwd: DisplacementField3D
    trace: list[DiffeoTraceRow]
    final: SynLossTerms
    min_jacobian: float

    def accepted_losses(self) -> list[float]:
        return [r.loss for r in self.trace if r.accepted]


def _resize_field_raw(u: np.ndarray, new_dims: tuple[int, int, int]) -> np.ndarray:
    """Trilinear resize of a displacement array with displacement rescaling."""
    old_dims = u.shape[1:]
    axes = [np.linspace(0.0, old_dims[a] - 1.0, new_dims[a]) for a in range(3)]
    coords = np.stack(np.meshgrid(*axes, indexing="ij")).reshape(3, -1)
    out = np.empty((3,) + tuple(new_dims))
    for c in range(3):
        scale = (new_dims[c] - 1.0) / max(old_dims[c] - 1.0, 1.0)
        out[c] = (sample_array_trilinear(u[c], coords) * scale).reshape(new_dims)
    return out


def diffeo_register(img: Volume3D, tmpl: Volume3D,
                    params: ElasticityParams = ElasticityParams(),
                    cfg: ShootingConfig = ShootingConfig(),
                    iters: int = 100,
                    momentum: float = 0.9,
                    initial_step_voxels: float = 0.5,
                    growth: float = 1.3,
                    multires: bool = False) -> DiffeoResult:
    """Symmetric diffeomorphic registration via two stationary half velocities.

    Starts from zero velocities and descends the symmetric loss with exact
    backward-mode gradients. ``initial_step_voxels`` sets the first update's
    max-norm; afterwards step-halving adapts the rate. With ``multires`` a
    half-resolution warm start runs half the iterations first.

    Raises JacobianFoldover if the final forward deformation has a
    non-positive minimum Jacobian determinant.
    """
    require_same_geometry(img, tmpl)

    v = np.zeros((2, 3) + img.dims)
    if multires and min(img.dims) >= 16:
        half_dims = tuple(max(8, d // 2) for d in img.dims)
        half_spacing = tuple(img.spacing[a] * img.dims[a] / half_dims[a] for a in range(3))
        img_h = resample_to_spacing(img, half_spacing)
        tmpl_h = resample_to_spacing(tmpl, half_spacing)
        half = diffeo_register(img_h, tmpl_h, params, cfg, iters=max(1, iters // 2),
                               momentum=momentum, initial_step_voxels=initial_step_voxels,
                               multires=False)
        v[0] = _resize_field_raw(half.v_half_fwd.u, img.dims)
        v[1] = _resize_field_raw(half.v_half_bwd.u, img.dims)

    engine = SynEngine(img, tmpl, params, cfg)
    terms = engine.forward(v[0], v[1])
    if not math.isfinite(terms.total):
        raise NonFiniteLoss("initial symmetric loss is not finite")
    gvf, gvb = engine.backward()
    grad = np.stack([gvf, gvb])
    min_j = engine.min_jacobian()

    gmax = float(np.max(np.abs(grad)))
    lr = initial_step_voxels / gmax if gmax > 0 else initial_step_voxels
    vel = np.zeros_like(v)
    loss = terms.total
    trace = [DiffeoTraceRow(0, loss, terms.dissim_forward, terms.dissim_backward,
                            terms.dissim_half, terms.regularization, min_j, lr, True)]
    best_terms = terms

    for it in range(1, iters + 1):
        step = momentum * vel - lr * grad
        v_prop = v + step
        new_terms = engine.forward(v_prop[0], v_prop[1])
        if math.isfinite(new_terms.total) and new_terms.total <= loss:
            v = v_prop
            vel = step
            loss = new_terms.total
            best_terms = new_terms
            gvf, gvb = engine.backward()
            grad[0] = gvf
            grad[1] = gvb
            lr *= growth
            min_j = engine.min_jacobian()
            trace.append(DiffeoTraceRow(it, loss, new_terms.dissim_forward,
                                        new_terms.dissim_backward, new_terms.dissim_half,
                                        new_terms.regularization, min_j, lr, True))
        else:
            vel[:] = 0.0
            lr *= 0.5
            trace.append(DiffeoTraceRow(it, new_terms.total, new_terms.dissim_forward,
                                        new_terms.dissim_backward, new_terms.dissim_half,
                                        new_terms.regularization, min_j, lr, False))

    if min_j <= 0:
        raise JacobianFoldover(f"deformation folded: min Jacobian {min_j:.4f} <= 0")

    result = DiffeoResult(
        v_half_fwd=DisplacementField3D(dims=img.dims, spacing=img.spacing, u=v[0]),
        v_half_bwd=DisplacementField3D(dims=img.dims, spacing=img.spacing, u=v[1]),
        trace=trace,
        final=best_terms,
        min_jacobian=min_j,
    )
    return result


def write_trace_csv(trace: list[DiffeoTraceRow], path) -> None:
    """Optimizer report: one row per iteration with loss terms and min Jacobian."""
    with open(path, "w") as f:
        f.write("iteration,loss,dissim_forward,dissim_backward,dissim_half,"
                "regularization,min_jacobian,learning_rate,accepted\n")
        for r in trace:
            f.write(f"{r.iteration},{r.loss:.10g},{r.dissim_forward:.10g},"
                    f"{r.dissim_backward:.10g},{r.dissim_half:.10g},"
                    f"{r.regularization:.10g},{r.min_jacobian:.10g},"
                    f"{r.learning_rate:.6g},{int(r.accepted)}\n")
