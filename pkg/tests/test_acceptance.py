"""Acceptance suite: one pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the report lines.
Tolerances and time limits are asserted, not just printed. Synthetic inputs
stand in for real cohorts; every expected value is either computed by an
independent oracle inside the test or asserted by closed form.
"""

import math
import time

import numpy as np

from vbmpipe.fields import (
    DisplacementField3D,
    ShootingConfig,
    compose,
    full_deformations,
    jacobian_determinant,
    shoot,
)
from vbmpipe.losses import (
    ElasticityParams,
    linear_elasticity,
    linear_elasticity_grad,
    syn_loss,
    syn_loss_grad,
)
from vbmpipe.nifti import read_nifti, write_nifti
from vbmpipe.phantoms import blob_pair, shells_at, smooth_random_field, tissue_shells
from vbmpipe.registration import affine_register, diffeo_register, params_to_affine
from vbmpipe.tissue import (
    ActivationParams,
    ProbabilityMaps,
    TissueMap,
    dice_score,
    gm_mask_redistribute,
    multilevel_activation,
    probabilities_to_tissue,
    tissue_to_probabilities,
)
from vbmpipe.vbm import DesignMatrix, glm_tmap, resampled_median_tmap
from vbmpipe.volume import Volume3D, gaussian_smooth, normalize_intensity
from vbmpipe.augment import rician_noise


def report(criterion: str, ok: bool, detail: str):
    print(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
    assert ok, f"{criterion} failed: {detail}"


def test_c01_shooting_exactness():
    start = time.perf_counter()
    dims = (32, 32, 32)
    c = np.array([1.7, -0.3, 0.9])
    u = np.broadcast_to(c[:, None, None, None], (3,) + dims).copy()
    v = DisplacementField3D(dims=dims, spacing=(1, 1, 1), u=u)
    phi = shoot(v, ShootingConfig(tau=7))
    interior = phi.u[:, 6:-6, 6:-6, 6:-6]
    err = float(np.max(np.abs(interior - c[:, None, None, None])))
    elapsed = time.perf_counter() - start
    report("C01 shooting exactness",
           err < 1e-4 and elapsed < 1.0,
           f"interior max err {err:.2e} (tol 1e-4), {elapsed:.2f}s (< 1s)")


def test_c02_inverse_consistency():
    start = time.perf_counter()
    dims = (32, 32, 32)
    worst = 0.0
    for seed in range(20):
        vf = smooth_random_field(dims, seed, max_voxels=2.0)
        vb = smooth_random_field(dims, seed + 1000, max_voxels=2.0)
        fwd, bwd = full_deformations(vf, vb, ShootingConfig(tau=7))
        resid = compose(fwd, bwd)
        worst = max(worst, resid.max_norm())
    elapsed = time.perf_counter() - start
    report("C02 inverse consistency",
           worst < 1.0 and elapsed < 30.0,
           f"20 seeds, worst residual {worst:.3f} voxels (< 1.0), {elapsed:.1f}s (< 30s)")


def test_c03_diffeomorphism_guarantee():
    start = time.perf_counter()
    dims = (32, 32, 32)
    min_j = math.inf
    for seed in range(100):
        v = smooth_random_field(dims, seed, max_voxels=2.0)
        phi = shoot(v, ShootingConfig(tau=7))
        min_j = min(min_j, float(jacobian_determinant(phi).data.min()))
    elapsed = time.perf_counter() - start
    report("C03 diffeomorphism guarantee",
           min_j > 0.0 and elapsed < 60.0,
           f"100 seeded shoots, min Jacobian {min_j:.4f} (> 0), {elapsed:.1f}s (< 60s)")


def test_c04_elasticity_gradient():
    start = time.perf_counter()
    params = ElasticityParams(mu=1.0, lam=0.5, big_lambda=0.01)
    dims = (8, 8, 8)
    eps = 1e-6
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        fld = DisplacementField3D(dims=dims, spacing=(1.0, 1.2, 0.9),
                                  u=rng.normal(0, 0.4, (3,) + dims))
        grad = linear_elasticity_grad(fld, params)
        fd_vals, an_vals = [], []
        for _ in range(30):
            c, i, j, k = (rng.integers(0, 3), rng.integers(0, 8),
                          rng.integers(0, 8), rng.integers(0, 8))
            up = fld.u.copy(); up[c, i, j, k] += eps
            um = fld.u.copy(); um[c, i, j, k] -= eps
            fd_vals.append((linear_elasticity(fld.like(up), params)
                            - linear_elasticity(fld.like(um), params)) / (2 * eps))
            an_vals.append(grad[c, i, j, k])
        rel = (np.linalg.norm(np.array(fd_vals) - np.array(an_vals))
               / np.linalg.norm(fd_vals))
        worst = max(worst, rel)
    elapsed = time.perf_counter() - start
    report("C04 elasticity gradient",
           worst < 1e-4 and elapsed < 30.0,
           f"10 seeds, worst rel err {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 30s)")


def test_c05_syn_gradient():
    start = time.perf_counter()
    dims = (8, 8, 8)
    params = ElasticityParams(mu=1.0, lam=0.5, big_lambda=0.01)
    cfg = ShootingConfig(tau=7)
    worst = 0.0
    for seed in (21, 77, 123):
        rng = np.random.default_rng(seed)
        img = Volume3D.from_data(rng.random(dims))
        tmpl = Volume3D.from_data(rng.random(dims))
        vf = DisplacementField3D(dims=dims, spacing=(1, 1, 1),
                                 u=rng.normal(0, 0.3, (3,) + dims))
        vb = DisplacementField3D(dims=dims, spacing=(1, 1, 1),
                                 u=rng.normal(0, 0.3, (3,) + dims))
        _, gf, gb = syn_loss_grad(img, tmpl, vf, vb, params, cfg)
        h = 1e-6

        def loss(a, b):
            return syn_loss(img, tmpl, vf.like(a), vb.like(b), params, cfg).total

        for grad, side in ((gf, "f"), (gb, "b")):
            for _ in range(15):
                c, i, j, k = (rng.integers(0, 3), rng.integers(0, 8),
                              rng.integers(0, 8), rng.integers(0, 8))
                if side == "f":
                    up = vf.u.copy(); up[c, i, j, k] += h
                    um = vf.u.copy(); um[c, i, j, k] -= h
                    fd = (loss(up, vb.u) - loss(um, vb.u)) / (2 * h)
                else:
                    up = vb.u.copy(); up[c, i, j, k] += h
                    um = vb.u.copy(); um[c, i, j, k] -= h
                    fd = (loss(vf.u, up) - loss(vf.u, um)) / (2 * h)
                rel = abs(fd - grad[c, i, j, k]) / max(abs(fd), 1e-8)
                worst = max(worst, rel)
    elapsed = time.perf_counter() - start
    report("C05 symmetric-loss gradient",
           worst < 1e-3 and elapsed < 60.0,
           f"full chain vs FD, worst rel err {worst:.2e} (< 1e-3), {elapsed:.1f}s (< 60s)")


def test_c06_desk_scale_registration():
    start = time.perf_counter()
    a, b = blob_pair((64, 64, 64), seed=5, offset_voxels=4.0)
    res = diffeo_register(b, a, ElasticityParams(big_lambda=1e-7),
                          ShootingConfig(tau=7), iters=200)
    elapsed = time.perf_counter() - start
    ratio = res.final.dissim_forward / res.trace[0].dissim_forward
    accepted = res.accepted_losses()
    monotone = all(y <= x for x, y in zip(accepted, accepted[1:]))
    report("C06 desk-scale registration",
           ratio <= 0.2 and res.min_jacobian > 0 and monotone and elapsed < 120.0,
           f"64^3 blob pair, 200 iters: final/initial MSE {ratio * 100:.1f}% (<= 20%), "
           f"min J {res.min_jacobian:.3f} (> 0), monotone={monotone}, "
           f"{elapsed:.0f}s (< 120s single-threaded)")


def test_c07_affine_recovery():
    start = time.perf_counter()
    dims = (128, 128, 128)
    spacing = (1.0, 1.0, 1.0)
    seed = 42
    tmpl = tissue_shells(dims, seed=seed, spacing=spacing)
    center = tmpl.voxel_to_world(((np.asarray(dims) - 1) / 2.0).reshape(3, 1)).ravel()
    q_true = np.zeros(12)
    q_true[0] = 8.0   # 8 mm translation
    q_true[4] = 5.0   # 5 degree rotation
    m_true = params_to_affine(q_true, center)
    grid = np.indices(dims, dtype=np.float64).reshape(3, -1)
    world = tmpl.affine[:3, :3] @ grid + tmpl.affine[:3, 3:4]
    moved = m_true[:3, :3] @ world + m_true[:3, 3:4]
    inv = np.linalg.inv(tmpl.affine)
    vox = inv[:3, :3] @ moved + inv[:3, 3:4]
    img = Volume3D.from_data(shells_at(vox.reshape((3,) + dims), dims, seed).reshape(dims),
                             spacing=spacing)
    mask_t = tmpl.like((tmpl.data > 0.5).astype(float))
    mask_i = img.like((img.data > 0.5).astype(float))
    res = affine_register(img, tmpl, mask_i, mask_t)
    residual = m_true @ res.transform.matrix
    ch = np.append(center, 1.0)
    t_err = float(np.linalg.norm((residual @ ch)[:3] - center))
    u_svd, _, vt = np.linalg.svd(residual[:3, :3])
    rot_err = float(np.degrees(np.arccos(np.clip((np.trace(u_svd @ vt) - 1) / 2, -1, 1))))
    elapsed = time.perf_counter() - start
    report("C07 affine recovery",
           t_err < 1.0 and rot_err < 1.0 and elapsed < 60.0,
           f"8mm+5deg phantom: translation err {t_err:.3f}mm (< 1), "
           f"rotation err {rot_err:.3f}deg (< 1), {elapsed:.0f}s (< 60s)")


def test_c08_multilevel_activation_staircase():
    params = ActivationParams(alpha=100.0)
    midpoints = [-1.0, 0.75, 1.75, 2.25, 2.75, 10.0]

    def oracle(x, alpha=100.0):
        def sigmoid(v):
            if v >= 0:
                return 1.0 / (1.0 + math.exp(-v))
            e = math.exp(v)
            return e / (1.0 + e)

        return sigmoid(alpha * x) + sum(
            sigmoid(alpha * (x - i)) / 2.0 for i in (1.5, 2.0, 2.5, 3.0))

    plateau_err = max(abs(multilevel_activation(x, params) - oracle(x))
                      for x in midpoints)
    levels = [0.0, 1.0, 1.5, 2.0, 2.5, 3.0]
    level_err = max(abs(multilevel_activation(x, params) - lvl)
                    for x, lvl in zip(midpoints, levels))

    # strict monotonicity on a 10^4-point sweep. Deep in a plateau the true
    # increment underflows any float format, so strictness is checked in two
    # parts: (a) the implementation never decreases anywhere, and (b) it
    # strictly increases wherever the analytic derivative lower bound
    # alpha/4 * exp(-alpha * d) (d = distance to the nearest sigmoid centre)
    # says the step exceeds float resolution.
    xs = np.linspace(-2.0, 5.0, 10_000)
    impl = multilevel_activation(xs, params)
    diffs = np.diff(impl)
    non_decreasing = bool(np.all(diffs >= 0))
    centres = np.array([0.0, 1.5, 2.0, 2.5, 3.0])
    d_nearest = np.min(np.abs(xs[:-1, None] - centres[None, :]), axis=1)
    log_lb = math.log(100.0 / 4.0) - 100.0 * d_nearest
    dx = xs[1] - xs[0]
    resolvable = log_lb + math.log(dx) > math.log(1e-12)
    strict = bool(np.all(diffs[resolvable] > 0)) and non_decreasing

    report("C08 multi-level activation",
           plateau_err < 1e-12 and level_err < 1e-3 and strict,
           f"plateau vs oracle {plateau_err:.1e}, vs levels {level_err:.1e} (< 1e-3), "
           f"strictly monotone on sweep (certified where float-resolvable)={strict}")


def test_c09_tissue_algebra():
    ts = np.linspace(0.0, 3.0, 3001).reshape(3001, 1, 1)
    tmap = TissueMap(Volume3D.from_data(ts))
    back = probabilities_to_tissue(tissue_to_probabilities(tmap))
    round_trip_err = float(np.max(np.abs(back.vol.data - ts)))

    rng = np.random.default_rng(9)
    dims = (16, 16, 16)
    raw = rng.random((3,) + dims)
    raw /= raw.sum(axis=0) * (1.0 + rng.random(dims))
    geom = Volume3D.from_data(np.zeros(dims))
    p = ProbabilityMaps(csf=geom.like(raw[0]), gm=geom.like(raw[1]),
                        wm=geom.like(raw[2]))
    mask = geom.like((rng.random(dims) > 0.4).astype(np.float64))
    out = gm_mask_redistribute(p, mask)
    before = p.csf.data + p.gm.data + p.wm.data
    after = out.csf.data + out.gm.data + out.wm.data
    sums_exact = bool(np.array_equal(before, after))
    no_negatives = bool(np.all(out.csf.data >= 0) and np.all(out.wm.data >= 0))

    report("C09 tissue algebra",
           round_trip_err < 1e-6 and sums_exact and no_negatives,
           f"round-trip max err {round_trip_err:.1e} (< 1e-6), "
           f"redistribution sums bitwise equal={sums_exact}")


def test_c10_dice_oracle_equivalence():
    rng = np.random.default_rng(10)

    def brute(a, b, label):
        n_a = n_b = n_both = 0
        for x in range(a.shape[0]):
            for y in range(a.shape[1]):
                for z in range(a.shape[2]):
                    ia = a[x, y, z] == label
                    ib = b[x, y, z] == label
                    n_a += ia
                    n_b += ib
                    n_both += ia and ib
        return 1.0 if n_a + n_b == 0 else 2.0 * n_both / (n_a + n_b)

    all_equal = True
    for _ in range(100):
        a = rng.integers(0, 4, (8, 8, 8)).astype(np.float64)
        b = rng.integers(0, 4, (8, 8, 8)).astype(np.float64)
        label = int(rng.integers(0, 4))
        got = dice_score(Volume3D.from_data(a), Volume3D.from_data(b), label)
        if got != brute(a, b, label):
            all_equal = False
            break
    report("C10 Dice oracle equivalence", all_equal,
           "100 random 8^3 label maps match brute-force set counting exactly")


def test_c11_patch_layout():
    from vbmpipe.patching import optimize_layout

    rng = np.random.default_rng(11)
    dims = (30, 26, 26)
    masks = []
    for s in range(5):
        data = np.zeros(dims)
        x0, y0, z0 = rng.integers(3, 8, 3)
        data[x0:x0 + 18, y0:y0 + 14, z0:z0 + 14] = 1.0
        masks.append(Volume3D.from_data(data))
    layout1 = optimize_layout(masks, grid=(3, 3, 3), patch_size=(12, 11, 11))
    layout2 = optimize_layout(masks, grid=(3, 3, 3), patch_size=(12, 11, 11))

    tissue = np.zeros(dims, dtype=bool)
    for m in masks:
        tissue |= m.data > 0
    cover = np.zeros(dims, dtype=bool)
    for box in layout1.boxes:
        cover[box.slices()] = True
    full_coverage = bool(np.all(cover[tissue]))
    mirrors_exact = all(
        layout1.boxes[r].corner[0] == layout1.mirrored_corner_x(layout1.boxes[l])
        and layout1.boxes[l].corner[1:] == layout1.boxes[r].corner[1:]
        for l, r in layout1.mirror_pairs)
    deterministic = layout1.boxes == layout2.boxes

    report("C11 patch layout",
           full_coverage and mirrors_exact and deterministic,
           f"5-mask corpus: coverage={full_coverage}, mirrors exact={mirrors_exact}, "
           f"deterministic={deterministic}")


def test_c12_smoothing():
    dims = (33, 33, 33)
    impulse = np.zeros(dims)
    impulse[16, 16, 16] = 1.0
    out = gaussian_smooth(Volume3D.from_data(impulse), 6.0)

    def fwhm_of(profile):
        half = profile.max() / 2.0
        idx = int(np.argmax(profile))
        left = right = None
        for i in range(idx, 0, -1):
            if profile[i - 1] < half <= profile[i]:
                left = i - 1 + (half - profile[i - 1]) / (profile[i] - profile[i - 1])
                break
        for i in range(idx, len(profile) - 1):
            if profile[i + 1] < half <= profile[i]:
                right = i + (profile[i] - half) / (profile[i] - profile[i + 1])
                break
        return right - left

    widths = [fwhm_of(out.data[:, 16, 16]), fwhm_of(out.data[16, :, 16]),
              fwhm_of(out.data[16, 16, :])]
    width_ok = all(abs(w - 6.0) <= 0.3 for w in widths)  # 6mm +- 5%
    mass_err = abs(out.data.sum() - 1.0)
    report("C12 smoothing",
           width_ok and mass_err < 1e-4,
           f"impulse FWHM {['%.2f' % w for w in widths]}mm (6 +- 0.3), "
           f"mass error {mass_err:.1e} (< 1e-4)")


def test_c13_glm():
    rng = np.random.default_rng(13)
    n, v = 10, 40
    x = rng.normal(50, 10, n)
    y = 1.0 + np.outer(x, rng.normal(0, 0.05, v)) + rng.normal(0, 0.3, (n, v))
    maps = [Volume3D.from_data(y[i].reshape(v, 1, 1)) for i in range(n)]
    design = DesignMatrix(names=["intercept", "age"],
                          values=np.column_stack([np.ones(n), x]), target="age")
    tmap = glm_tmap(maps, design)

    def scalar_t(xv, yv):
        xc = xv - xv.mean()
        beta = np.sum(xc * (yv - yv.mean())) / np.sum(xc ** 2)
        resid = yv - (yv.mean() - beta * xv.mean()) - beta * xv
        se = math.sqrt((np.sum(resid ** 2) / (n - 2)) / np.sum(xc ** 2))
        return beta / se

    oracle_err = max(abs(tmap.vol.data.ravel()[j] - scalar_t(x, y[:, j]))
                     for j in range(v))
    plain = glm_tmap(maps, design)
    degenerate = resampled_median_tmap(maps, design, fraction=1.0, repeats=1, seed=3)
    degenerate_exact = bool(np.array_equal(plain.vol.data, degenerate.vol.data))
    r1 = resampled_median_tmap(maps, design, fraction=0.8, repeats=7, seed=5)
    r2 = resampled_median_tmap(maps, design, fraction=0.8, repeats=7, seed=5)
    deterministic = bool(np.array_equal(r1.vol.data, r2.vol.data))

    report("C13 GLM",
           oracle_err < 1e-6 and degenerate_exact and deterministic,
           f"scalar OLS oracle err {oracle_err:.1e} (< 1e-6), "
           f"degenerate resampling exact={degenerate_exact}, seeded determinism={deterministic}")


def test_c14_rician_noise():
    sigma = 0.8
    vol = Volume3D.from_data(np.zeros((100, 100, 100)))
    out = rician_noise(vol, sigma, seed=14)
    expected = sigma * math.sqrt(math.pi / 2.0)
    rel = abs(out.data.mean() - expected) / expected
    report("C14 Rician noise", rel < 0.02,
           f"zero-signal mean over 1e6 samples within {rel * 100:.2f}% of "
           f"sigma*sqrt(pi/2) (< 2%)")


def test_c15_nifti_round_trip(tmp_path):
    rng = np.random.default_rng(15)
    all_exact = True
    for i in range(50):
        dims = tuple(int(d) for d in rng.integers(4, 20, 3))
        data = rng.normal(0, 100, dims).astype(np.float32).astype(np.float64)
        vol = Volume3D.from_data(data, spacing=tuple(rng.uniform(0.5, 3.0, 3)))
        path = tmp_path / f"v{i}.nii"
        write_nifti(vol, path)
        back = read_nifti(path)
        if not (np.array_equal(back.data, vol.data) and back.dims == vol.dims):
            all_exact = False
            break
    report("C15 NIfTI round trip", all_exact,
           "50 random volumes: write->read bit-identical float32 data")


def test_c16_intensity_normalization():
    base = np.arange(1001, dtype=np.float64)
    lo, hi = 5.005, 995.995
    outlier = lo + 10.0 * (hi - lo)
    data = np.concatenate([base, [outlier]])
    vol = Volume3D.from_data(data.reshape(2, 3, 167))
    out = normalize_intensity(vol)
    y = (vol.data.ravel() - lo) / (hi - lo)
    inside = (y > 0) & (y <= 1)
    anchor_err = float(np.max(np.abs(out.data.ravel()[inside] - y[inside])))
    tail_value = out.data.ravel()[int(np.argmax(vol.data.ravel()))]
    report("C16 intensity normalization",
           anchor_err < 1e-9 and abs(tail_value - 2.0) < 1e-9,
           f"percentile anchor err {anchor_err:.1e}, scaled 10 -> {tail_value:.9f} "
           f"(= 2.0 per the log tail)")
