"""Pipeline orchestration: config parsing/validation, step execution in the
standard order (brain mask input, affine, tissue separation, GM masking,
diffeomorphic registration, smoothing), run manifests, and case evaluation."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from . import __version__
from .augment import AugmentSpec, apply_augment
from .errors import ConfigInvalid, VbmError
from .fields import ShootingConfig, full_deformations, jacobian_determinant, read_field, warp, write_field
from .losses import ElasticityParams, linear_elasticity, mse_dissimilarity
from .nifti import read_nifti, write_nifti
from .registration import AffineStage, affine_register, diffeo_register, write_trace_csv
from .tissue import TissueMap, dice_foreground, gm_mask_redistribute, tissue_to_probabilities
from .volume import apply_affine, gaussian_smooth, normalize_intensity


class StepToggles(BaseModel):
    normalize: bool = True
    augment: bool = False
    affine: bool = True
    tissue: bool = True
    gm_mask: bool = False
    diffeo: bool = True
    smooth: bool = True


class AffineConfig(BaseModel):
    stage1_mm: float = Field(12.0, gt=0)
    stage1_iters: int = Field(500, ge=1)
    stage2_mm: float = Field(6.0, gt=0)
    stage2_iters: int = Field(100, ge=1)


class RegistrationConfig(BaseModel):
    tau: int = Field(7, ge=1)
    mu: float = Field(1.0, ge=0)
    lam: float = Field(0.5, ge=0)
    big_lambda: float = Field(0.01, ge=0)
    iters: int = Field(100, ge=1)
    initial_step_voxels: float = Field(0.5, gt=0)
    multires: bool = False


class SmoothingConfig(BaseModel):
    fwhm_mm: float = Field(6.0, gt=0)


class AugmentEntry(BaseModel):
    kind: str
    magnitude: float = 0.0
    seed: int = 0


class SubjectConfig(BaseModel):
    image: str | None = None
    brain_mask: str | None = None
    tissue_map: str | None = None
    gm_mask: str | None = None


class TemplateConfig(BaseModel):
    image: str | None = None
    brain_mask: str | None = None
    tissue_map: str | None = None


class PipelineConfig(BaseModel):
    out_dir: str = "run_out"
    seed: int = 0
    steps: StepToggles = StepToggles()
    subject: SubjectConfig = SubjectConfig()
    template: TemplateConfig = TemplateConfig()
    affine: AffineConfig = AffineConfig()
    registration: RegistrationConfig = RegistrationConfig()
    smoothing: SmoothingConfig = SmoothingConfig()
    augmentations: list[AugmentEntry] = []

    def validate_files(self) -> None:
        for section in (self.subject, self.template):
            for name, value in section.model_dump().items():
                if value is not None and not Path(value).exists():
                    raise ConfigInvalid(f"referenced file does not exist: {value}")


def _parse_value(raw: str):
    s = raw.strip()
    if s.lower() in ("true", "false"):
        return s.lower() == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


def parse_config_text(text: str) -> dict:
    """Nested key-value format: one ``a.b.c = value`` assignment per line.

    Blank lines and ``#`` comments are ignored. Keys with integer segments
    build lists (``augmentations.0.kind = spike``).
    """
    tree: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        parts = key.strip().split(".")
        node = tree
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigInvalid(f"line {lineno}: key conflict at {part!r}")
        node[parts[-1]] = _parse_value(raw)
    return _listify(tree)


def _listify(node):
    """Convert dicts whose keys are all integers into ordered lists."""
    if not isinstance(node, dict):
        return node
    out = {k: _listify(v) for k, v in node.items()}
    if out and all(k.isdigit() for k in out):
        return [out[k] for k in sorted(out, key=int)]
    return out


def load_config(path=None, text=None, overrides=()) -> PipelineConfig:
    """Read, override (``key=value`` strings) and validate a pipeline config."""
    if text is None:
        text = Path(path).read_text() if path else ""
    tree = parse_config_text(text)
    for item in overrides:
        if "=" not in item:
            raise ConfigInvalid(f"override must look like key=value, got {item!r}")
        key, _, raw = item.partition("=")
        node = tree
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_value(raw)
    try:
        cfg = PipelineConfig.model_validate(tree)
    except ValidationError as exc:
        raise ConfigInvalid(str(exc)) from exc
    cfg.validate_files()
    return cfg


def run_pipeline(config: PipelineConfig) -> dict:
    """Execute the enabled steps in order and write outputs plus a manifest.

    Returns the manifest dictionary. Outputs land under ``config.out_dir``:
    warped and smoothed GM/WM probability maps, forward/backward deformation
    fields, the Jacobian determinant and the optimizer trace.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "tool": "vbmpipe",
        "version": __version__,
        "seed": config.seed,
        "config": config.model_dump(),
        "steps": [],
        "outputs": {},
    }
    steps = config.steps

    def record(name, started, **params):
        manifest["steps"].append({
            "name": name,
            "seconds": round(time.perf_counter() - started, 3),
            **params,
        })

    def emit(name, vol):
        path = out / f"{name}.nii"
        write_nifti(vol, path)
        manifest["outputs"][name] = str(path)

    image = read_nifti(config.subject.image) if config.subject.image else None
    brain_mask = read_nifti(config.subject.brain_mask) if config.subject.brain_mask else None
    tissue_vol = read_nifti(config.subject.tissue_map) if config.subject.tissue_map else None
    gm_mask_vol = read_nifti(config.subject.gm_mask) if config.subject.gm_mask else None
    tmpl_image = read_nifti(config.template.image) if config.template.image else None
    tmpl_mask = read_nifti(config.template.brain_mask) if config.template.brain_mask else None
    tmpl_tissue = read_nifti(config.template.tissue_map) if config.template.tissue_map else None

    if steps.normalize:
        if image is None:
            raise ConfigInvalid("normalize step enabled but subject.image missing")
        t0 = time.perf_counter()
        image = normalize_intensity(image)
        record("normalize", t0)

    if steps.augment and config.augmentations:
        if image is None:
            raise ConfigInvalid("augment step enabled but subject.image missing")
        t0 = time.perf_counter()
        # augmentation applies to the intensity image only; registration
        # inputs (tissue probability maps) are never augmented
        for entry in config.augmentations:
            spec = AugmentSpec(kind=entry.kind, magnitude=entry.magnitude, seed=entry.seed)
            image = apply_augment(image, spec)
        record("augment", t0, count=len(config.augmentations))
        emit("augmented_image", image)

    transform = None
    if steps.affine:
        if image is None or brain_mask is None or tmpl_image is None or tmpl_mask is None:
            raise ConfigInvalid("affine step needs subject/template image and brain_mask")
        t0 = time.perf_counter()
        stages = (AffineStage(config.affine.stage1_mm, config.affine.stage1_iters),
                  AffineStage(config.affine.stage2_mm, config.affine.stage2_iters))
        result = affine_register(image, tmpl_image, brain_mask, tmpl_mask, stages=stages)
        transform = result.transform
        record("affine", t0, final_loss=result.final_loss)
        np.savetxt(out / "affine.txt", transform.matrix)
        manifest["outputs"]["affine"] = str(out / "affine.txt")
        image = apply_affine(image, transform, reference=tmpl_image)
        emit("affine_image", image)
        if tissue_vol is not None:
            tissue_vol = apply_affine(tissue_vol, transform, reference=tmpl_image)
            emit("affine_tissue_map", tissue_vol)
        if gm_mask_vol is not None:
            warped_mask = apply_affine(gm_mask_vol, transform, reference=tmpl_image)
            gm_mask_vol = warped_mask.like((warped_mask.data > 0.5).astype(np.float64))

    probs = None
    if steps.tissue:
        if tissue_vol is None:
            raise ConfigInvalid("tissue step needs subject.tissue_map")
        t0 = time.perf_counter()
        probs = tissue_to_probabilities(TissueMap(tissue_vol.like(
            np.clip(tissue_vol.data, 0.0, 3.0))))
        record("tissue_separation", t0)

    if steps.gm_mask:
        if probs is None or gm_mask_vol is None:
            raise ConfigInvalid("gm_mask step needs tissue step outputs and subject.gm_mask")
        t0 = time.perf_counter()
        probs = gm_mask_redistribute(probs, gm_mask_vol.like(
            (gm_mask_vol.data > 0.5).astype(np.float64)))
        record("gm_masking", t0)

    gm_map = probs.gm if probs is not None else None
    wm_map = probs.wm if probs is not None else None

    if steps.diffeo:
        if probs is None or tmpl_tissue is None:
            raise ConfigInvalid("diffeo step needs tissue probabilities and template.tissue_map")
        t0 = time.perf_counter()
        tmpl_probs = tissue_to_probabilities(TissueMap(tmpl_tissue.like(
            np.clip(tmpl_tissue.data, 0.0, 3.0))))
        # single-channel symmetric registration drives on parenchyma (GM+WM)
        moving = gm_map.like(gm_map.data + wm_map.data)
        fixed = tmpl_probs.gm.like(tmpl_probs.gm.data + tmpl_probs.wm.data)
        params = ElasticityParams(mu=config.registration.mu, lam=config.registration.lam,
                                  big_lambda=config.registration.big_lambda)
        shoot_cfg = ShootingConfig(tau=config.registration.tau)
        reg = diffeo_register(moving, fixed, params, shoot_cfg,
                              iters=config.registration.iters,
                              initial_step_voxels=config.registration.initial_step_voxels,
                              multires=config.registration.multires)
        record("diffeo", t0,
               initial_mse=reg.trace[0].dissim_forward,
               final_mse=reg.final.dissim_forward,
               min_jacobian=reg.min_jacobian)
        write_field(reg.v_half_fwd, out / "velocity_half_forward.nii")
        write_field(reg.v_half_bwd, out / "velocity_half_backward.nii")
        phi_fwd, phi_bwd = full_deformations(reg.v_half_fwd, reg.v_half_bwd, shoot_cfg)
        write_field(phi_fwd, out / "deformation_forward.nii")
        write_field(phi_bwd, out / "deformation_backward.nii")
        emit("jacobian", jacobian_determinant(phi_fwd))
        write_trace_csv(reg.trace, out / "diffeo_trace.csv")
        for name in ("velocity_half_forward", "velocity_half_backward",
                     "deformation_forward", "deformation_backward"):
            manifest["outputs"][name] = str(out / f"{name}.nii")
        manifest["outputs"]["diffeo_trace"] = str(out / "diffeo_trace.csv")
        gm_map = warp(gm_map, phi_fwd)
        wm_map = warp(wm_map, phi_fwd)
        emit("warped_gm", gm_map)
        emit("warped_wm", wm_map)

    if steps.smooth:
        if gm_map is None:
            raise ConfigInvalid("smooth step needs tissue probabilities")
        t0 = time.perf_counter()
        gm_map = gaussian_smooth(gm_map, config.smoothing.fwhm_mm)
        wm_map = gaussian_smooth(wm_map, config.smoothing.fwhm_mm)
        record("smooth", t0, fwhm_mm=config.smoothing.fwhm_mm)
        emit("smoothed_gm", gm_map)
        emit("smoothed_wm", wm_map)

    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    manifest["outputs"]["manifest"] = str(manifest_path)
    return manifest


def evaluate_cases(pred_paths: list[str], truth_paths: list[str],
                   field_paths: list[str] | None = None,
                   elasticity: ElasticityParams = ElasticityParams()) -> list[dict]:
    """Per-case Dice/MSE metrics (plus elasticity of provided fields) with
    median and standard-deviation summary rows."""
    if len(pred_paths) != len(truth_paths):
        raise VbmError("pred and truth file lists differ in length")
    if field_paths is not None and len(field_paths) != len(pred_paths):
        raise VbmError("field list must match the case count")
    rows = []
    for i, (pp, tp) in enumerate(zip(pred_paths, truth_paths)):
        pred = read_nifti(pp)
        truth = read_nifti(tp)
        scores = dice_foreground(TissueMap(pred.like(np.clip(pred.data, 0, 3))),
                                 TissueMap(truth.like(np.clip(truth.data, 0, 3))))
        row = {
            "case": Path(pp).stem,
            "dice_csf": scores.csf,
            "dice_gm": scores.gm,
            "dice_wm": scores.wm,
            "dice_foreground": scores.foreground,
            "dice_gwm_mean": scores.gwm_mean,
            "mse": mse_dissimilarity(pred, truth),
        }
        if field_paths is not None:
            row["linear_elasticity"] = linear_elasticity(read_field(field_paths[i]),
                                                         elasticity)
        rows.append(row)
    metric_keys = [k for k in rows[0] if k != "case"]
    for stat, fn in (("median", np.median), ("std", np.std)):
        summary = {"case": stat}
        for k in metric_keys:
            summary[k] = float(fn([r[k] for r in rows]))
        rows.append(summary)
    return rows


def write_metrics_csv(rows: list[dict], path) -> None:
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
