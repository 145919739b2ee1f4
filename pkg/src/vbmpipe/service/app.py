"""HTTP service exposing the preprocessing toolkit.

Endpoints wrap the core package one-to-one; the CLI is a thin client of
this API (in-process by default, remote with --server).
"""

from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import VbmError
from ..fields import ShootingConfig
from ..losses import ElasticityParams
from ..nifti import read_nifti
from ..phantoms import make_phantom
from ..pipeline import evaluate_cases, load_config, run_pipeline, write_metrics_csv
from ..registration import AffineStage, affine_register, diffeo_register, write_trace_csv
from ..vbm import (DesignMatrix, resampled_median_tmap, summarize_tmap,
                   threshold_tmap, write_tmap_summary_csv)
from ..nifti import write_nifti
from . import schemas


def create_app() -> FastAPI:
    app = FastAPI(title="vbmpipe", version=__version__)

    @app.exception_handler(VbmError)
    async def vbm_error_handler(request: Request, exc: VbmError):
        return JSONResponse(status_code=400, content={
            "error": type(exc).__name__,
            "detail": str(exc),
        })

    @app.exception_handler(FileNotFoundError)
    async def missing_file_handler(request: Request, exc: FileNotFoundError):
        return JSONResponse(status_code=400, content={
            "error": "FileNotFound",
            "detail": str(exc),
        })

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/phantom", response_model=schemas.PhantomResponse)
    def phantom(req: schemas.PhantomRequest):
        try:
            files = make_phantom(req.kind, req.dims, req.seed, req.out_dir)
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"error": "InvalidRequest",
                                                          "detail": str(exc)})
        return schemas.PhantomResponse(files=files)

    @app.post("/pipeline/run", response_model=schemas.RunResponse)
    def pipeline_run(req: schemas.RunRequest):
        cfg = load_config(path=req.config_path, text=req.config_text,
                          overrides=req.overrides)
        manifest = run_pipeline(cfg)
        return schemas.RunResponse(manifest=manifest)

    @app.post("/register/affine", response_model=schemas.AffineResponse)
    def register_affine(req: schemas.AffineRequest):
        img = read_nifti(req.image)
        tmpl = read_nifti(req.template)
        img_mask = read_nifti(req.image_mask)
        tmpl_mask = read_nifti(req.template_mask)
        stages = (AffineStage(req.stage1_mm, req.stage1_iters),
                  AffineStage(req.stage2_mm, req.stage2_iters))
        result = affine_register(img, tmpl, img_mask, tmpl_mask, stages=stages)
        matrix_file = None
        if req.out_dir:
            out = Path(req.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            matrix_file = str(out / "affine.txt")
            np.savetxt(matrix_file, result.transform.matrix)
        return schemas.AffineResponse(
            matrix=result.transform.matrix.tolist(),
            final_loss=result.final_loss,
            iterations=len(result.trace),
            matrix_file=matrix_file,
        )

    @app.post("/register/diffeo", response_model=schemas.DiffeoResponse)
    def register_diffeo(req: schemas.DiffeoRequest):
        from ..fields import full_deformations, jacobian_determinant, write_field

        img = read_nifti(req.image)
        tmpl = read_nifti(req.template)
        params = ElasticityParams(mu=req.mu, lam=req.lam, big_lambda=req.big_lambda)
        cfg = ShootingConfig(tau=req.tau)
        result = diffeo_register(img, tmpl, params, cfg, iters=req.iters,
                                 initial_step_voxels=req.initial_step_voxels,
                                 multires=req.multires)
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {}
        write_field(result.v_half_fwd, out / "velocity_half_forward.nii")
        write_field(result.v_half_bwd, out / "velocity_half_backward.nii")
        files["velocity_half_forward"] = str(out / "velocity_half_forward.nii")
        files["velocity_half_backward"] = str(out / "velocity_half_backward.nii")
        phi_fwd, phi_bwd = full_deformations(result.v_half_fwd, result.v_half_bwd, cfg)
        write_field(phi_fwd, out / "deformation_forward.nii")
        write_field(phi_bwd, out / "deformation_backward.nii")
        files["deformation_forward"] = str(out / "deformation_forward.nii")
        files["deformation_backward"] = str(out / "deformation_backward.nii")
        write_nifti(jacobian_determinant(phi_fwd), out / "jacobian.nii")
        files["jacobian"] = str(out / "jacobian.nii")
        write_trace_csv(result.trace, out / "diffeo_trace.csv")
        files["trace"] = str(out / "diffeo_trace.csv")
        return schemas.DiffeoResponse(
            initial_mse=result.trace[0].dissim_forward,
            final_mse=result.final.dissim_forward,
            min_jacobian=result.min_jacobian,
            files=files,
        )

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest):
        rows = evaluate_cases(req.pred, req.truth, req.fields)
        out_csv = None
        if req.out_csv:
            write_metrics_csv(rows, req.out_csv)
            out_csv = req.out_csv
        return schemas.EvaluateResponse(rows=rows, out_csv=out_csv)

    @app.post("/vbm", response_model=schemas.VbmResponse)
    def vbm_analysis(req: schemas.VbmRequest):
        from ..vbm import TMap

        maps = [read_nifti(p) for p in req.maps]
        design = DesignMatrix.from_csv(req.design_csv, target=req.target)
        tmap = resampled_median_tmap(maps, design, fraction=req.fraction,
                                     repeats=req.repeats, seed=req.seed)
        if req.mask is not None:
            mask = read_nifti(req.mask)
            restricted = tmap.vol.like(tmap.vol.data * (mask.data > 0))
            tmap = TMap(vol=restricted, dof=tmap.dof)
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tmap_file = out / "tmap.nii"
        write_nifti(tmap.vol, tmap_file)
        thr = threshold_tmap(tmap, req.p_threshold)
        threshold_file = out / "tmap_threshold.nii"
        write_nifti(thr, threshold_file)
        summary = summarize_tmap(tmap, req.p_threshold)
        write_tmap_summary_csv([summary], out / "summary.csv")
        return schemas.VbmResponse(tmap_file=str(tmap_file),
                                   threshold_file=str(threshold_file),
                                   summary=summary)

    return app


app = create_app()
