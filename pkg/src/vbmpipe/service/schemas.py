"""Pydantic request/response models for the HTTP API.

All volume references are filesystem paths: the service is designed for
same-host or shared-filesystem deployments where shipping hundreds of
megabytes of voxel data through JSON would be pointless.
"""

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class PhantomRequest(BaseModel):
    kind: str = Field(description="blob_pair | tissue_shells | checkerboard")
    dims: tuple[int, int, int] = (32, 32, 32)
    seed: int = 0
    out_dir: str


class PhantomResponse(BaseModel):
    files: dict[str, str]


class RunRequest(BaseModel):
    config_path: str | None = None
    config_text: str | None = None
    overrides: list[str] = []


class RunResponse(BaseModel):
    manifest: dict


class AffineRequest(BaseModel):
    image: str
    template: str
    image_mask: str
    template_mask: str
    out_dir: str | None = None
    stage1_mm: float = 12.0
    stage1_iters: int = 500
    stage2_mm: float = 6.0
    stage2_iters: int = 100


class AffineResponse(BaseModel):
    matrix: list[list[float]]
    final_loss: float
    iterations: int
    matrix_file: str | None = None


class DiffeoRequest(BaseModel):
    image: str
    template: str
    out_dir: str
    iters: int = 100
    tau: int = 7
    mu: float = 1.0
    lam: float = 0.5
    big_lambda: float = 0.01
    initial_step_voxels: float = 0.2
    multires: bool = False


class DiffeoResponse(BaseModel):
    initial_mse: float
    final_mse: float
    min_jacobian: float
    files: dict[str, str]


class EvaluateRequest(BaseModel):
    pred: list[str]
    truth: list[str]
    fields: list[str] | None = None
    out_csv: str | None = None


class EvaluateResponse(BaseModel):
    rows: list[dict]
    out_csv: str | None = None


class VbmRequest(BaseModel):
    maps: list[str]
    design_csv: str
    target: str
    out_dir: str
    mask: str | None = None
    fraction: float = 0.8
    repeats: int = 100
    seed: int = 0
    p_threshold: float = 0.001


class VbmResponse(BaseModel):
    tmap_file: str
    threshold_file: str
    summary: dict
