"""Command-line client for the vbmpipe service.

Every subcommand talks to the HTTP API: against a remote server when
--server is given, otherwise against an in-process instance of the app (no
socket needed). Exit codes: 0 success, 1 user/input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor

import httpx


def open_client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

    from .service.app import app

    return TestClient(app)


def _post(client, path, payload):
    """POST returning (exit_code, parsed body)."""
    try:
        resp = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return 2, None
    try:
        body = resp.json()
    except ValueError:
        body = {"detail": resp.text}
    if resp.status_code >= 500:
        print(f"internal error: {body.get('detail', body)}", file=sys.stderr)
        return 2, body
    if resp.status_code >= 400:
        print(f"error: {body.get('detail', body)}", file=sys.stderr)
        return 1, body
    return 0, body


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vbmpipe",
                                description="VBM preprocessing and statistics toolkit")
    p.add_argument("--server", default=None,
                   help="base URL of a running vbmpipe service; default runs in-process")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the preprocessing pipeline from a config file")
    run.add_argument("config", nargs="+", help="pipeline config file(s), one per subject")
    run.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override a config entry")
    run.add_argument("--jobs", type=int, default=1,
                     help="max subjects processed in parallel")

    ph = sub.add_parser("phantom", help="generate synthetic test volumes")
    ph.add_argument("kind", choices=["blob_pair", "tissue_shells", "checkerboard"])
    ph.add_argument("out_dir")
    ph.add_argument("--dims", type=int, nargs=3, default=[32, 32, 32])
    ph.add_argument("--seed", type=int, default=0)

    ev = sub.add_parser("evaluate", help="Dice/MSE metrics between map sets")
    ev.add_argument("--pred", nargs="+", required=True)
    ev.add_argument("--truth", nargs="+", required=True)
    ev.add_argument("--fields", nargs="+", default=None,
                    help="deformation fields for the elasticity column")
    ev.add_argument("--out-csv", default=None)

    reg = sub.add_parser("register", help="affine or diffeomorphic registration")
    reg_sub = reg.add_subparsers(dest="mode", required=True)
    ra = reg_sub.add_parser("affine")
    ra.add_argument("image")
    ra.add_argument("template")
    ra.add_argument("--image-mask", required=True)
    ra.add_argument("--template-mask", required=True)
    ra.add_argument("--out-dir", default=None)
    rd = reg_sub.add_parser("diffeo")
    rd.add_argument("image")
    rd.add_argument("template")
    rd.add_argument("--out-dir", required=True)
    rd.add_argument("--iters", type=int, default=100)
    rd.add_argument("--tau", type=int, default=7)
    rd.add_argument("--mu", type=float, default=1.0)
    rd.add_argument("--lam", type=float, default=0.5)
    rd.add_argument("--big-lambda", type=float, default=0.01)
    rd.add_argument("--multires", action="store_true")

    vb = sub.add_parser("vbm", help="voxel-wise GLM t-map with resampling")
    vb.add_argument("--maps", nargs="+", required=True)
    vb.add_argument("--design", required=True, help="design matrix CSV")
    vb.add_argument("--target", required=True, help="covariate column of interest")
    vb.add_argument("--out-dir", required=True)
    vb.add_argument("--mask", default=None)
    vb.add_argument("--fraction", type=float, default=0.8)
    vb.add_argument("--repeats", type=int, default=100)
    vb.add_argument("--seed", type=int, default=0)
    vb.add_argument("--p", type=float, default=0.001)

    sv = sub.add_parser("serve", help="start the HTTP service")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)

    return p


def cmd_run(client, args) -> int:
    def one(path):
        return _post(client, "/pipeline/run",
                     {"config_path": path, "overrides": args.overrides})

    if len(args.config) == 1 or args.jobs <= 1:
        results = [one(c) for c in args.config]
    else:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(one, args.config))
    worst = 0
    for path, (code, body) in zip(args.config, results):
        if code == 0:
            outputs = body["manifest"]["outputs"]
            print(f"{path}: ok ({len(outputs)} outputs, "
                  f"manifest {outputs.get('manifest', '-')})")
        worst = max(worst, code)
    return worst


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service.app import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    with open_client(args.server) as client:
        if args.command == "run":
            return cmd_run(client, args)
        if args.command == "phantom":
            code, body = _post(client, "/phantom", {
                "kind": args.kind, "dims": args.dims, "seed": args.seed,
                "out_dir": args.out_dir,
            })
            if code == 0:
                for name, path in body["files"].items():
                    print(f"{name}: {path}")
            return code
        if args.command == "evaluate":
            code, body = _post(client, "/evaluate", {
                "pred": args.pred, "truth": args.truth, "fields": args.fields,
                "out_csv": args.out_csv,
            })
            if code == 0:
                print(json.dumps(body["rows"], indent=2))
            return code
        if args.command == "register" and args.mode == "affine":
            code, body = _post(client, "/register/affine", {
                "image": args.image, "template": args.template,
                "image_mask": args.image_mask, "template_mask": args.template_mask,
                "out_dir": args.out_dir,
            })
            if code == 0:
                print(json.dumps(body, indent=2))
            return code
        if args.command == "register" and args.mode == "diffeo":
            code, body = _post(client, "/register/diffeo", {
                "image": args.image, "template": args.template,
                "out_dir": args.out_dir, "iters": args.iters, "tau": args.tau,
                "mu": args.mu, "lam": args.lam, "big_lambda": args.big_lambda,
                "multires": args.multires,
            })
            if code == 0:
                print(json.dumps(body, indent=2))
            return code
        if args.command == "vbm":
            code, body = _post(client, "/vbm", {
                "maps": args.maps, "design_csv": args.design, "target": args.target,
                "out_dir": args.out_dir, "mask": args.mask,
                "fraction": args.fraction, "repeats": args.repeats,
                "seed": args.seed, "p_threshold": args.p,
            })
            if code == 0:
                print(json.dumps(body, indent=2))
            return code
    return 2


if __name__ == "__main__":
    sys.exit(main())
