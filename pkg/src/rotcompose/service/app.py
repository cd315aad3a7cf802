"""FastAPI service wrapping the core package.

Each endpoint runs its job synchronously, writes outputs (plus a
``resolved_config.json`` snapshot with all defaults materialized) under
the request's ``output_dir``, and returns a summary. Domain errors map to
HTTP 422 with a machine-readable body.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..data import (SynthConfig, gen_synthetic, load_dataset, save_dataset,
                    split_dataset)
from ..errors import RotcomposeError
from ..evaluation import evaluate
from ..jobconfig import (resolve_eval, resolve_gradcheck, resolve_synth,
                         resolve_train)
from ..selfcheck import full_graph_grad_check, run_selftest
from ..training import (TrainConfig, load_checkpoint, run_repeats,
                        save_checkpoint)
from .schemas import (EvalRequest, EvalResponse, GradCheckRequest,
                      GradCheckResponse, SelfTestRequest, SelfTestResponse,
                      SynthRequest, SynthResponse, TrainRequest, TrainResponse)

GRADCHECK_THRESHOLD = 5e-3

app = FastAPI(title="rotcompose", version=__version__)


@app.exception_handler(RotcomposeError)
async def domain_error_handler(request: Request, exc: RotcomposeError):
    return JSONResponse(
        status_code=422,
        content={"error": type(exc).__name__, "message": str(exc)})


def _prepare_output(output_dir: str, resolved: dict) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(
        json.dumps(resolved, sort_keys=True, indent=2), encoding="utf-8")
    return out


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/synth", response_model=SynthResponse)
def synth(req: SynthRequest):
    resolved = resolve_synth(req.config)
    out = _prepare_output(req.output_dir, resolved)
    synth_cfg = SynthConfig.from_dict(
        {k: v for k, v in resolved.items() if k not in ("holdout", "name")})
    ds = gen_synthetic(synth_cfg)
    files = []
    if resolved["holdout"] > 0:
        train_ds, eval_ds = split_dataset(ds, ds.n - resolved["holdout"])
        for tag, part in (("train", train_ds), ("eval", eval_ds)):
            manifest = out / f"{resolved['name']}.{tag}.json"
            save_dataset(part, manifest)
            files.append(str(manifest))
    else:
        manifest = out / f"{resolved['name']}.json"
        save_dataset(ds, manifest)
        files.append(str(manifest))
    return SynthResponse(files=files, resolved_config=resolved)


@app.post("/train", response_model=TrainResponse)
def train_job(req: TrainRequest):
    config, resolved = resolve_train(req.config)
    out = _prepare_output(req.output_dir, resolved)
    train_ds = load_dataset(resolved["data"]["train"])
    eval_ds = (load_dataset(resolved["data"]["eval"])
               if resolved["data"]["eval"] else None)
    ks = tuple(resolved["data"]["ks"])
    runs, summary = run_repeats(config, train_ds, eval_dataset=eval_ds, ks=ks)
    ckpt_files, metric_files = [], []
    for r, (ckpt, history) in enumerate(runs):
        cpath = out / f"checkpoint_r{r}.ckpt"
        save_checkpoint(ckpt, cpath)
        ckpt_files.append(str(cpath))
        mpath = out / f"metrics_r{r}.jsonl"
        mpath.write_text(history.to_jsonl(), encoding="utf-8")
        metric_files.append(str(mpath))
    (out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2), encoding="utf-8")
    return TrainResponse(checkpoints=ckpt_files, metrics_files=metric_files,
                         summary=summary, resolved_config=resolved)


@app.post("/eval", response_model=EvalResponse)
def eval_job(req: EvalRequest):
    resolved = resolve_eval(req.config)
    out = _prepare_output(req.output_dir, resolved)
    ckpt = load_checkpoint(resolved["checkpoint"])
    ds = load_dataset(resolved["dataset"])
    report = evaluate(ckpt, ds, list(resolved["ks"]),
                      normalize=resolved["normalize"])
    rpath = out / "report.json"
    rpath.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2),
                     encoding="utf-8")
    return EvalResponse(report=report.to_dict(), report_file=str(rpath),
                        resolved_config=resolved)


@app.post("/gradcheck", response_model=GradCheckResponse)
def gradcheck(req: GradCheckRequest):
    resolved = resolve_gradcheck(req.config)
    err = full_graph_grad_check(seed=resolved["seed"], batch=resolved["batch"],
                                eps=resolved["eps"])
    result = GradCheckResponse(max_rel_error=err, threshold=GRADCHECK_THRESHOLD,
                               passed=err <= GRADCHECK_THRESHOLD,
                               resolved_config=resolved)
    if req.output_dir:
        out = _prepare_output(req.output_dir, resolved)
        (out / "gradcheck.json").write_text(result.model_dump_json(indent=2),
                                            encoding="utf-8")
    return result


@app.post("/selftest", response_model=SelfTestResponse)
def selftest(req: SelfTestRequest):
    checks = run_selftest()
    result = SelfTestResponse(checks=checks,
                              passed=all(c["passed"] for c in checks))
    if req.output_dir:
        out = Path(req.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "selftest.json").write_text(result.model_dump_json(indent=2),
                                           encoding="utf-8")
    return result
