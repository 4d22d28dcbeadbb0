"""HTTP facade: async synthesis jobs over the trained stack.

POST /synthesize validates and enqueues, GET /jobs/{id} polls, GET /meta
serves the vocabulary, config defaults and checkpoint hashes.  Jobs run on a
small thread pool against shared read-only models; the job table is the only
mutable state and sits behind a lock.  All images travel as base64 PNG.
"""

from __future__ import annotations

import base64
import io
import queue
import threading
import uuid
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

from .guidance import GuidanceConfig, InvalidConfig, SYNTH_METHODS
from .metrics import faithfulness
from .nets import ModelBundle
from .scenegen import DOMAIN_TOKENS, VOCAB
from .semctl import PromptOverflow, SemanticRegion, attention_diagnostics, controlled_synthesis

QUEUE_CAP = 64
TOTAL_STEPS = 50


def png_to_array(b64: str) -> np.ndarray:
    img = Image.open(io.BytesIO(base64.b64decode(b64))).convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def array_to_png(arr: np.ndarray) -> str:
    a = (np.clip(arr, 0, 1) * 255.0 + 0.5).astype(np.uint8)
    if a.ndim == 3:
        a = a.transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(a).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


@dataclass
class Job:
    id: str
    request: dict
    state: str = "queued"            # queued -> running -> done | failed
    step: int = 0
    total: int = TOTAL_STEPS
    result: Optional[dict] = None
    error: Optional[str] = None

    def view(self) -> dict:
        out = {"id": self.id, "state": self.state,
               "progress": {"step": self.step, "total": self.total}}
        if self.state == "done":
            out["result"] = self.result
        if self.state == "failed":
            out["error"] = self.error
        return out


class ValidationError(ValueError):
    pass


def _parse_request(body: dict) -> dict:
    """Decode and validate a /synthesize body into job inputs."""
    if not isinstance(body, dict):
        raise ValidationError("body must be a JSON object")
    method = body.get("method", "gradop+")
    if method not in SYNTH_METHODS:
        raise ValidationError(f"unknown method '{method}'; valid: {sorted(SYNTH_METHODS)}")
    tokens = body.get("tokens") or []
    if not tokens:
        raise ValidationError("tokens must be a nonempty list of strings")
    for t in tokens:
        if t not in VOCAB.tokens:
            raise ValidationError(f"unknown token '{t}'; valid vocabulary: {list(VOCAB.tokens)}")
    if tokens[0] not in DOMAIN_TOKENS:
        raise ValidationError(f"first token must be a domain token {DOMAIN_TOKENS}")
    try:
        painting = png_to_array(body["painting"])
    except KeyError:
        raise ValidationError("missing field 'painting' (base64 PNG)") from None
    except Exception as e:
        raise ValidationError(f"painting is not decodable PNG: {e}") from None
    if painting.shape != (3, 64, 64):
        raise ValidationError(f"painting must be 64x64 RGB, got {painting.shape[1:]}")
    regions = []
    for i, spec in enumerate(body.get("regions") or []):
        try:
            mask = png_to_array(spec["mask"]).mean(axis=0)
        except Exception as e:
            raise ValidationError(f"regions[{i}].mask is not decodable PNG: {e}") from None
        if mask.shape != (64, 64):
            raise ValidationError(f"regions[{i}].mask must be 64x64, got {mask.shape}")
        try:
            regions.append(SemanticRegion(mask=(mask > 0.5).astype(np.float64),
                                          label=spec.get("label", ""),
                                          weight=float(spec.get("weight", 1.0))))
        except ValueError as e:
            raise ValidationError(f"regions[{i}]: {e}") from None
    overrides = dict(body.get("config") or {})
    if "seed" in body:
        overrides["seed"] = int(body["seed"])
    try:
        cfg = GuidanceConfig().merged(**overrides)
    except InvalidConfig as e:
        raise ValidationError(str(e)) from None
    try:
        base_ids = VOCAB.encode(tokens[0], tokens[1:])
        if regions:
            from .semctl import build_modified_prompt
            build_modified_prompt(base_ids, regions)   # reject overflow up front
    except (KeyError, ValueError, PromptOverflow) as e:
        raise ValidationError(str(e)) from None
    return {"method": method, "painting": painting, "regions": regions,
            "cfg": cfg, "base_ids": base_ids,
            "record_attention": bool(body.get("record_attention", False))}


class JobRunner:
    """Thread-pool worker host; one shared immutable model bundle."""

    def __init__(self, models: ModelBundle, workers: int = 4):
        self.models = models
        self.jobs: dict[str, Job] = {}
        self.lock = threading.Lock()
        self.q: queue.Queue[str] = queue.Queue(maxsize=QUEUE_CAP)
        self.workers = [threading.Thread(target=self._work, daemon=True)
                        for _ in range(max(1, workers))]
        for w in self.workers:
            w.start()

    def submit(self, parsed: dict) -> str:
        job = Job(id=str(uuid.uuid4()), request=parsed)
        with self.lock:
            self.jobs[job.id] = job
        try:
            self.q.put_nowait(job.id)
        except queue.Full:
            with self.lock:
                del self.jobs[job.id]
            raise
        return job.id

    def get(self, job_id: str) -> Optional[Job]:
        with self.lock:
            return self.jobs.get(job_id)

    def _work(self) -> None:
        while True:
            job_id = self.q.get()
            job = self.get(job_id)
            if job is None:
                continue
            req = job.request
            with self.lock:
                job.state = "running"

            def progress(step, total):
                with self.lock:
                    job.step, job.total = step, total

            try:
                if req["regions"]:
                    res = controlled_synthesis(self.models, req["painting"], req["base_ids"],
                                               req["regions"], req["method"], req["cfg"],
                                               record_attention=req["record_attention"],
                                               progress=progress)
                else:
                    res = SYNTH_METHODS[req["method"]](self.models, req["painting"],
                                                       req["base_ids"], req["cfg"],
                                                       progress=progress)
                payload = {
                    "image": array_to_png(res.image),
                    "faithfulness": faithfulness(res.image, req["painting"]),
                    "losses": res.losses,
                    "duration_s": res.duration,
                    "method": res.method,
                    "seed": res.seed,
                }
                if req["record_attention"] and res.attention_record:
                    from .semctl import build_modified_prompt
                    diag = attention_diagnostics(res)
                    prompt = build_modified_prompt(req["base_ids"], req["regions"])
                    names = [VOCAB.token(i) for i in prompt]
                    payload["attention"] = {
                        names[pos]: array_to_png(np.kron(m, np.ones((8, 8))))
                        for pos, m in diag.items() if names[pos] != "<pad>"}
                with self.lock:
                    job.result = payload
                    job.state = "done"
                    job.step = job.total
            except Exception as e:   # job isolation: one failure never kills the pool
                with self.lock:
                    job.error = f"{type(e).__name__}: {e}"
                    job.state = "failed"


def create_app(models_dir, workers: int = 4):
    """Build the FastAPI app bound to checkpoints under models_dir."""
    from fastapi import FastAPI, HTTPException
    from fastapi.middleware.cors import CORSMiddleware

    models = ModelBundle.load(models_dir)
    runner = JobRunner(models, workers=workers)
    app = FastAPI(title="guided synthesis lab")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.runner = runner

    @app.post("/synthesize", status_code=202)
    def synthesize(body: dict):
        try:
            parsed = _parse_request(body)
        except ValidationError as e:
            raise HTTPException(status_code=400, detail=str(e))
        except PromptOverflow as e:
            raise HTTPException(status_code=400, detail=str(e))
        try:
            job_id = runner.submit(parsed)
        except queue.Full:
            raise HTTPException(status_code=503, detail=f"queue full (cap {QUEUE_CAP})")
        return {"job_id": job_id}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        job = runner.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job '{job_id}'")
        with runner.lock:
            return job.view()

    @app.get("/meta")
    def meta():
        return {
            "vocabulary": list(VOCAB.tokens),
            "domains": list(DOMAIN_TOKENS),
            "defaults": asdict(GuidanceConfig()),
            "methods": sorted(SYNTH_METHODS),
            "checkpoints": models.hashes,
            "image_size": 64,
            "total_steps": TOTAL_STEPS,
        }

    return app


def serve(models_dir, port: int = 8787, static_dir=None, workers: int = 4) -> None:
    """Blocking uvicorn server; optionally mounts a static UI bundle at /."""
    import uvicorn

    app = create_app(models_dir, workers=workers)
    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
