"""HTTP session API: thin JSON/P5 wrappers over the session state machine.

One service instance holds the models and an in-memory session table;
operations on a single session are serialized with a per-session lock.
Error payloads carry the machine-readable code from the exception.
"""

from __future__ import annotations

import threading

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from .diffusion import GeneratorNet, NoiseSchedule, make_linear_schedule
from .errors import SketchFieldError, StateError
from .grids import BBox, sketch_from_pgm, sketch_to_pgm, mask_to_pgm
from .session import (CompositionCanvas, CompositionLayer, GenerationSession,
                      compose, create_session, extract_mask, generate_detailed,
                      generate_rough, submit_edit)
from .udf import udfg_to_bytes

_STATUS = {
    "state_error": 409,
    "bounds_error": 400,
    "shape_error": 400,
    "empty_ink": 400,
    "empty_region": 400,
    "parameter_error": 400,
    "format_error": 400,
}

_ARTIFACT_NAMES = ("rough.pgm", "edited.pgm", "detailed.pgm", "mask.pgm",
                   "rough.udfg", "detailed.udfg")


class PipelineService:
    """Owns models, schedule and the session table behind the HTTP API."""

    def __init__(self, generator: GeneratorNet, schedule: NoiseSchedule,
                 width: int = 512, height: int = 512, seed: int = 0,
                 decoder_net=None, mask_net=None):
        self.generator = generator
        self.schedule = schedule
        self.width = width
        self.height = height
        self.decoder_net = decoder_net
        self.mask_net = mask_net
        self.rng = np.random.default_rng(seed)
        self.sessions: dict[str, GenerationSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._table_lock = threading.Lock()

    @classmethod
    def untrained(cls, width: int = 64, height: int = 64, seed: int = 0,
                  diffusion_steps: int = 10) -> "PipelineService":
        """A service around fresh weights; useful for plumbing tests."""
        return cls(GeneratorNet(seed=seed),
                   make_linear_schedule(diffusion_steps, 1e-4, 2e-2),
                   width=width, height=height, seed=seed)

    def add(self, session: GenerationSession):
        with self._table_lock:
            self.sessions[session.session_id] = session
            self._locks[session.session_id] = threading.Lock()

    def lock_for(self, session_id: str) -> threading.Lock:
        with self._table_lock:
            return self._locks[session_id]


def _session_payload(session: GenerationSession) -> dict:
    present = {
        "rough.pgm": session.rough_sketch is not None,
        "edited.pgm": session.edited_sketch is not None,
        "detailed.pgm": session.detailed_sketch is not None,
        "mask.pgm": session.instance_mask is not None,
        "rough.udfg": session.rough_udf is not None,
        "detailed.udfg": session.detailed_udf is not None,
    }
    return {
        "id": session.session_id,
        "state": session.state,
        "canvas": [session.width, session.height],
        "bbox": list(session.bbox.astuple()),
        "class_tag": session.class_tag,
        "blank_generation": session.blank_generation,
        "images": {name: f"/sessions/{session.session_id}/artifact/{name}"
                   for name, ok in present.items() if ok},
    }


def _error_response(exc: SketchFieldError, session=None) -> JSONResponse:
    code = getattr(exc, "code", "error")
    body = {"error": code, "detail": str(exc)}
    if session is not None:
        body["state"] = session.state
    return JSONResponse(body, status_code=_STATUS.get(code, 400))


def _artifact_bytes(session: GenerationSession, name: str):
    if name == "rough.pgm" and session.rough_sketch is not None:
        return sketch_to_pgm(session.rough_sketch), "image/x-portable-graymap"
    if name == "edited.pgm" and session.edited_sketch is not None:
        return sketch_to_pgm(session.edited_sketch), "image/x-portable-graymap"
    if name == "detailed.pgm" and session.detailed_sketch is not None:
        return sketch_to_pgm(session.detailed_sketch), "image/x-portable-graymap"
    if name == "mask.pgm" and session.instance_mask is not None:
        return mask_to_pgm(session.instance_mask), "image/x-portable-graymap"
    if name == "rough.udfg" and session.rough_udf is not None:
        return udfg_to_bytes(session.rough_udf), "application/octet-stream"
    if name == "detailed.udfg" and session.detailed_udf is not None:
        return udfg_to_bytes(session.detailed_udf), "application/octet-stream"
    return None, None


def create_app(service: PipelineService, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="sketchfield", docs_url=None, redoc_url=None)

    def _get(session_id: str) -> GenerationSession | None:
        return service.sessions.get(session_id)

    def _missing(session_id: str) -> JSONResponse:
        return JSONResponse({"error": "not_found",
                             "detail": f"no session {session_id}"},
                            status_code=404)

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "canvas": [service.width, service.height],
                "sessions": len(service.sessions)}

    @app.post("/sessions")
    async def new_session(request: Request):
        try:
            doc = await request.json()
            box = BBox(*[int(v) for v in doc["bbox"]])
            session = create_session(box, int(doc.get("class_tag", 0)),
                                     service.width, service.height)
        except SketchFieldError as exc:
            return _error_response(exc)
        except (KeyError, TypeError, ValueError) as exc:
            return JSONResponse({"error": "parameter_error",
                                 "detail": f"malformed request: {exc}"},
                                status_code=400)
        service.add(session)
        return _session_payload(session)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        session = _get(session_id)
        if session is None:
            return _missing(session_id)
        return _session_payload(session)

    @app.get("/sessions/{session_id}/artifact/{name}")
    def get_artifact(session_id: str, name: str):
        session = _get(session_id)
        if session is None:
            return _missing(session_id)
        if name not in _ARTIFACT_NAMES:
            return JSONResponse({"error": "not_found",
                                 "detail": f"unknown artifact {name}"},
                                status_code=404)
        blob, media = _artifact_bytes(session, name)
        if blob is None:
            return JSONResponse({"error": "not_found",
                                 "detail": f"artifact {name} not ready",
                                 "state": session.state}, status_code=404)
        return Response(content=blob, media_type=media)

    def _run_step(session_id: str, fn):
        session = _get(session_id)
        if session is None:
            return _missing(session_id)
        with service.lock_for(session_id):
            try:
                fn(session)
            except SketchFieldError as exc:
                return _error_response(exc, session)
        return _session_payload(session)

    @app.post("/sessions/{session_id}/rough")
    def rough(session_id: str):
        return _run_step(session_id, lambda s: generate_rough(
            s, service.generator, service.schedule, service.rng,
            decoder_net=service.decoder_net))

    @app.put("/sessions/{session_id}/edit")
    async def edit(session_id: str, request: Request):
        payload = await request.body()
        session = _get(session_id)
        if session is None:
            return _missing(session_id)
        with service.lock_for(session_id):
            try:
                edited = sketch_from_pgm(payload)
                submit_edit(session, edited)
            except SketchFieldError as exc:
                return _error_response(exc, session)
        return _session_payload(session)

    @app.post("/sessions/{session_id}/mask")
    def mask(session_id: str):
        return _run_step(session_id, lambda s: extract_mask(
            s, mask_net=service.mask_net))

    @app.post("/sessions/{session_id}/detail")
    def detail(session_id: str):
        return _run_step(session_id, lambda s: generate_detailed(
            s, service.generator, service.schedule, service.rng,
            decoder_net=service.decoder_net))

    @app.post("/compose")
    async def compose_layers(request: Request):
        try:
            doc = await request.json()
            entries = [{"session_id": str(e["session_id"]),
                        "offset": tuple(int(v) for v in e.get("offset", (0, 0)))}
                       for e in doc.get("layers", [])]
        except (KeyError, TypeError, ValueError) as exc:
            return JSONResponse({"error": "parameter_error",
                                 "detail": f"malformed request: {exc}"},
                                status_code=400)
        layers = []
        for entry in entries:
            session = _get(entry["session_id"])
            if session is None:
                return _missing(entry["session_id"])
            if session.state != "DetailedGenerated":
                return _error_response(
                    StateError(f"session {session.session_id} not finished"),
                    session)
            try:
                layers.append(CompositionLayer(session.detailed_sketch,
                                               session.instance_mask,
                                               entry["offset"]))
            except SketchFieldError as exc:
                return _error_response(exc, session)
        try:
            out = compose(CompositionCanvas(service.width, service.height,
                                            layers))
        except SketchFieldError as exc:
            return _error_response(exc)
        return Response(content=sketch_to_pgm(out),
                        media_type="image/x-portable-graymap")

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=static_dir, html=True),
                  name="ui")

    return app
