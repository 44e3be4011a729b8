"""FastAPI application: four model endpoints plus health.

Stub mode answers every capability deterministically with no models loaded,
so contract tests and record/replay pipelines run anywhere. Live mode expects
model providers to be registered on the app state; endpoints without a
provider return 503.
"""
from __future__ import annotations

import asyncio
import base64
import hashlib
import io
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, Field, field_validator

MODE_STUB = "stub"
MODE_LIVE = "live"

CAPABILITIES = ("caption", "chat", "detect", "segment")


# ---------------------------------------------------------------------------
# Wire schemas (validated on the way in and on the way out)
# ---------------------------------------------------------------------------


class ChatMessage(BaseModel):
    role: Literal["system", "user", "assistant"]
    content: str


class CaptionRequest(BaseModel):
    image: str = Field(description="base64-encoded PNG")
    prompt: str = Field(min_length=1)
    request_id: str | None = None


class ChatRequest(BaseModel):
    messages: list[ChatMessage] = Field(min_length=1)
    request_id: str | None = None


class DetectRequest(BaseModel):
    image: str
    labels: list[str] = Field(min_length=1)
    box_threshold: float = 3.7
    request_id: str | None = None

    @field_validator("labels")
    @classmethod
    def labels_non_empty(cls, v):
        if any(not l.strip() for l in v):
            raise ValueError("labels must be non-empty strings")
        return v


class Box(BaseModel):
    label: str
    box: list[float] = Field(min_length=4, max_length=4)
    score: float = Field(ge=0)

    @field_validator("box")
    @classmethod
    def box_oriented(cls, v):
        x0, y0, x1, y1 = v
        if not all(0.0 <= c <= 1.0 for c in v):
            raise ValueError("box coordinates must lie in [0, 1]")
        if not (x0 < x1 and y0 < y1):
            raise ValueError("box must satisfy x0 < x1 and y0 < y1")
        return v


class SegmentRequest(BaseModel):
    image: str
    boxes: list[Box]
    request_id: str | None = None


class TextResponse(BaseModel):
    text: str = Field(min_length=1)
    request_id: str | None = None


class DetectionsResponse(BaseModel):
    detections: list[Box]
    request_id: str | None = None


class MasksResponse(BaseModel):
    masks: list[str]
    request_id: str | None = None


class HealthResponse(BaseModel):
    status: str
    mode: str
    capabilities: dict[str, str]


# ---------------------------------------------------------------------------
# Stub capability implementations (deterministic, model-free)
# ---------------------------------------------------------------------------


def decode_image(b64: str, field: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
        img = Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception:
        raise HTTPException(status_code=400, detail=f"{field}: invalid base64 or PNG data")
    return np.asarray(img)


def stub_caption(image: np.ndarray, raw_b64: str, prompt: str) -> str:
    digest = hashlib.sha256(raw_b64.encode() + prompt.encode()).hexdigest()
    return f"object-{digest[:10]}"


def stub_chat(messages: list[ChatMessage]) -> str:
    for msg in reversed(messages):
        if msg.role == "user":
            first_line = msg.content.strip().splitlines()[0] if msg.content.strip() else ""
            if first_line:
                return first_line
    raise HTTPException(status_code=400, detail="messages: no non-empty user message")


def stub_detect(image: np.ndarray, labels: list[str]) -> list[Box]:
    # full-image box per label, unit confidence
    return [Box(label=l, box=[0.0, 0.0, 1.0, 1.0], score=1.0) for l in labels]


def stub_segment(image: np.ndarray, boxes: list[Box]) -> list[str]:
    h, w = image.shape[:2]
    masks = []
    for b in boxes:
        x0, y0, x1, y1 = b.box
        pixels = np.zeros((h, w), dtype=np.uint8)
        r0, c0 = int(np.floor(y0 * h)), int(np.floor(x0 * w))
        r1, c1 = int(np.ceil(y1 * h)), int(np.ceil(x1 * w))
        pixels[r0:r1, c0:c1] = 255
        buf = io.BytesIO()
        Image.fromarray(pixels, mode="L").save(buf, format="PNG")
        masks.append(base64.b64encode(buf.getvalue()).decode())
    return masks


# ---------------------------------------------------------------------------
# Application
# ---------------------------------------------------------------------------


def create_app(mode: str = MODE_STUB) -> FastAPI:
    if mode not in (MODE_STUB, MODE_LIVE):
        raise ValueError(f"mode must be {MODE_STUB!r} or {MODE_LIVE!r}")
    app = FastAPI(title="shapecorr-sidecar", version="0.1.0")
    app.state.mode = mode
    # live providers: capability -> callable; populated by the deployment
    app.state.providers = {}
    # live model inference is serialized per capability
    app.state.locks = {c: asyncio.Lock() for c in CAPABILITIES}

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        loc = ".".join(str(p) for p in first.get("loc", ()) if p != "body")
        return JSONResponse(
            status_code=400,
            content={"detail": f"{loc or 'body'}: {first.get('msg', 'invalid request')}"},
        )

    def provider_or_503(capability: str):
        provider = app.state.providers.get(capability)
        if provider is None:
            raise HTTPException(status_code=503, detail=f"{capability} model not loaded")
        return provider

    async def run_live(capability: str, *args):
        provider = provider_or_503(capability)
        async with app.state.locks[capability]:
            try:
                return await asyncio.get_event_loop().run_in_executor(None, provider, *args)
            except TimeoutError:
                raise HTTPException(
                    status_code=504,
                    detail=f"{capability} provider timed out",
                    headers={"Retry-After": "30"},
                )

    @app.get("/v1/health", response_model=HealthResponse)
    async def health():
        caps = {}
        for c in CAPABILITIES:
            if app.state.mode == MODE_STUB:
                caps[c] = "stub"
            else:
                caps[c] = "loaded" if app.state.providers.get(c) else "missing"
        return HealthResponse(status="ok", mode=app.state.mode, capabilities=caps)

    @app.post("/v1/caption", response_model=TextResponse)
    async def caption(req: CaptionRequest):
        image = decode_image(req.image, "image")
        if app.state.mode == MODE_STUB:
            text = stub_caption(image, req.image, req.prompt)
        else:
            text = await run_live("caption", image, req.prompt)
        return TextResponse(text=text, request_id=req.request_id)

    @app.post("/v1/chat", response_model=TextResponse)
    async def chat(req: ChatRequest):
        if app.state.mode == MODE_STUB:
            text = stub_chat(req.messages)
        else:
            text = await run_live("chat", [m.model_dump() for m in req.messages])
        return TextResponse(text=text, request_id=req.request_id)

    @app.post("/v1/detect", response_model=DetectionsResponse)
    async def detect(req: DetectRequest):
        image = decode_image(req.image, "image")
        if app.state.mode == MODE_STUB:
            detections = stub_detect(image, req.labels)
        else:
            raw = await run_live("detect", image, req.labels, req.box_threshold)
            detections = [Box(**d) for d in raw]
        return DetectionsResponse(detections=detections, request_id=req.request_id)

    @app.post("/v1/segment", response_model=MasksResponse)
    async def segment(req: SegmentRequest):
        image = decode_image(req.image, "image")
        if app.state.mode == MODE_STUB:
            masks = stub_segment(image, req.boxes)
        else:
            masks = await run_live("segment", image, [b.model_dump() for b in req.boxes])
        if len(masks) != len(req.boxes):
            raise HTTPException(status_code=500, detail="segment produced a mask count mismatch")
        return MasksResponse(masks=masks, request_id=req.request_id)

    return app
