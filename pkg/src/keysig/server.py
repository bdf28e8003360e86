"""Review service: the report, pair evidence, image slices, and decisions
over HTTP so a curator can confirm or reject flags and re-curate.

Read endpoints are side-effect free and safe under concurrency; decision
appends serialize through one lock; re-curation holds an exclusive
report-swap section and returns 409 if one is already running. All JSON
errors use the shape {"error": ..., "detail": ...}.
"""

from __future__ import annotations

import io
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel
from PIL import Image

from .curation import Decision, Verdict, append_decision, load_decisions
from .errors import KeysigError
from .pairwise import PairKey
from .report import curate_report, load_report, serialize_report, write_report
from .volume import Volume, load_volume

AXES = {"x": 0, "y": 1, "z": 2}
ALLOWED_LABELS = ("SM", "MZ", "DZ", "FS", "UR")


class DecisionIn(BaseModel):
    pair: list[int]
    verdict: str
    curator: str = "anonymous"


class DecisionOut(BaseModel):
    pair: list[int]
    verdict: str
    curator: str
    timestamp: str


class FlagOut(BaseModel):
    a: int
    b: int
    label: str
    distance: float
    direction: str
    severity: float
    suggested: str


class RecurateOut(BaseModel):
    report_version: int
    flags: int
    decisions_applied: int


class ReviewSession:
    """Current report (atomic swaps), append-only decision log, volumes."""

    def __init__(
        self,
        report_path: Path,
        decisions_path: Path,
        volume_paths: Optional[dict[str, str]] = None,
    ):
        self.report_path = Path(report_path)
        self.decisions_path = Path(decisions_path)
        self.volume_paths = volume_paths or {}
        report = load_report(self.report_path)
        # Serve the exact bytes the pipeline wrote; recurate replaces them.
        self._state = (report, self.report_path.read_bytes())
        self._swap_lock = threading.Lock()
        self._decision_lock = threading.Lock()
        self._recurate_lock = threading.Lock()
        self._volume_lock = threading.Lock()
        self._volumes: dict[str, Volume] = {}

    @property
    def report(self) -> dict:
        return self._state[0]

    @property
    def report_bytes(self) -> bytes:
        return self._state[1]

    @property
    def version(self) -> int:
        return int(self.report["report_version"])

    def validate_pair(self, a: int, b: int) -> PairKey:
        n = len(self.report["images"])
        if a == b or not (0 <= a < n and 0 <= b < n):
            raise HTTPException(404, {"error": "unknown pair", "detail": f"({a}, {b})"})
        return PairKey.of(a, b)

    def record_decision(self, key: PairKey, verdict: Verdict, curator: str) -> Decision:
        decision = Decision(
            pair=key,
            verdict=verdict,
            curator=curator,
            timestamp=datetime.now(timezone.utc),
        )
        with self._decision_lock:
            append_decision(self.decisions_path, decision)
        return decision

    def decisions(self) -> list[Decision]:
        with self._decision_lock:
            if not self.decisions_path.exists():
                return []
            return load_decisions(self.decisions_path)

    def recurate(self) -> dict:
        if not self._recurate_lock.acquire(blocking=False):
            raise HTTPException(
                409, {"error": "recurate in progress", "detail": "retry shortly"}
            )
        try:
            new = curate_report(self.report, self.decisions())
            data = serialize_report(new)
            with self._swap_lock:
                self._state = (new, data)
            write_report(new, self.report_path)
            return new
        finally:
            self._recurate_lock.release()

    def volume(self, image_id: str) -> Volume:
        if not self.volume_paths:
            raise HTTPException(
                503, {"error": "volumes not configured", "detail": "start with --volumes"}
            )
        if image_id not in self.volume_paths:
            raise HTTPException(404, {"error": "unknown image", "detail": image_id})
        with self._volume_lock:
            if image_id not in self._volumes:
                try:
                    self._volumes[image_id] = load_volume(self.volume_paths[image_id])
                except (OSError, KeysigError) as exc:
                    raise HTTPException(
                        500, {"error": "volume unreadable", "detail": str(exc)}
                    )
            return self._volumes[image_id]


def slice_png(v: Volume, axis: str, index: int) -> bytes:
    """Deterministic 8-bit grayscale PNG of one slice, full-range windowed."""
    ax = AXES[axis]
    if not (0 <= index < v.dims[ax]):
        raise HTTPException(
            416,
            {
                "error": "index out of range",
                "detail": f"axis {axis} has {v.dims[ax]} slices",
            },
        )
    sl = np.take(v.data, index, axis=ax)
    vmin = float(v.data.min())
    vmax = float(v.data.max())
    if vmax > vmin:
        u8 = np.clip((sl - vmin) / (vmax - vmin) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    else:
        u8 = np.zeros(sl.shape, dtype=np.uint8)
    # rows = the later axis (y or z), columns = the earlier one
    img = Image.fromarray(u8.T, mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def create_app(session: ReviewSession, ui_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="keysig review service", docs_url=None, redoc_url=None)

    @app.exception_handler(HTTPException)
    async def http_error(request: Request, exc: HTTPException):
        if isinstance(exc.detail, dict) and "error" in exc.detail:
            body = {"error": exc.detail["error"], "detail": exc.detail.get("detail", "")}
        else:
            body = {"error": str(exc.detail), "detail": ""}
        return JSONResponse(status_code=exc.status_code, content=body)

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400, content={"error": "invalid request", "detail": str(exc)}
        )

    @app.get("/api/report")
    def get_report():
        report, data = session._state  # one read: no torn version/body pairs
        return Response(
            content=data,
            media_type="application/json",
            headers={"X-Report-Version": str(report["report_version"])},
        )

    @app.get("/api/flags", response_model=list[FlagOut])
    def get_flags(label: Optional[str] = None, min_severity: float = 0.0):
        if label is not None and label not in ALLOWED_LABELS:
            raise HTTPException(
                400,
                {
                    "error": "unknown label",
                    "detail": f"allowed: {', '.join(ALLOWED_LABELS)}",
                },
            )
        flags = session.report["flags"]
        return [
            FlagOut(**f)
            for f in flags
            if (label is None or f["label"] == label) and f["severity"] >= min_severity
        ]

    @app.get("/api/images/{image_id}/slice")
    def get_slice(image_id: str, axis: str = "z", index: int = 0):
        if axis not in AXES:
            raise HTTPException(
                400, {"error": "invalid axis", "detail": "axis must be x, y or z"}
            )
        v = session.volume(image_id)
        png = slice_png(v, axis, index)
        return Response(
            content=png,
            media_type="image/png",
            headers={
                "Cache-Control": "public, max-age=86400",
                "ETag": f'"{image_id}-{axis}-{index}"',
            },
        )

    @app.post("/api/decisions", response_model=DecisionOut, status_code=201)
    def post_decision(body: DecisionIn):
        try:
            verdict = Verdict(body.verdict)
        except ValueError:
            raise HTTPException(
                400,
                {
                    "error": "invalid verdict",
                    "detail": "verdict must be same, different or unsure",
                },
            )
        if len(body.pair) != 2:
            raise HTTPException(
                400, {"error": "invalid pair", "detail": "pair must be [a, b]"}
            )
        key = session.validate_pair(int(body.pair[0]), int(body.pair[1]))
        d = session.record_decision(key, verdict, body.curator)
        return DecisionOut(
            pair=[d.pair.a, d.pair.b],
            verdict=d.verdict.value,
            curator=d.curator,
            timestamp=d.timestamp.isoformat(),
        )

    @app.get("/api/decisions", response_model=list[DecisionOut])
    def get_decisions():
        return [
            DecisionOut(
                pair=[d.pair.a, d.pair.b],
                verdict=d.verdict.value,
                curator=d.curator,
                timestamp=d.timestamp.isoformat(),
            )
            for d in session.decisions()
        ]

    @app.post("/api/recurate", response_model=RecurateOut)
    def post_recurate():
        new = session.recurate()
        return RecurateOut(
            report_version=new["report_version"],
            flags=len(new["flags"]),
            decisions_applied=new["decisions_applied"],
        )

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
