"""HTTP/JSON backend for human-in-the-loop verification of completions.

Serves images plus their boxes, records accept/reject verdicts in an
append-only JSON-lines journal (crash-safe: a truncated trailing record is
dropped on replay), and exports the reviewed dataset. Original annotations
are never mutated; only completed/pseudo boxes are reviewable.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .data import Annotation, Dataset, ImageRecord, save_dataset
from .errors import (
    BindFailureError,
    MissingImagesError,
    NotReviewableError,
    UnknownAnnotationError,
)

REVIEWABLE_SOURCES = ("completed", "pseudo")
EXPORT_MODES = ("strict", "lenient")


@dataclass(frozen=True)
class Verdict:
    annotation_id: int
    decision: str  # accept | reject
    reviewer: str
    timestamp: float

    def to_json(self) -> dict:
        return {
            "annotation_id": self.annotation_id,
            "decision": self.decision,
            "reviewer": self.reviewer,
            "timestamp": self.timestamp,
        }


class ReviewState:
    """Dataset plus verdict journal; writes serialized through one lock."""

    def __init__(self, dataset: Dataset, journal_path: str):
        self.dataset = dataset
        self.journal_path = journal_path
        self.verdicts: dict[int, Verdict] = {}
        self._lock = threading.Lock()
        self._annotations: dict[int, Annotation] = {
            a.annotation_id: a for a in dataset.iter_annotations()
        }
        self._replay()

    def _replay(self) -> None:
        if not os.path.exists(self.journal_path):
            return
        with open(self.journal_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    raw = json.loads(line)
                    verdict = Verdict(
                        annotation_id=int(raw["annotation_id"]),
                        decision=str(raw["decision"]),
                        reviewer=str(raw.get("reviewer", "")),
                        timestamp=float(raw.get("timestamp", 0.0)),
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    # truncated or corrupt record: drop it
                    continue
                if verdict.annotation_id in self._annotations and verdict.decision in (
                    "accept",
                    "reject",
                ):
                    self.verdicts[verdict.annotation_id] = verdict

    def is_reviewable(self, annotation_id: int) -> bool:
        ann = self._annotations.get(annotation_id)
        return ann is not None and ann.source in REVIEWABLE_SOURCES

    def record(self, annotation_id: int, decision: str, reviewer: str) -> Verdict:
        if annotation_id not in self._annotations:
            raise UnknownAnnotationError(f"annotation {annotation_id} does not exist")
        if not self.is_reviewable(annotation_id):
            raise NotReviewableError(
                f"annotation {annotation_id} is an original ground truth"
            )
        if decision not in ("accept", "reject"):
            raise ValueError(f"decision must be accept or reject, got {decision!r}")
        verdict = Verdict(annotation_id, decision, reviewer, time.time())
        with self._lock:
            with open(self.journal_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(verdict.to_json(), sort_keys=True))
                fh.write("\n")
                fh.flush()
                os.fsync(fh.fileno())
            self.verdicts[annotation_id] = verdict
        return verdict

    def image_summary(self) -> list[dict]:
        out = []
        for record in self.dataset.images:
            reviewable = [a for a in record.annotations if a.source in REVIEWABLE_SOURCES]
            reviewed = sum(1 for a in reviewable if a.annotation_id in self.verdicts)
            out.append(
                {
                    "image_id": record.image_id,
                    "n_original": len(record.annotations) - len(reviewable),
                    "n_completed": len(reviewable),
                    "review_progress": reviewed / len(reviewable) if reviewable else 1.0,
                }
            )
        return out

    def annotations_payload(self, record: ImageRecord) -> dict:
        items = []
        for ann in record.annotations:
            verdict = self.verdicts.get(ann.annotation_id)
            items.append(
                {
                    "id": ann.annotation_id,
                    "bbox": list(ann.bbox),
                    "category_id": ann.category_id,
                    "class_name": self.dataset.categories.get(ann.category_id, ""),
                    "score": ann.score,
                    "source": ann.source,
                    "reviewable": ann.source in REVIEWABLE_SOURCES,
                    "verdict": verdict.decision if verdict else None,
                }
            )
        return {
            "image_id": record.image_id,
            "width": record.width,
            "height": record.height,
            "annotations": items,
        }

    def export(self, path: str, mode: str) -> Dataset:
        """Originals plus accepted completions (relabeled source=accepted);
        rejected always excluded; unreviewed excluded in strict mode."""
        if mode not in EXPORT_MODES:
            raise ValueError(f"mode must be one of {EXPORT_MODES}, got {mode!r}")
        images = []
        for record in self.dataset.images:
            kept: list[Annotation] = []
            for ann in record.annotations:
                if ann.source not in REVIEWABLE_SOURCES:
                    kept.append(ann)
                    continue
                verdict = self.verdicts.get(ann.annotation_id)
                if verdict is None:
                    if mode == "lenient":
                        kept.append(ann)
                elif verdict.decision == "accept":
                    kept.append(
                        Annotation(
                            annotation_id=ann.annotation_id,
                            image_id=ann.image_id,
                            category_id=ann.category_id,
                            bbox=ann.bbox,
                            score=ann.score,
                            source="accepted",
                            extra=dict(ann.extra),
                        )
                    )
            images.append(
                ImageRecord(
                    image_id=record.image_id,
                    file_path=record.file_path,
                    width=record.width,
                    height=record.height,
                    annotations=tuple(kept),
                    extra=dict(record.extra),
                )
            )
        note = f"reviewed export mode={mode}"
        provenance = (
            f"{self.dataset.provenance} | {note}" if self.dataset.provenance else note
        )
        exported = Dataset(
            tuple(images), dict(self.dataset.categories), provenance, dict(self.dataset.extra)
        )
        save_dataset(exported, path)
        return exported


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def create_app(
    dataset: Dataset,
    image_root: str,
    journal_path: str,
    static_dir: str | None = None,
    check_images: bool = True,
) -> FastAPI:
    if check_images:
        missing = [
            img.file_path
            for img in dataset.images
            if not os.path.exists(os.path.join(image_root, img.file_path))
        ]
        if missing:
            raise MissingImagesError(
                f"{len(missing)} image file(s) missing under {image_root}: {missing[:3]}"
            )
    state = ReviewState(dataset, journal_path)
    app = FastAPI(title="completr review service")
    app.state.review = state
    records = {img.image_id: img for img in dataset.images}

    @app.get("/images")
    def list_images():
        return state.image_summary()

    @app.get("/images/{image_id}/annotations")
    def image_annotations(image_id: int):
        record = records.get(image_id)
        if record is None:
            return _error(404, "UnknownImage", f"image {image_id} not found")
        return state.annotations_payload(record)

    @app.get("/images/{image_id}")
    def image_bytes(image_id: int):
        record = records.get(image_id)
        if record is None:
            return _error(404, "UnknownImage", f"image {image_id} not found")
        return FileResponse(os.path.join(image_root, record.file_path))

    @app.post("/verdicts")
    async def post_verdict(request: Request):
        body = await request.json()
        try:
            annotation_id = int(body["annotation_id"])
            decision = str(body["decision"])
        except (KeyError, TypeError, ValueError):
            return _error(400, "BadRequest", "need annotation_id and decision")
        reviewer = str(body.get("reviewer", ""))
        try:
            verdict = state.record(annotation_id, decision, reviewer)
        except UnknownAnnotationError as exc:
            return _error(404, "UnknownAnnotation", str(exc))
        except NotReviewableError as exc:
            return _error(409, "NotReviewable", str(exc))
        except ValueError as exc:
            return _error(400, "BadRequest", str(exc))
        return {"annotation_id": annotation_id, "decision": verdict.decision}

    @app.post("/export")
    async def post_export(request: Request):
        body = await request.json()
        path = body.get("path")
        mode = body.get("mode", "lenient")
        if not path:
            return _error(400, "BadRequest", "need a target path")
        try:
            exported = state.export(str(path), str(mode))
        except ValueError as exc:
            return _error(400, "BadRequest", str(exc))
        return {
            "path": str(path),
            "mode": mode,
            "n_annotations": exported.n_annotations,
        }

    if static_dir and os.path.isdir(static_dir):
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def serve(
    dataset: Dataset,
    image_root: str,
    bind: str = "127.0.0.1:8701",
    journal_path: str | None = None,
    static_dir: str | None = None,
) -> None:
    """Run the review service until interrupted."""
    import uvicorn

    host, _, port_str = bind.partition(":")
    port = int(port_str or 8701)
    journal = journal_path or os.path.join(os.getcwd(), "review_journal.jsonl")
    app = create_app(dataset, image_root, journal, static_dir=static_dir)
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=port, log_level="warning")
    except OSError as exc:
        raise BindFailureError(f"cannot bind {bind}: {exc}") from exc
