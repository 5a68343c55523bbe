"""HTTP service backing the human annotation loop.

Serves pending bundles, records keep/discard decisions with reason codes,
and exports the kept items as a human-preference spec file. Decisions are
an append-only JSONL event log; in-memory statuses are a pure projection
of that log, so replaying it from empty reconstructs state and a restart
loses nothing.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Optional, Union
from urllib.parse import parse_qs, urlparse

from .corpus import SOURCE_HUMAN_PREFERENCE, SpecItem
from .datasetgen import (
    BUNDLE_FILE,
    STATUS_DISCARDED,
    STATUS_KEPT,
    STATUS_PENDING,
    AnnotationBundle,
)

VERDICT_KEEP = "keep"
VERDICT_DISCARD = "discard"

# Discard reasons mirror the dataset-filtering rules; reviewing the
# assembly image (rule 1) is a procedure step, not a verdict reason.
DISCARD_REASONS = {
    2: "similar_descriptions",
    3: "assembly_indistinguishable",
    4: "other_ambiguity",
}

DECISIONS_LOG = "decisions.jsonl"


class DecisionError(ValueError):
    """Invalid decision payload."""


class UnknownBundleError(KeyError):
    """bundle_id not present in the store."""


@dataclass(frozen=True)
class AnnotationDecision:
    bundle_id: str
    verdict: str
    reason_code: Optional[int]
    annotator_id: str
    timestamp: float
    # free-text structure-review note (procedure step 1), never a verdict reason
    note: str = ""

    def to_json(self) -> dict:
        return {
            "bundle_id": self.bundle_id,
            "verdict": self.verdict,
            "reason_code": self.reason_code,
            "annotator_id": self.annotator_id,
            "timestamp": self.timestamp,
            "note": self.note,
        }

    @classmethod
    def from_json(cls, record: dict) -> "AnnotationDecision":
        return cls(
            bundle_id=record["bundle_id"],
            verdict=record["verdict"],
            reason_code=record.get("reason_code"),
            annotator_id=record.get("annotator_id", ""),
            timestamp=record.get("timestamp", 0.0),
            note=record.get("note", ""),
        )


class BundleStore:
    """Bundles directory plus the decision event log.

    Later decisions supersede earlier ones for the same bundle; full
    history stays in the log.
    """

    def __init__(self, bundles_dir: Union[str, Path], clock: Callable[[], float] = time.time):
        self.bundles_dir = Path(bundles_dir)
        self._clock = clock
        self._write_lock = threading.Lock()
        self.bundles: dict[str, AnnotationBundle] = {}
        self.current: dict[str, AnnotationDecision] = {}
        self._load()

    @property
    def log_path(self) -> Path:
        return self.bundles_dir / DECISIONS_LOG

    def _load(self) -> None:
        for bundle_file in sorted(self.bundles_dir.glob(f"*/{BUNDLE_FILE}")):
            bundle = AnnotationBundle.from_json(
                json.loads(bundle_file.read_text(encoding="utf-8"))
            )
            # status is projected from the log, not trusted from disk
            bundle.status = STATUS_PENDING
            bundle.reason_code = None
            self.bundles[bundle.bundle_id] = bundle
        if self.log_path.exists():
            for line in self.log_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._apply(AnnotationDecision.from_json(json.loads(line)))

    def _apply(self, decision: AnnotationDecision) -> None:
        bundle = self.bundles.get(decision.bundle_id)
        if bundle is None:
            return  # log may reference bundles that were removed; keep going
        self.current[decision.bundle_id] = decision
        if decision.verdict == VERDICT_KEEP:
            bundle.status = STATUS_KEPT
            bundle.reason_code = None
        else:
            bundle.status = STATUS_DISCARDED
            bundle.reason_code = decision.reason_code

    def record_decision(
        self,
        bundle_id: str,
        verdict: str,
        reason_code: Optional[int] = None,
        annotator_id: str = "",
        note: str = "",
    ) -> AnnotationDecision:
        """Validate, append to the durable log, and update statuses.

        Identical repeated payloads are idempotent (no duplicate event).
        """
        if bundle_id not in self.bundles:
            raise UnknownBundleError(bundle_id)
        if verdict not in (VERDICT_KEEP, VERDICT_DISCARD):
            raise DecisionError(f"verdict must be keep or discard, got {verdict!r}")
        if verdict == VERDICT_DISCARD and reason_code not in DISCARD_REASONS:
            raise DecisionError(
                f"discard requires a reason_code in {sorted(DISCARD_REASONS)}"
            )
        if verdict == VERDICT_KEEP:
            reason_code = None

        with self._write_lock:
            existing = self.current.get(bundle_id)
            if (
                existing is not None
                and existing.verdict == verdict
                and existing.reason_code == reason_code
                and existing.annotator_id == annotator_id
                and existing.note == note
            ):
                return existing
            decision = AnnotationDecision(
                bundle_id, verdict, reason_code, annotator_id, self._clock(), note
            )
            with open(self.log_path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(decision.to_json(), sort_keys=True) + "\n")
                handle.flush()
            self._apply(decision)
            return decision

    def queue(self, offset: int = 0, limit: Optional[int] = None) -> tuple[list[dict], Optional[int]]:
        """Pending bundle summaries ordered by bundle_id, with paging."""
        pending = [
            {
                "bundle_id": bundle.bundle_id,
                "assembly_id": bundle.assembly_id,
                "specification": bundle.specification,
                "flags": list(bundle.flags),
            }
            for bundle_id, bundle in sorted(self.bundles.items())
            if bundle.status == STATUS_PENDING
        ]
        if limit is None:
            return pending[offset:], None
        window = pending[offset : offset + limit]
        next_offset = offset + limit if offset + limit < len(pending) else None
        return window, next_offset

    def bundle_view(self, bundle_id: str) -> dict:
        bundle = self.bundles.get(bundle_id)
        if bundle is None:
            raise UnknownBundleError(bundle_id)
        merged_available = bundle.merged_image is not None
        return {
            "bundle_id": bundle.bundle_id,
            "assembly_id": bundle.assembly_id,
            "specification": bundle.specification,
            "gt_filenames": list(bundle.gt_filenames),
            "status": bundle.status,
            "reason_code": bundle.reason_code,
            "flags": list(bundle.flags),
            "assembly_image_url": f"/assets/{bundle.bundle_id}/assembly",
            "merged_image_url": (
                f"/assets/{bundle.bundle_id}/merged" if merged_available else None
            ),
            "merged_image_available": merged_available,
        }

    def asset_path(self, bundle_id: str, which: str) -> Path:
        bundle = self.bundles.get(bundle_id)
        if bundle is None:
            raise UnknownBundleError(bundle_id)
        if which == "assembly":
            return Path(bundle.assembly_image)
        if which == "merged" and bundle.merged_image:
            return Path(bundle.merged_image)
        raise UnknownBundleError(f"{bundle_id}/{which}")

    def summary(self) -> dict:
        counts = {STATUS_PENDING: 0, STATUS_KEPT: 0, STATUS_DISCARDED: 0}
        by_reason = {code: 0 for code in DISCARD_REASONS}
        for bundle in self.bundles.values():
            counts[bundle.status] += 1
            if bundle.status == STATUS_DISCARDED and bundle.reason_code in by_reason:
                by_reason[bundle.reason_code] += 1
        return {
            "pending": counts[STATUS_PENDING],
            "kept": counts[STATUS_KEPT],
            "discarded": counts[STATUS_DISCARDED],
            "discarded_by_reason": {str(code): n for code, n in by_reason.items()},
        }

    def export_spec_items(self) -> list[SpecItem]:
        """Exactly the kept bundles, as human-preference spec items."""
        items = []
        for bundle_id, bundle in sorted(self.bundles.items()):
            if bundle.status != STATUS_KEPT:
                continue
            items.append(
                SpecItem(
                    spec_id=bundle.source_spec_id or bundle.bundle_id,
                    assembly_id=bundle.assembly_id,
                    specification=bundle.specification,
                    gt_filenames=bundle.gt_filenames,
                    source=SOURCE_HUMAN_PREFERENCE,
                )
            )
        return items


_MEDIA_TYPES = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
}


class AnnotateHandler(BaseHTTPRequestHandler):
    """Routes /queue, /bundle/{id}, /decision, /export, /summary, /assets,
    plus the static review app when one is configured."""

    server: "AnnotateServer"

    def log_message(self, fmt, *args):  # quiet by default
        if self.server.verbose:
            super().log_message(fmt, *args)

    def _send_json(self, payload, status: int = 200) -> None:
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_file(self, path: Path, status: int = 200) -> None:
        data = path.read_bytes()
        self.send_response(status)
        media = _MEDIA_TYPES.get(path.suffix.lower(), "application/octet-stream")
        self.send_header("Content-Type", media)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        url = urlparse(self.path)
        store = self.server.store
        parts = [p for p in url.path.split("/") if p]
        try:
            if url.path == "/queue":
                params = parse_qs(url.query)
                offset = int(params.get("offset", ["0"])[0])
                limit = params.get("limit")
                items, next_offset = store.queue(
                    offset, int(limit[0]) if limit else None
                )
                self._send_json({"items": items, "next_offset": next_offset})
            elif len(parts) == 2 and parts[0] == "bundle":
                self._send_json(store.bundle_view(parts[1]))
            elif url.path == "/summary":
                self._send_json(store.summary())
            elif url.path == "/export":
                items = store.export_spec_items()
                body = "".join(
                    json.dumps(item.to_json(), sort_keys=True) + "\n" for item in items
                ).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/x-ndjson")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)
            elif len(parts) == 3 and parts[0] == "assets":
                self._send_file(store.asset_path(parts[1], parts[2]))
            elif self.server.frontend_dir is not None:
                relative = url.path.lstrip("/") or "index.html"
                target = (self.server.frontend_dir / relative).resolve()
                if (
                    self.server.frontend_dir.resolve() in target.parents
                    or target == self.server.frontend_dir.resolve()
                ) and target.is_file():
                    self._send_file(target)
                else:
                    self._send_json({"error": "not found"}, 404)
            else:
                self._send_json({"error": "not found"}, 404)
        except UnknownBundleError:
            self._send_json({"error": "unknown bundle"}, 404)
        except FileNotFoundError:
            self._send_json({"error": "asset not found"}, 404)
        except (ValueError, OSError) as err:
            self._send_json({"error": str(err)}, 400)

    def do_POST(self) -> None:  # noqa: N802
        url = urlparse(self.path)
        if url.path != "/decision":
            self._send_json({"error": "not found"}, 404)
            return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
        except json.JSONDecodeError:
            self._send_json({"error": "body must be JSON"}, 400)
            return
        try:
            decision = self.server.store.record_decision(
                bundle_id=payload.get("bundle_id", ""),
                verdict=payload.get("verdict", ""),
                reason_code=payload.get("reason_code"),
                annotator_id=payload.get("annotator_id", ""),
                note=payload.get("note", ""),
            )
        except UnknownBundleError:
            self._send_json({"error": "unknown bundle"}, 404)
            return
        except DecisionError as err:
            self._send_json({"error": str(err)}, 422)
            return
        self._send_json(decision.to_json())


class AnnotateServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(
        self,
        store: BundleStore,
        port: int = 8787,
        host: str = "127.0.0.1",
        frontend_dir: Optional[Union[str, Path]] = None,
        verbose: bool = False,
    ) -> None:
        self.store = store
        self.frontend_dir = Path(frontend_dir) if frontend_dir else None
        self.verbose = verbose
        super().__init__((host, port), AnnotateHandler)


def serve(
    bundles_dir: Union[str, Path],
    port: int = 8787,
    host: str = "127.0.0.1",
    frontend_dir: Optional[Union[str, Path]] = None,
) -> AnnotateServer:
    """Build a server (not yet running); call serve_forever() to block."""
    return AnnotateServer(BundleStore(bundles_dir), port, host, frontend_dir)
