"""Decoder backend contract and the three concrete transports.

A backend answers one question: given a frame reference and a weighted
memory bank, produce exactly three candidate masks with predicted IoUs and
one shared occlusion score. The engine never looks inside payloads or frame
pixels.

Transports:
  * ScriptedBackend / EchoBackend: deterministic in-process decoders for
    tests and fixtures.
  * RecordingBackend / ReplayBackend: tee decode traffic to an NDJSON trace
    keyed by request digest, and replay it with tamper detection.
  * ExternalBackend: NDJSON protocol v1 over a child process's stdio.

Wire protocol v1 (one JSON object per line, UTF-8):
  engine -> {"type":"hello","version":1}
  adapter -> {"type":"hello","version":1,"concurrent":false}
  engine -> {"type":"decode","object_id":N,"time":N,"frame":"<id>","bank":[entry...]}
      entry = {"frame_index","weight","iou","occ","mask_rle","payload_b64","is_prompt"}
  adapter -> {"type":"candidates","occ":F,"items":[{"iou","mask_rle","payload_b64"} x3]}
  engine -> {"type":"bye"}
"""

from __future__ import annotations

import base64
import hashlib
import json
import queue
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Sequence

import numpy as np

from .core import CandidatePrediction, Mask, deserialize_mask, serialize_mask
from .memory import MemoryBankView

__all__ = [
    "DecodeRequest",
    "DecodeResponse",
    "DecoderBackend",
    "BackendError",
    "ProtocolError",
    "SchemaError",
    "VersionMismatchError",
    "DecodeTimeoutError",
    "AdapterExitedError",
    "ReplayMissError",
    "ReplayDigestError",
    "request_digest",
    "request_to_json",
    "response_to_json",
    "response_from_json",
    "ScriptedBackend",
    "EchoBackend",
    "RecordingBackend",
    "ReplayBackend",
    "replay_load",
    "ExternalBackend",
    "erode4",
    "dilate4",
    "PROTOCOL_VERSION",
]

PROTOCOL_VERSION = 1


class BackendError(Exception):
    """Base class for backend transport and contract failures."""


class ProtocolError(BackendError):
    """Adapter spoke the wire protocol incorrectly."""


class SchemaError(ProtocolError):
    """A message parsed but violated the schema (wrong fields/counts/ranges)."""


class VersionMismatchError(ProtocolError):
    """Handshake version differs from the engine's."""


class DecodeTimeoutError(BackendError):
    """Adapter did not answer within the configured timeout."""


class AdapterExitedError(BackendError):
    """Child process exited while a reply was pending."""


class ReplayMissError(BackendError):
    """Replay trace has no entry for the request digest."""


class ReplayDigestError(BackendError):
    """Replay trace line failed its integrity check."""


@dataclass(frozen=True)
class DecodeRequest:
    object_id: int
    time: int
    frame_ref: str
    bank: MemoryBankView

    def __post_init__(self):
        if self.bank.built_for_time != self.time:
            raise ValueError(
                f"bank built for t={self.bank.built_for_time}, request is for t={self.time}"
            )


@dataclass(frozen=True)
class DecodeResponse:
    """Exactly three candidates sharing one occlusion score."""

    candidates: tuple[CandidatePrediction, ...]

    def __post_init__(self):
        if len(self.candidates) != 3:
            raise SchemaError(f"expected 3 candidates, got {len(self.candidates)}")
        occs = {c.occlusion_score for c in self.candidates}
        if len(occs) != 1:
            raise SchemaError(f"candidates must share one occlusion score, got {occs}")

    @property
    def occlusion_score(self) -> float:
        return self.candidates[0].occlusion_score

    @classmethod
    def build(
        cls,
        occlusion_score: float,
        items: Sequence[tuple[Mask, float, bytes]],
    ) -> "DecodeResponse":
        """Construct from (mask, predicted_iou, payload) triples."""
        return cls(
            candidates=tuple(
                CandidatePrediction(
                    mask=mask,
                    predicted_iou=iou,
                    occlusion_score=occlusion_score,
                    payload=payload,
                )
                for mask, iou, payload in items
            )
        )


class DecoderBackend(Protocol):
    supports_concurrent_decode: bool

    def decode(self, request: DecodeRequest) -> DecodeResponse: ...


# ---------------------------------------------------------------------------
# Wire/trace serialization


def request_digest(request: DecodeRequest) -> str:
    """Stable identity of a decode request for record/replay.

    Covers object id, time, and the ordered bank entries as
    (frame_index, weight quantized to 1e-4, mask RLE); quantizing weights
    keeps digests stable across last-ulp float drift between platforms.
    """
    parts = [f"{request.object_id}|{request.time}"]
    for record, weight in request.bank.entries:
        q = int(round(weight * 10000))
        parts.append(f"{record.frame_index},{q},{serialize_mask(record.mask).decode()}")
    return hashlib.sha256(";".join(parts).encode("ascii")).hexdigest()


def request_to_json(request: DecodeRequest) -> dict:
    return {
        "type": "decode",
        "object_id": request.object_id,
        "time": request.time,
        "frame": request.frame_ref,
        "bank": [
            {
                "frame_index": record.frame_index,
                "weight": weight,
                "iou": record.predicted_iou,
                "occ": record.occlusion_score,
                "mask_rle": serialize_mask(record.mask).decode("ascii"),
                "payload_b64": base64.b64encode(record.payload).decode("ascii"),
                "is_prompt": record.is_prompt,
            }
            for record, weight in request.bank.entries
        ],
    }


def response_to_json(response: DecodeResponse) -> dict:
    return {
        "type": "candidates",
        "occ": response.occlusion_score,
        "items": [
            {
                "iou": c.predicted_iou,
                "mask_rle": serialize_mask(c.mask).decode("ascii"),
                "payload_b64": base64.b64encode(c.payload).decode("ascii"),
            }
            for c in response.candidates
        ],
    }


def response_from_json(obj: dict) -> DecodeResponse:
    """Parse and fully validate a candidates message."""
    if not isinstance(obj, dict) or obj.get("type") != "candidates":
        raise SchemaError(f"expected a candidates message, got {obj!r}")
    items = obj.get("items")
    if not isinstance(items, list) or len(items) != 3:
        raise SchemaError(
            f"expected exactly 3 items, got {len(items) if isinstance(items, list) else items!r}"
        )
    occ = obj.get("occ")
    if not isinstance(occ, (int, float)):
        raise SchemaError("occ must be a number")
    triples = []
    for item in items:
        try:
            mask = deserialize_mask(item["mask_rle"])
            iou = float(item["iou"])
            payload = base64.b64decode(item.get("payload_b64", ""))
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(f"bad candidate item {item!r}: {exc}") from exc
        triples.append((mask, iou, payload))
    try:
        return DecodeResponse.build(float(occ), triples)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


# ---------------------------------------------------------------------------
# In-process backends


def _shift(grid: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(grid)
    h, w = grid.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys, xs] = grid[ys_src, xs_src]
    return out


def erode4(mask: Mask) -> Mask:
    """4-neighbor erosion; outside the canvas counts as background."""
    g = mask.to_array()
    out = (
        g
        & _shift(g, 1, 0)
        & _shift(g, -1, 0)
        & _shift(g, 0, 1)
        & _shift(g, 0, -1)
    )
    return Mask.from_array(out)


def dilate4(mask: Mask) -> Mask:
    """4-neighbor dilation, clipped to the canvas."""
    g = mask.to_array()
    out = (
        g
        | _shift(g, 1, 0)
        | _shift(g, -1, 0)
        | _shift(g, 0, 1)
        | _shift(g, 0, -1)
    )
    return Mask.from_array(out)


def committed_prefix(bank: MemoryBankView) -> tuple[int, ...]:
    """Decode-history prefix encoded in the newest non-prompt entry's payload.

    Scripted backends store the full candidate-index sequence in each
    committed payload, so the newest entry identifies the pathway exactly.
    """
    newest = None
    for record, _ in bank.entries:
        if not record.is_prompt:
            newest = record
    if newest is None:
        return ()
    return tuple(newest.payload)


def _hash_mask(time: int, prefix: tuple[int, ...], k: int, side: int = 4) -> Mask:
    """Small deterministic mask distinct per (time, prefix, candidate)."""
    seed = hashlib.sha256(
        f"mask|{time}|{','.join(map(str, prefix))}|{k}".encode()
    ).digest()
    bits = np.frombuffer(seed[: (side * side + 7) // 8], dtype=np.uint8)
    bits = np.unpackbits(bits)[: side * side].astype(bool)
    return Mask(side, side, bits)


class ScriptedBackend:
    """Deterministic decoder driven by a menu function or literal table.

    The menu is keyed by (time, committed candidate-index prefix); the prefix
    is recovered from the payload convention above, so fixtures must keep the
    newest frame in the bank (certain occlusion scores and a permissive IoU
    gate, or a recency memory builder).
    """

    supports_concurrent_decode = True

    def __init__(
        self,
        menu_fn: Callable[[int, tuple[int, ...]], tuple[tuple[float, float, float], float]],
        mask_fn: Optional[Callable[[int, tuple[int, ...], int], Mask]] = None,
    ):
        self._menu_fn = menu_fn
        self._mask_fn = mask_fn or _hash_mask

    @classmethod
    def from_table(
        cls,
        table: Mapping[tuple[int, tuple[int, ...]], tuple[tuple[float, float, float], float]],
        mask_fn: Optional[Callable[[int, tuple[int, ...], int], Mask]] = None,
    ) -> "ScriptedBackend":
        def menu(time: int, prefix: tuple[int, ...]):
            try:
                return table[(time, prefix)]
            except KeyError:
                raise KeyError(f"no scripted entry for t={time}, prefix={prefix}")

        return cls(menu, mask_fn)

    def decode(self, request: DecodeRequest) -> DecodeResponse:
        prefix = committed_prefix(request.bank)
        ious, occ = self._menu_fn(request.time, prefix)
        items = []
        for k, iou in enumerate(ious):
            mask = self._mask_fn(request.time, prefix, k)
            items.append((mask, iou, bytes(prefix + (k,))))
        return DecodeResponse.build(occ, items)


class EchoBackend:
    """In-process twin of the reference adapter's echo mode.

    Candidates derive from the newest bank mask: identity, eroded, dilated,
    with scripted IoUs (0.9, 0.5, 0.7) and a constant confident occlusion
    score.
    """

    supports_concurrent_decode = True

    ECHO_IOUS = (0.9, 0.5, 0.7)
    ECHO_OCC = 3.0

    def decode(self, request: DecodeRequest) -> DecodeResponse:
        newest = request.bank.entries[-1][0].mask
        items = [
            (newest, self.ECHO_IOUS[0], b""),
            (erode4(newest), self.ECHO_IOUS[1], b""),
            (dilate4(newest), self.ECHO_IOUS[2], b""),
        ]
        return DecodeResponse.build(self.ECHO_OCC, items)


# ---------------------------------------------------------------------------
# Record / replay


def _line_check(digest: str, response_obj: dict) -> str:
    canonical = json.dumps(response_obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256((digest + canonical).encode("utf-8")).hexdigest()


class RecordingBackend:
    """Wraps another backend and tees (digest, response) pairs to NDJSON."""

    supports_concurrent_decode = False  # single shared trace file handle

    def __init__(self, inner: DecoderBackend, path: str | Path):
        self._inner = inner
        self._path = Path(path)
        self._fh = open(self._path, "w", encoding="utf-8")

    def decode(self, request: DecodeRequest) -> DecodeResponse:
        response = self._inner.decode(request)
        digest = request_digest(request)
        response_obj = response_to_json(response)
        line = {
            "digest": digest,
            "response": response_obj,
            "check": _line_check(digest, response_obj),
        }
        self._fh.write(json.dumps(line) + "\n")
        self._fh.flush()
        return response

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def replay_load(path: str | Path) -> dict[str, DecodeResponse]:
    """Parse a trace file into a digest -> response map, verifying integrity."""
    trace: dict[str, DecodeResponse] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                digest = obj["digest"]
                response_obj = obj["response"]
                check = obj["check"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ReplayDigestError(f"trace line {lineno} unreadable: {exc}") from exc
            if _line_check(digest, response_obj) != check:
                raise ReplayDigestError(f"trace line {lineno} failed its integrity check")
            trace[digest] = response_from_json(response_obj)
    return trace


class ReplayBackend:
    """Answers decodes from a recorded trace; misses are hard errors."""

    supports_concurrent_decode = True

    def __init__(self, trace: dict[str, DecodeResponse]):
        self._trace = trace

    @classmethod
    def load(cls, path: str | Path) -> "ReplayBackend":
        return cls(replay_load(path))

    def __len__(self) -> int:
        return len(self._trace)

    def decode(self, request: DecodeRequest) -> DecodeResponse:
        digest = request_digest(request)
        try:
            return self._trace[digest]
        except KeyError:
            raise ReplayMissError(
                f"no recorded response for object {request.object_id} at t={request.time} "
                f"(digest {digest[:12]}...)"
            ) from None


# ---------------------------------------------------------------------------
# External process over NDJSON stdio


class _LineReader:
    """Background reader so stdout reads can time out."""

    def __init__(self, stream):
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._pump, args=(stream,), daemon=True)
        self._thread.start()

    def _pump(self, stream):
        for line in stream:
            self._queue.put(line)
        self._queue.put(None)  # EOF marker

    def readline(self, timeout: float) -> Optional[str]:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            raise DecodeTimeoutError(f"no reply within {timeout}s")


class ExternalBackend:
    """Child-process decoder speaking NDJSON protocol v1 over stdio.

    Requests are serialized per process; run several processes for
    scenario-level parallelism instead.
    """

    supports_concurrent_decode = False

    def __init__(self, cmd: Sequence[str], timeout: float = 30.0):
        self._cmd = list(cmd)
        self._timeout = timeout
        self._proc: Optional[subprocess.Popen] = None
        self._reader: Optional[_LineReader] = None
        self._lock = threading.Lock()

    def start(self):
        if self._proc is not None:
            return
        self._proc = subprocess.Popen(
            self._cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._reader = _LineReader(self._proc.stdout)
        self._send({"type": "hello", "version": PROTOCOL_VERSION})
        reply = self._recv()
        if reply.get("type") != "hello":
            raise ProtocolError(f"expected hello, got {reply!r}")
        if reply.get("version") != PROTOCOL_VERSION:
            raise VersionMismatchError(
                f"adapter speaks version {reply.get('version')!r}, engine speaks {PROTOCOL_VERSION}"
            )

    def _send(self, obj: dict):
        proc = self._proc
        if proc is None or proc.stdin is None:
            raise BackendError("backend not started")
        try:
            proc.stdin.write(json.dumps(obj) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterExitedError(f"adapter stdin closed: {exc}") from exc

    def _recv(self) -> dict:
        assert self._reader is not None
        line = self._reader.readline(self._timeout)
        if line is None:
            code = self._proc.poll() if self._proc else None
            raise AdapterExitedError(f"adapter exited (returncode={code}) while a reply was pending")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"adapter sent non-JSON line {line!r}") from exc
        if not isinstance(obj, dict):
            raise ProtocolError(f"adapter sent non-object message {obj!r}")
        return obj

    def decode(self, request: DecodeRequest) -> DecodeResponse:
        with self._lock:
            if self._proc is None:
                self.start()
            self._send(request_to_json(request))
            reply = self._recv()
        if reply.get("type") == "error":
            raise ProtocolError(f"adapter error: {reply.get('message')!r}")
        return response_from_json(reply)

    def close(self):
        if self._proc is None:
            return
        try:
            self._send({"type": "bye"})
        except BackendError:
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        finally:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc = None
            self._reader = None

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.close()
        return False
