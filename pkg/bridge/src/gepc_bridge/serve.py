"""Request parsing and the single-threaded serve loop.

A request is a pair ``request-<id>.gtf`` (N items stacked along the channel
axis, C' = N*C) and ``request-<id>.meta`` with lines

    n = <N>
    t_index = <t>     (N lines, one per item)
    sigma_t = <s>     (N lines, one per item)
    want = eps | score

A denoiser is any callable ``denoiser(x, t_index) -> eps`` taking one
(C, H, W) array and returning the predicted noise with the same shape.
For ``want = score`` the response holds -eps/sigma_t per item; for
``want = eps`` it holds eps unchanged.  Each request id is answered at most
once; malformed requests get ``response-<id>.err`` with a one-line reason.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass

import numpy as np

from .gtf import GtfFormatError, read_gtf, write_gtf

_REQUEST_RE = re.compile(r"^request-(.+)\.meta$")


class MalformedRequestError(Exception):
    pass


@dataclass(frozen=True)
class BatchRequest:
    request_id: str
    items: np.ndarray          # (n, C, H, W)
    t_indices: tuple[int, ...]
    sigmas: tuple[float, ...]
    want: str                  # "eps" | "score"


def parse_meta(path) -> tuple[int, tuple[int, ...], tuple[float, ...], str]:
    n = None
    t_indices: list[int] = []
    sigmas: list[float] = []
    want = None
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise MalformedRequestError(f"bad meta line: {line!r}")
            key, value = key.strip(), value.strip()
            try:
                if key == "n":
                    n = int(value)
                elif key == "t_index":
                    t_indices.append(int(value))
                elif key == "sigma_t":
                    sigmas.append(float(value))
                elif key == "want":
                    want = value
                else:
                    raise MalformedRequestError(f"unknown meta key {key!r}")
            except ValueError:
                raise MalformedRequestError(f"bad meta value: {line!r}")
    if n is None or n < 1:
        raise MalformedRequestError("meta is missing a positive n")
    if want not in ("eps", "score"):
        raise MalformedRequestError(f"want must be eps or score, got {want!r}")
    if len(t_indices) != n or len(sigmas) != n:
        raise MalformedRequestError(
            f"meta counts mismatch: n = {n}, {len(t_indices)} t_index lines, "
            f"{len(sigmas)} sigma_t lines")
    if want == "score" and any(s <= 0.0 for s in sigmas):
        raise MalformedRequestError("sigma_t must be positive for want=score")
    return n, tuple(t_indices), tuple(sigmas), want


def load_request(request_dir, request_id: str) -> BatchRequest:
    meta_path = os.path.join(request_dir, f"request-{request_id}.meta")
    gtf_path = os.path.join(request_dir, f"request-{request_id}.gtf")
    n, t_indices, sigmas, want = parse_meta(meta_path)
    try:
        stacked = read_gtf(gtf_path)
    except FileNotFoundError:
        raise MalformedRequestError("payload file is missing")
    except GtfFormatError as exc:
        raise MalformedRequestError(str(exc))
    total_c, h, w = stacked.shape
    if total_c % n != 0:
        raise MalformedRequestError(
            f"stacked channel count {total_c} is not a multiple of n = {n}")
    items = stacked.reshape(n, total_c // n, h, w)
    return BatchRequest(request_id, items, t_indices, sigmas, want)


def constant_stub(value: float):
    """A backbone whose noise prediction is the constant field ``value``."""

    def denoiser(x: np.ndarray, t_index: int) -> np.ndarray:
        return np.full_like(x, value)

    return denoiser


def parse_stub(spec: str):
    kind, _, arg = spec.partition(":")
    if kind == "constant":
        return constant_stub(float(arg))
    raise ValueError(f"unknown stub {spec!r}")


def _answer(request: BatchRequest, denoiser) -> np.ndarray:
    out = []
    for x, t, sigma in zip(request.items, request.t_indices, request.sigmas):
        eps = np.asarray(denoiser(x, t), dtype=np.float64)
        if eps.shape != x.shape:
            raise MalformedRequestError(
                f"denoiser returned shape {eps.shape} for input {x.shape}")
        out.append(eps if request.want == "eps" else -eps / sigma)
    return np.concatenate(out, axis=0)


def _pending_ids(request_dir) -> list[str]:
    ids = []
    for name in sorted(os.listdir(request_dir)):
        m = _REQUEST_RE.match(name)
        if not m:
            continue
        rid = m.group(1)
        done = (os.path.join(request_dir, f"response-{rid}.gtf"),
                os.path.join(request_dir, f"response-{rid}.err"))
        if not any(os.path.exists(p) for p in done):
            ids.append(rid)
    return ids


def serve(request_dir, denoiser) -> int:
    """Answer every currently pending request once; returns the count.

    Responses are written atomically (tmp file + rename) so a polling
    reader never sees a partial payload.  Already-answered ids are left
    untouched, which makes repeated serve passes idempotent.
    """
    answered = 0
    for rid in _pending_ids(request_dir):
        resp = os.path.join(request_dir, f"response-{rid}.gtf")
        err = os.path.join(request_dir, f"response-{rid}.err")
        try:
            request = load_request(request_dir, rid)
            payload = _answer(request, denoiser)
        except MalformedRequestError as exc:
            with open(err + ".tmp", "w") as fh:
                fh.write(str(exc).splitlines()[0] + "\n")
            os.replace(err + ".tmp", err)
            answered += 1
            continue
        write_gtf(payload, resp + ".tmp")
        os.replace(resp + ".tmp", resp)
        answered += 1
    return answered


def serve_forever(request_dir, denoiser, poll_interval: float = 0.05,
                  max_seconds: float | None = None) -> int:
    """Poll for requests until interrupted or ``max_seconds`` elapses."""
    deadline = None if max_seconds is None else time.time() + max_seconds
    total = 0
    while True:
        total += serve(request_dir, denoiser)
        if deadline is not None and time.time() >= deadline:
            return total
        time.sleep(poll_interval)
