"""Client for predictors living in another process.

Wire protocol: line-delimited JSON on the child's stdin/stdout.
Request ``{"id": int, "shape": [h, w, c], "pixels": [...]}`` per image,
response ``{"id": int, "probs": [...]}``. Ids increase per connection;
unknown fields are ignored.
"""

import json
import queue
import shlex
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import ProbabilityError, ProtocolError
from .predictor import SUM_TOLERANCE, as_batch, check_probabilities

_EOF = object()


class _Connection:
    """One child process; calls are serialized by a lock."""

    def __init__(self, argv, env=None):
        self.proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            bufsize=1,
            env=env,
        )
        self.lines = queue.Queue()
        self.lock = threading.Lock()
        self.next_id = 0
        self._reader = threading.Thread(target=self._read, daemon=True)
        self._reader.start()

    def _read(self):
        for line in self.proc.stdout:
            self.lines.put(line)
        self.lines.put(_EOF)

    def _write(self, payload, errors):
        try:
            self.proc.stdin.write(payload)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            errors.append(exc)

    def query(self, batch, timeout):
        with self.lock:
            ids = list(range(self.next_id, self.next_id + len(batch)))
            self.next_id += len(batch)
            h, w, c = batch.shape[1:]
            payload = "".join(
                json.dumps({"id": i, "shape": [h, w, c], "pixels": img.ravel().tolist()}) + "\n"
                for i, img in zip(ids, batch)
            )
            deadline = time.monotonic() + timeout
            write_errors = []
            writer = threading.Thread(target=self._write, args=(payload, write_errors), daemon=True)
            writer.start()
            pending = {i: k for k, i in enumerate(ids)}
            out = [None] * len(batch)
            while pending:
                remaining = deadline - time.monotonic()
                try:
                    line = self.lines.get(timeout=max(remaining, 0.0)) if remaining > 0 else self.lines.get_nowait()
                except queue.Empty:
                    self.close()
                    raise ProtocolError(
                        f"timed out after {timeout}s waiting for {len(pending)} of {len(batch)} responses"
                    ) from None
                if line is _EOF:
                    err = self.proc.stderr.read() if self.proc.stderr else ""
                    raise ProtocolError(f"predictor exited (code {self.proc.poll()}) mid-batch", err or None)
                try:
                    msg = json.loads(line)
                    rid = msg["id"]
                    probs = msg["probs"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    raise ProtocolError("malformed response", line) from None
                if not isinstance(rid, int) or rid not in pending:
                    raise ProtocolError(f"response id {rid!r} matches no outstanding request", line)
                if not isinstance(probs, list) or not all(
                    isinstance(p, (int, float)) and not isinstance(p, bool) for p in probs
                ):
                    raise ProtocolError("probs must be a list of numbers", line)
                out[pending.pop(rid)] = (probs, line)
            writer.join(max(deadline - time.monotonic(), 0.0))
            if write_errors:
                raise ProtocolError(f"could not send requests: {write_errors[0]}")
            return out

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


class ExternalPredictor:
    """Predictor backed by one or more subprocesses speaking the wire protocol.

    ``num_classes`` may be given up front; otherwise it is fixed by the
    first response and enforced afterwards.
    """

    def __init__(self, command, num_classes=None, timeout=30.0, workers=1, env=None):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = float(timeout)
        self.num_classes = num_classes
        self._conns = [_Connection(self.argv, env) for _ in range(max(1, workers))]
        self._lock = threading.Lock()

    def _checked(self, responses):
        vectors = []
        for probs, line in responses:
            with self._lock:
                if self.num_classes is None:
                    self.num_classes = len(probs)
            if len(probs) != self.num_classes:
                raise ProtocolError(f"expected {self.num_classes} probabilities, got {len(probs)}", line)
            try:
                check_probabilities([probs], 1, self.num_classes, SUM_TOLERANCE)
            except ProbabilityError as exc:
                raise ProtocolError(f"probability contract violated ({exc})", line) from None
            vectors.append(probs)
        return vectors

    def predict_proba(self, batch):
        batch = as_batch(batch)
        if len(batch) == 0:
            return np.zeros((0, self.num_classes or 0))
        chunks = np.array_split(np.arange(len(batch)), len(self._conns))
        jobs = [(conn, batch[idx]) for conn, idx in zip(self._conns, chunks) if len(idx)]
        if len(jobs) == 1:
            results = [jobs[0][0].query(jobs[0][1], self.timeout)]
        else:
            with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
                results = list(pool.map(lambda j: j[0].query(j[1], self.timeout), jobs))
        vectors = [v for r in results for v in self._checked(r)]
        return np.array(vectors, dtype=np.float64)

    def close(self):
        for conn in self._conns:
            conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
