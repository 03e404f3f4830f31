"""Client side of the LM bridge wire protocol.

A bridge is a subprocess speaking newline-delimited JSON over its standard
streams. Handshake: the client sends {"op":"hello","protocol":1} and the
server replies with its dimension, vocabulary fingerprint, and name. Each
step request carries the token-id prefix; the reply carries the context
vector and full next-token log probabilities. Requests are serialized, one
in flight per connection.
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
import threading
from typing import Sequence

import numpy as np

from .lm import LmStepOutput
from .vocab import Vocabulary

PROTOCOL_VERSION = 1


class BridgeTransportError(RuntimeError):
    """Bridge process is unreachable or broke the protocol."""


class BridgeConfigError(ValueError):
    """Bridge is reachable but incompatible (fingerprint/dimension mismatch)."""


class BridgeLm:
    """LM handle backed by a bridge subprocess."""

    def __init__(self, command: str, vocab: Vocabulary):
        self.vocab = vocab
        self._lock = threading.Lock()
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise BridgeTransportError(f"cannot start bridge process: {e}") from e
        hello = self._roundtrip({"op": "hello", "protocol": PROTOCOL_VERSION})
        if hello.get("op") != "hello":
            raise BridgeTransportError(f"unexpected handshake reply: {hello}")
        try:
            self.dim = int(hello["d"])
            self.name = str(hello.get("name", "bridge"))
            fingerprint = str(hello["vocab_fingerprint"])
        except (KeyError, TypeError, ValueError) as e:
            raise BridgeTransportError(f"malformed handshake reply: {hello}") from e
        if fingerprint != vocab.fingerprint:
            raise BridgeConfigError(
                "bridge vocabulary fingerprint does not match the loaded vocabulary"
            )

    def _roundtrip(self, request: dict) -> dict:
        with self._lock:
            if self._proc.poll() is not None:
                raise BridgeTransportError("bridge process has exited")
            try:
                self._proc.stdin.write(json.dumps(request) + "\n")
                self._proc.stdin.flush()
                line = self._proc.stdout.readline()
            except (BrokenPipeError, OSError) as e:
                raise BridgeTransportError(f"bridge transport failure: {e}") from e
        if not line:
            raise BridgeTransportError("bridge closed the connection")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as e:
            raise BridgeTransportError(f"bridge sent invalid JSON: {line!r}") from e
        if not isinstance(reply, dict):
            raise BridgeTransportError(f"bridge sent a non-object frame: {reply!r}")
        if reply.get("op") == "error":
            raise BridgeTransportError(f"bridge error: {reply.get('message', '?')}")
        return reply

    def step(self, prefix: Sequence[int]) -> LmStepOutput:
        for t in prefix:
            self.vocab.check_id(t)
        reply = self._roundtrip({"op": "step", "prefix": list(prefix)})
        if reply.get("op") != "step":
            raise BridgeTransportError(f"unexpected step reply: {reply}")
        try:
            vec = np.asarray(reply["context_vector"], dtype=np.float64)
            logprobs = np.asarray(reply["logprobs"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise BridgeTransportError(f"malformed step reply: {reply}") from e
        if vec.shape != (self.dim,):
            raise BridgeTransportError(
                f"bridge sent a context vector of dimension {vec.shape}, expected {self.dim}"
            )
        if logprobs.shape != (len(self.vocab),):
            raise BridgeTransportError(
                f"bridge sent {logprobs.shape} logprobs, expected {len(self.vocab)}"
            )
        norm = math.sqrt(float(vec @ vec))
        if abs(norm - 1.0) > 1e-5:
            raise BridgeTransportError(
                f"bridge context vector is not unit-norm (|v| = {norm})"
            )
        return LmStepOutput(context_vector=vec, probs=np.exp(logprobs))

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
            proc.wait(timeout=5)
        except Exception:
            proc.kill()

    def __enter__(self) -> "BridgeLm":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
