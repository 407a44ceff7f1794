"""Adapter for an external navigator speaking newline-delimited JSON.

Each step sends one request line ``{"episode_id", "step", "prompt"}`` and expects
one response line ``{"action": "finished" | "<viewpoint_id>", "thought": "..."}``.
Endpoints are ``cmd:<command line>`` (subprocess over stdio) or ``tcp:<host>:<port>``.
"""

from __future__ import annotations

import json
import queue
import shlex
import socket
import subprocess
import sys
import threading
from typing import Callable, TextIO

from .errors import InvalidAction, InvalidConfig, PolicyTimeout, ProtocolError
from .navigator import FINISHED, AgentState, Decision

_EOF = object()


class SubprocessChannel:
    def __init__(self, command: str):
        self.proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def send(self, line: str) -> None:
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"navigator process is gone: {exc}") from exc

    def recv(self, timeout: float) -> str:
        try:
            item = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise PolicyTimeout(f"no response within {timeout:g} s") from None
        if item is _EOF:
            self._lines.put(_EOF)
            raise ProtocolError("navigator closed its output stream")
        return item

    def close(self) -> None:
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=1)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class TcpChannel:
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ProtocolError(f"cannot connect to {host}:{port}: {exc}") from exc
        self.file = self.sock.makefile("rw", encoding="utf-8", newline="\n")

    def send(self, line: str) -> None:
        try:
            self.file.write(line + "\n")
            self.file.flush()
        except OSError as exc:
            raise ProtocolError(f"send failed: {exc}") from exc

    def recv(self, timeout: float) -> str:
        self.sock.settimeout(timeout)
        try:
            line = self.file.readline()
        except socket.timeout:
            raise PolicyTimeout(f"no response within {timeout:g} s") from None
        except OSError as exc:
            raise ProtocolError(f"receive failed: {exc}") from exc
        if not line:
            raise ProtocolError("navigator closed the connection")
        return line

    def close(self) -> None:
        for obj in (self.file, self.sock):
            try:
                obj.close()
            except OSError:
                pass


def open_channel(endpoint: str, timeout: float):
    kind, _, rest = endpoint.partition(":")
    if kind == "cmd" and rest:
        return SubprocessChannel(rest)
    if kind == "tcp" and rest:
        host, _, port = rest.rpartition(":")
        try:
            return TcpChannel(host or "127.0.0.1", int(port), timeout)
        except ValueError:
            raise InvalidConfig(f"bad tcp endpoint {endpoint!r}") from None
    raise InvalidConfig(f"unknown remote endpoint {endpoint!r} (use cmd:<command> or tcp:<host>:<port>)")


def parse_response(line: str) -> Decision:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"response is not JSON: {line.strip()[:80]!r}") from exc
    if not isinstance(msg, dict) or not isinstance(msg.get("action"), str):
        raise ProtocolError("response must be an object with a string 'action'")
    thought = msg.get("thought")
    if thought is not None and not isinstance(thought, str):
        raise ProtocolError("'thought' must be a string")
    return Decision(msg["action"], thought)


class RemotePolicy:
    """One connection per episode; opened on the first step, closed by `close()`."""

    def __init__(self, endpoint: str, episode_id: str = "", timeout: float = 60.0):
        self.endpoint = endpoint
        self.episode_id = episode_id
        self.timeout = timeout
        self._channel = None

    def act(self, state: AgentState) -> Decision:
        if self._channel is None:
            self._channel = open_channel(self.endpoint, self.timeout)
        request = {"episode_id": self.episode_id, "step": state.step, "prompt": state.prompt}
        self._channel.send(json.dumps(request))
        decision = parse_response(self._channel.recv(self.timeout))
        if decision.action != FINISHED and decision.action not in state.observation.navigable_ids:
            raise InvalidAction(f"navigator chose {decision.action!r}, which was not presented")
        return decision

    def close(self) -> None:
        if self._channel is not None:
            self._channel.close()
            self._channel = None


def serve(handler: Callable[[dict], dict], stdin: TextIO = sys.stdin, stdout: TextIO = sys.stdout) -> None:
    """Minimal server loop for writing a stdio navigator in Python."""
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(json.dumps(handler(json.loads(line))) + "\n")
        stdout.flush()
