"""Websocket telemetry bridge with pause/step/resume session control.

Producers (trainer, controller) call :meth:`VizBridge.publish` from any
thread; it never blocks them. Consoles connect over websockets, receive one
JSON object per text message, and steer a session state machine:

RUNNING -> pause -> PAUSED (eval frames cached, newest 256 kept)
PAUSED -> step -> exactly one cached frame is delivered
PAUSED -> resume -> cache flushed in order, back to RUNNING

train_progress messages bypass the pause cache. Unknown or malformed
commands get a status reply; the connection stays open.
"""

from __future__ import annotations

import asyncio
import json
import queue
import threading
from collections import deque

import websockets
from websockets.asyncio.server import serve as ws_serve

PROTO_VERSION = 1
PAUSE_CACHE_SIZE = 256
HEARTBEAT_S = 5.0
CLIENT_QUEUE_SIZE = 256

RUNNING = "running"
PAUSED = "paused"


class BridgeError(RuntimeError):
    pass


def train_progress_message(snapshot: dict) -> dict:
    """Shapes a trainer metrics snapshot into the wire-protocol field names."""
    return {
        "type": "train_progress",
        "step": snapshot["step"],
        "epoch": snapshot["epoch"],
        "train_loss": snapshot.get("train_loss"),
        "val_loss": snapshot.get("val_loss"),
        "accel_acc": snapshot.get("accel_accuracy"),
        "steer_acc": snapshot.get("steering_accuracy"),
        "steer_within20": snapshot.get("steering_within_20deg"),
    }


class VizBridge:
    """Runs a websocket server on a background thread."""

    def __init__(self, port: int = 8800, host: str = "127.0.0.1",
                 queue_size: int = 1024, heartbeat_s: float = HEARTBEAT_S):
        self._requested_port = port
        self.host = host
        self.port: int | None = None
        self._inbox: queue.Queue = queue.Queue(maxsize=queue_size)
        self._heartbeat_s = heartbeat_s
        self._thread: threading.Thread | None = None
        self._loop: asyncio.AbstractEventLoop | None = None
        self._started = threading.Event()
        self._startup_error: Exception | None = None
        self._state = RUNNING
        self._cache: deque = deque(maxlen=PAUSE_CACHE_SIZE)
        self._clients: set = set()

    # -- lifecycle ------------------------------------------------------

    def start(self) -> "VizBridge":
        if self._thread is not None:
            raise BridgeError("bridge already started")
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        self._started.wait()
        if self._startup_error is not None:
            self._thread.join()
            raise BridgeError(f"bridge failed to start: {self._startup_error}")
        return self

    def stop(self) -> None:
        if self._loop is None:
            return
        self._loop.call_soon_threadsafe(self._stop_event.set)
        self._thread.join(timeout=10)
        self._loop = None
        self._thread = None

    @property
    def running(self) -> bool:
        return self._loop is not None

    # -- producer API ---------------------------------------------------

    def publish(self, message: dict) -> bool:
        """Enqueue a message for broadcast. Wait-free: returns False (and
        drops the message) if the outbound queue is full."""
        if not self.running:
            raise BridgeError("bridge is not running")
        try:
            self._inbox.put_nowait(message)
        except queue.Full:
            return False
        return True

    # -- server internals -------------------------------------------------

    def _run(self):
        asyncio.run(self._main())

    async def _main(self):
        self._stop_event = asyncio.Event()
        try:
            async with ws_serve(self._handle_client, self.host, self._requested_port) as server:
                self.port = sorted(s.getsockname()[1] for s in server.sockets)[0]
                self._loop = asyncio.get_running_loop()
                dispatcher = asyncio.create_task(self._dispatch())
                heart = asyncio.create_task(self._heartbeat())
                self._started.set()
                await self._stop_event.wait()
                dispatcher.cancel()
                heart.cancel()
        except OSError as e:
            self._startup_error = e
            self._started.set()

    def _status(self, **extra) -> dict:
        return {"type": "status", "state": self._state,
                "cached": len(self._cache), **extra}

    def _send(self, client_q: asyncio.Queue, message: dict) -> None:
        try:
            client_q.put_nowait(message)
        except asyncio.QueueFull:
            try:
                client_q.get_nowait()  # drop-oldest for the slow client
            except asyncio.QueueEmpty:
                pass
            client_q.put_nowait(message)

    def _broadcast(self, message: dict) -> None:
        for client_q in self._clients:
            self._send(client_q, message)

    def _inbox_get(self):
        # bounded wait so the executor thread can wind down on stop()
        try:
            return self._inbox.get(timeout=0.25)
        except queue.Empty:
            return None

    async def _dispatch(self):
        loop = asyncio.get_running_loop()
        while True:
            msg = await loop.run_in_executor(None, self._inbox_get)
            if msg is None:
                continue
            if self._state == PAUSED and msg.get("type") == "eval_frame":
                self._cache.append(msg)
            else:
                self._broadcast(msg)

    async def _heartbeat(self):
        while True:
            await asyncio.sleep(self._heartbeat_s)
            self._broadcast(self._status(heartbeat=True))

    def _handle_command(self, raw: str) -> list[dict]:
        """Apply one client command; returns messages to broadcast."""
        try:
            cmd = json.loads(raw)
            ctype = cmd.get("type")
        except (json.JSONDecodeError, AttributeError):
            return [self._status(error="malformed command")]
        if ctype == "hello":
            return [self._status()]
        if ctype == "pause":
            self._state = PAUSED
            return [self._status()]
        if ctype == "step":
            if self._state != PAUSED:
                return [self._status(error="step requires paused state")]
            if not self._cache:
                return [self._status(error="no cached frames")]
            frame = self._cache.popleft()
            return [frame, self._status()]
        if ctype == "resume":
            flushed = list(self._cache)
            self._cache.clear()
            self._state = RUNNING
            return flushed + [self._status()]
        return [self._status(error=f"unknown command type: {ctype!r}")]

    async def _handle_client(self, ws):
        client_q: asyncio.Queue = asyncio.Queue(maxsize=CLIENT_QUEUE_SIZE)
        self._clients.add(client_q)
        writer = asyncio.create_task(self._writer(ws, client_q))
        try:
            await ws.send(json.dumps({"type": "hello", "proto": PROTO_VERSION}))
            async for raw in ws:
                for msg in self._handle_command(raw):
                    self._broadcast(msg) if msg.get("type") != "status" else \
                        self._send(client_q, msg)
        except websockets.ConnectionClosed:
            pass
        finally:
            self._clients.discard(client_q)
            writer.cancel()

    async def _writer(self, ws, client_q: asyncio.Queue):
        try:
            while True:
                msg = await client_q.get()
                await ws.send(json.dumps(msg))
        except (websockets.ConnectionClosed, asyncio.CancelledError):
            pass


def serve(port: int = 8800, host: str = "127.0.0.1") -> VizBridge:
    """Start a bridge and return it once it is accepting connections."""
    return VizBridge(port=port, host=host).start()
