"""Teleoperation server: the sim loop on one thread, WebSocket I/O beside it.

The simulation thread owns all state and communicates with the network
layer only through an inbound command queue and per-client outbound
queues. State messages go out every tick; PNG preview frames every third
tick. The browser UI (a static bundle, if present) is served from the
same process.
"""

from __future__ import annotations

import asyncio
import json
import os
import queue
import threading
import time

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse
from fastapi.staticfiles import StaticFiles

from .scene import load_scene
from .sim import PREVIEW_EVERY, ProtocolError, SimConfig, Simulator, encode_preview, handle_command

OUTBOUND_QUEUE_LIMIT = 64


class ClientHub:
    """Fan-out from the sim thread to websocket clients (thread -> loop bridge)."""

    def __init__(self):
        self._clients: dict[int, tuple[asyncio.AbstractEventLoop, asyncio.Queue]] = {}
        self._next_id = 0
        self._lock = threading.Lock()

    def register(self, loop: asyncio.AbstractEventLoop) -> tuple[int, asyncio.Queue]:
        q: asyncio.Queue = asyncio.Queue(maxsize=OUTBOUND_QUEUE_LIMIT)
        with self._lock:
            cid = self._next_id
            self._next_id += 1
            self._clients[cid] = (loop, q)
        return cid, q

    def unregister(self, cid: int) -> None:
        with self._lock:
            self._clients.pop(cid, None)

    def publish(self, message: dict) -> None:
        """Called from the sim thread; slow clients drop frames, never block."""
        text = json.dumps(message)
        with self._lock:
            clients = list(self._clients.values())
        for loop, q in clients:
            def _offer(q=q, text=text):
                if q.full():
                    try:
                        q.get_nowait()
                    except asyncio.QueueEmpty:
                        pass
                q.put_nowait(text)

            loop.call_soon_threadsafe(_offer)


class SimLoop(threading.Thread):
    """Fixed-rate driver for a Simulator; wall-clock pacing is best effort,
    sim time always comes from the tick counter."""

    def __init__(self, sim: Simulator, hub: ClientHub, realtime: bool = True):
        super().__init__(name="sim-loop", daemon=True)
        self.sim = sim
        self.hub = hub
        self.realtime = realtime
        self.inbound: queue.Queue = queue.Queue()
        self._stop_requested = threading.Event()

    def stop(self) -> None:
        self._stop_requested.set()

    def run(self) -> None:
        period = self.sim.dt
        next_deadline = time.monotonic() + period
        while not self._stop_requested.is_set():
            commands = []
            while True:
                try:
                    commands.append(self.inbound.get_nowait())
                except queue.Empty:
                    break
            self.sim.tick(commands)
            self.hub.publish(self.sim.state_message())
            if self.sim.tick_count % PREVIEW_EVERY == 0:
                try:
                    self.hub.publish(encode_preview(self.sim))
                except Exception as e:
                    self.sim.hud_error(f"preview failed: {e}")
            if self.realtime:
                now = time.monotonic()
                delay = next_deadline - now
                if delay > 0:
                    time.sleep(delay)
                    next_deadline += period
                else:
                    next_deadline = now + period
        if self.sim.recorder.is_open:
            self.sim.recorder.end()


_FALLBACK_PAGE = """<!doctype html>
<html><head><title>robosynth</title></head>
<body style="font-family: monospace; background: #111; color: #ddd">
<h2>robosynth teleoperation server</h2>
<p>No UI bundle found. Connect a client to <code>ws://&lt;host&gt;/ws</code>,
or build the frontend (see README) and pass --ui-dir.</p>
</body></html>"""


def create_app(sim: Simulator, ui_dir: str | None = None, realtime: bool = True) -> FastAPI:
    from contextlib import asynccontextmanager

    hub = ClientHub()
    loop_thread = SimLoop(sim, hub, realtime=realtime)

    @asynccontextmanager
    async def lifespan(_app):
        loop_thread.start()
        yield
        loop_thread.stop()
        loop_thread.join(timeout=5.0)

    app = FastAPI(title="robosynth", lifespan=lifespan)
    app.state.sim = sim
    app.state.hub = hub
    app.state.loop_thread = loop_thread

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        loop = asyncio.get_running_loop()
        cid, outq = hub.register(loop)

        async def pump_out():
            while True:
                text = await outq.get()
                await ws.send_text(text)

        sender = asyncio.create_task(pump_out())
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError as e:
                    await ws.send_text(
                        json.dumps({"type": "error", "detail": f"bad JSON: {e}"})
                    )
                    continue
                try:
                    cmd = handle_command(msg)
                except ProtocolError as e:
                    await ws.send_text(json.dumps({"type": "error", "detail": str(e)}))
                    continue
                loop_thread.inbound.put(cmd)
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            hub.unregister(cid)

    index_html = None
    if ui_dir and os.path.isdir(ui_dir):
        index_path = os.path.join(ui_dir, "index.html")
        if os.path.isfile(index_path):
            with open(index_path, "r", encoding="utf-8") as fh:
                index_html = fh.read()
        app.mount("/static", StaticFiles(directory=ui_dir), name="static")

    @app.get("/", response_class=HTMLResponse)
    async def root():
        return HTMLResponse(index_html or _FALLBACK_PAGE)

    return app


def default_ui_dir() -> str | None:
    """Locate the built frontend bundle next to a source checkout, if any."""
    here = os.path.dirname(os.path.abspath(__file__))
    for up in (3, 4):
        cand = os.path.join(here, *[".."] * up, "frontend", "dist")
        cand = os.path.normpath(cand)
        if os.path.isdir(cand):
            return cand
    return None


def serve(
    scene_path: str,
    port: int = 8700,
    host: str = "127.0.0.1",
    tick_hz: float = 30.0,
    record_dir: str | None = None,
    ui_dir: str | None = None,
) -> None:
    import uvicorn

    scene = load_scene(scene_path)
    sim = Simulator(
        scene,
        SimConfig(tick_hz=tick_hz, scene_ref=scene_path, record_dir=record_dir),
    )
    app = create_app(sim, ui_dir=ui_dir or default_ui_dir())
    uvicorn.run(app, host=host, port=port, log_level="info")
