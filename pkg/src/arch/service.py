"""Network service exposing the live workcell for demonstration collection:
snapshot/scene endpoints, serialized primitive execution, trial recording
with JSONL persistence, and a WebSocket stream of state frames and primitive
lifecycle events."""

from __future__ import annotations

import asyncio
import os
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, WebSocket, WebSocketDisconnect
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .policy_high import Demonstration, DemoStep, HistoryWindow, featurize_frame, save_demos
from .primitives import ExecContext, PrimitiveCall, dispatch
from .scenes import SceneSpec
from .workcell import Workcell

STATE_SCHEMA = "arch-state-1"
STREAM_HZ = 20.0


class NotRecording(RuntimeError):
    """record_step called outside an active recording."""


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return [float(v) for v in x]
    return x


class Session:
    """Single-owner workcell session: one environment, one recording buffer,
    at most one executing primitive. All mutation happens under the lock;
    the stream reads snapshots."""

    def __init__(self, scene: SceneSpec, insert_policy=None, seed: int = 0,
                 data_dir=None, target: str | None = None):
        self.scene = scene
        self.insert_policy = insert_policy
        self.target = target
        self.data_dir = Path(data_dir or os.environ.get("ARCH_DATA_DIR", "."))
        self.lock = threading.Lock()
        self.ctx = ExecContext(insert_policy=insert_policy)
        self.mode = "idle"  # idle | awaiting_selection | executing
        self.label = "successful"
        self.steps: list[DemoStep] = []
        self.events: list[dict] = []
        self._event_seq = 0
        self.trial_counter = 0
        self.clients = 0
        self._reset_env(seed)

    # -- internals ---------------------------------------------------------

    def _reset_env(self, seed: int) -> None:
        self.seed = int(seed)
        self.env = Workcell(self.scene, seed=self.seed, target=self.target)
        self.history = HistoryWindow()
        self.prev_id: int | None = None
        self.prev_success = False

    def _emit(self, event: dict) -> None:
        self._event_seq += 1
        self.events.append({"seq": self._event_seq, **event})

    # -- queries -----------------------------------------------------------

    def state_frame(self) -> dict:
        with self.lock:
            env = self.env
            obs = env.observe()
            state = env.state
            return {
                "schema": STATE_SCHEMA,
                "mode": self.mode,
                "seed": self.seed,
                "time": float(state.time),
                "step_count": int(state.step_count),
                "ee": _jsonable(state.ee),
                "gripper": state.gripper,
                "attached": state.attached,
                "ft": _jsonable(env.last_ft.as_vector()),
                "objects": {
                    name: {
                        "q": _jsonable(q),
                        "upright": bool(state.object_upright[name]),
                        "estimate": _jsonable(obs.object_estimates[name]),
                    }
                    for name, q in sorted(state.object_q.items())
                },
                "holes": {name: _jsonable(q) for name, q in sorted(obs.hole_q.items())},
                "fixture": _jsonable(obs.fixture_q),
                "target": env.target,
                "recording": {"label": self.label, "steps": len(self.steps)},
                "inserted": bool(env.check_inserted()),
            }

    def drain_events(self, after: int) -> list[dict]:
        with self.lock:
            return [e for e in self.events if e["seq"] > after]

    # -- commands ----------------------------------------------------------

    def start_primitive(self, call: PrimitiveCall) -> bool:
        """Begin executing; False when a primitive is already running."""
        with self.lock:
            if self.mode == "executing":
                return False
            self.mode = "executing"
            self._emit({"type": "primitive_started", "call": call.to_json()})
        thread = threading.Thread(target=self._run, args=(call,), daemon=True)
        thread.start()
        return True

    def _run(self, call: PrimitiveCall) -> None:
        obs = self.env.observe()
        frame = featurize_frame(obs, self.env.target, self.env.geom.board_xy,
                                self.prev_id, self.prev_success)
        self.history.push(frame)
        vec = self.history.vector()
        result = dispatch(self.env, call, self.ctx)
        with self.lock:
            self.record_step(vec, call, result)
            self.prev_id, self.prev_success = int(call.id), result.success
            self.mode = "awaiting_selection"
            self._emit({"type": "primitive_finished", "call": call.to_json(),
                        "status": result.status, "reason": result.failure_reason,
                        "steps_used": result.steps_used,
                        "inserted": bool(self.env.check_inserted())})

    def record_step(self, obs_vec, call: PrimitiveCall, result) -> None:
        """Append one demonstration step; the stored parameter is the value
        actually executed (pose-estimation pass-through provenance)."""
        if self.mode != "executing":
            raise NotRecording("no primitive execution to record")
        self.steps.append(DemoStep(np.asarray(obs_vec, dtype=float), call,
                                   result.status))

    def reset(self, seed: int) -> None:
        with self.lock:
            if self.mode == "executing":
                raise RuntimeError("executing")
            self._reset_env(seed)
            self.steps = []
            self.mode = "idle"
            self._emit({"type": "reset", "seed": self.seed})

    def set_label(self, label: str) -> None:
        if label not in ("successful", "recovery"):
            raise ValueError(f"bad label {label!r}")
        with self.lock:
            self.label = label

    def save_trial(self) -> dict:
        with self.lock:
            if self.mode == "executing":
                raise RuntimeError("executing")
            if not self.steps:
                raise ValueError("no steps recorded")
            demo = Demonstration(self.trial_counter, self.label, self.steps)
            self.data_dir.mkdir(parents=True, exist_ok=True)
            path = self.data_dir / f"trial_{self.trial_counter:04d}.jsonl"
            save_demos(path, [demo])
            self._emit({"type": "trial_saved", "trial": self.trial_counter,
                        "path": str(path)})
            self.trial_counter += 1
            self.steps = []
            return {"trial": demo.trial, "path": str(path)}

    def discard_trial(self) -> int:
        with self.lock:
            if self.mode == "executing":
                raise RuntimeError("executing")
            n = len(self.steps)
            self.steps = []
            self._emit({"type": "trial_discarded", "steps": n})
            return n


def build_app(scene: SceneSpec, insert_policy=None, seed: int = 0,
              data_dir=None, target: str | None = None,
              ui_dir=None) -> FastAPI:
    app = FastAPI(title="arch workcell service")
    session = Session(scene, insert_policy, seed=seed, data_dir=data_dir,
                      target=target)
    app.state.session = session

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/state")
    def get_state():
        return session.state_frame()

    @app.get("/scene")
    def get_scene():
        return session.scene.to_json()

    @app.post("/primitive", status_code=202)
    async def post_primitive(request: Request):
        try:
            body = await request.json()
            call = PrimitiveCall.from_json(body)
        except Exception as exc:  # malformed JSON or bad call fields
            return JSONResponse(status_code=400, content={"error": str(exc)})
        if not session.start_primitive(call):
            return JSONResponse(status_code=409,
                                content={"error": "a primitive is executing"})
        return {"accepted": call.to_json()}

    @app.post("/reset")
    async def post_reset(request: Request):
        try:
            body = await request.json()
            seed_v = int(body.get("seed", 0))
        except Exception as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        try:
            session.reset(seed_v)
        except RuntimeError:
            return JSONResponse(status_code=409,
                                content={"error": "a primitive is executing"})
        return {"seed": seed_v}

    @app.post("/trial/label")
    async def post_label(request: Request):
        try:
            body = await request.json()
            session.set_label(body["label"])
        except Exception as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        return {"label": session.label}

    @app.post("/trial/save")
    async def post_save():
        try:
            return session.save_trial()
        except RuntimeError:
            return JSONResponse(status_code=409,
                                content={"error": "a primitive is executing"})
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.post("/trial/discard")
    async def post_discard():
        try:
            return {"discarded": session.discard_trial()}
        except RuntimeError:
            return JSONResponse(status_code=409,
                                content={"error": "a primitive is executing"})

    @app.websocket("/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        session.clients += 1
        last_seq = 0
        try:
            while True:
                await ws.send_json({"type": "state",
                                    "frame": session.state_frame()})
                for event in session.drain_events(last_seq):
                    last_seq = event["seq"]
                    await ws.send_json({"type": "event", "event": event})
                await asyncio.sleep(1.0 / STREAM_HZ)
        except WebSocketDisconnect:
            pass
        finally:
            session.clients -= 1

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def serve(scene: SceneSpec, insert_policy=None, host: str = "127.0.0.1",
          port: int = 8800, **kwargs) -> None:
    """Run the service until interrupted."""
    import uvicorn

    app = build_app(scene, insert_policy, **kwargs)
    uvicorn.run(app, host=host, port=port, log_level="warning")
