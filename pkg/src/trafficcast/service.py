"""Multi-node streaming service.

Each monitoring point (node) owns a history, a pair of models and a
schedule. Messages are newline-delimited JSON objects; every inbound line
gets exactly one response line. Messages for one node are handled in
arrival order; different nodes never share state.

On disk every node has a directory holding ``history.csv``,
``model.json`` (a bundle model file) and ``state.json``; each file is
replaced atomically after every message that changes it.
"""

from __future__ import annotations

import asyncio
import json
import logging
import math
import re
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path

from .combiner import (
    CombinerSchedule,
    NodeEntry,
    RetrainSettings,
    append_observations,
    default_schedule,
    due_for_retrain,
    predict_hybrid,
    retrain,
)
from .errors import DataError, HistoryGap, MalformedMessage, NumericError, TrafficCastError, UntrainedModel
from .persistence import ModelBundle, load_model, model_to_json
from .series import (
    QUARTER_HOUR,
    TrafficSeries,
    atomic_write_text,
    epoch_seconds,
    format_timestamp,
    parse_timestamp,
    read_series_csv,
    series_to_csv,
)

log = logging.getLogger(__name__)

NODE_ID = re.compile(r"^[A-Za-z0-9_-]{1,64}$")
MAX_LINE = 64 * 1024
KEPT_PREDICTIONS = 100


class UnknownNode(DataError):
    pass


@dataclass
class _Job:
    """A retrain started in the background from a snapshot of one node."""

    snapshot: NodeEntry
    task: asyncio.Future | None = None


def _err(kind: str, reason: str, **extra) -> dict:
    return {"status": "err", "error": kind, "reason": reason, **extra}


def parse_message(line) -> dict:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedMessage("message is not UTF-8") from None
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedMessage(f"not JSON: {exc.msg}") from None
    if not isinstance(msg, dict):
        raise MalformedMessage("message must be a JSON object")
    kind = msg.get("type")
    if kind not in ("obs", "predict", "stats"):
        raise MalformedMessage(f"unknown message type {kind!r}")
    node = msg.get("node")
    if not isinstance(node, str) or not NODE_ID.match(node):
        raise MalformedMessage("node must be 1-64 characters of [A-Za-z0-9_-]")
    if kind in ("obs", "predict"):
        key = "ts" if kind == "obs" else "until"
        if not isinstance(msg.get(key), str):
            raise MalformedMessage(f"{key} must be an ISO-8601 timestamp string")
        try:
            msg[key] = parse_timestamp(msg[key])
        except ValueError:
            raise MalformedMessage(f"{key} is not a valid ISO-8601 timestamp") from None
    if kind == "obs":
        count = msg.get("count")
        if isinstance(count, bool) or not isinstance(count, (int, float)) or not math.isfinite(count) or count < 0:
            raise MalformedMessage("count must be a finite non-negative number")
        if epoch_seconds(msg["ts"]) % QUARTER_HOUR:
            raise MalformedMessage("ts must fall on a 15-minute mark")
    return msg


class NodeRegistry:
    """All nodes of one service instance.

    With ``sync_retrain`` a due retrain runs inside the ``obs`` call that
    triggered it, which keeps replays deterministic. Otherwise the caller
    collects pending jobs with :meth:`take_jobs` and finishes them with
    :meth:`finish_retrain`.
    """

    def __init__(
        self,
        settings: RetrainSettings = RetrainSettings(),
        schedule: CombinerSchedule | None = None,
        data_dir=None,
        sync_retrain: bool = True,
    ):
        self.settings = settings
        self.schedule = schedule or default_schedule()
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self.sync_retrain = sync_retrain
        self.entries: dict[str, NodeEntry] = {}
        self.predictions: dict[str, deque] = {}
        self._jobs: dict[str, _Job] = {}
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._load_all()

    # -- persistence -------------------------------------------------------

    def _node_dir(self, node: str) -> Path:
        return self.data_dir / node

    def _persist(self, entry: NodeEntry, models_changed: bool) -> None:
        if self.data_dir is None:
            return
        folder = self._node_dir(entry.node_id)
        folder.mkdir(exist_ok=True)
        if models_changed and entry.trained:
            bundle = ModelBundle(entry.lstm, entry.arima, entry.schedule, entry.version, {"node": entry.node_id})
            atomic_write_text(folder / "model.json", model_to_json(bundle))
        if entry.history is not None:
            atomic_write_text(folder / "history.csv", series_to_csv(entry.history))
        state = {
            "version": entry.version,
            "pending": entry.pending,
            "last_retrain": format_timestamp(entry.last_retrain) if entry.last_retrain else None,
            "schedule": entry.schedule.to_dict(),
        }
        atomic_write_text(folder / "state.json", json.dumps(state, sort_keys=True) + "\n")

    def _load_all(self) -> None:
        for folder in sorted(p for p in self.data_dir.iterdir() if p.is_dir() and NODE_ID.match(p.name)):
            state_path = folder / "state.json"
            if not state_path.exists():
                continue
            state = json.loads(state_path.read_text(encoding="utf-8"))
            history = read_series_csv(folder / "history.csv") if (folder / "history.csv").exists() else None
            entry = NodeEntry(
                folder.name,
                history=history,
                schedule=CombinerSchedule.from_dict(state["schedule"]),
                version=state["version"],
                last_retrain=parse_timestamp(state["last_retrain"]) if state["last_retrain"] else None,
                pending=state["pending"],
            )
            if (folder / "model.json").exists():
                bundle = load_model(folder / "model.json")
                entry = replace(entry, lstm=bundle.lstm, arima=bundle.arima, version=bundle.version)
            self.entries[folder.name] = entry

    # -- message handling --------------------------------------------------

    def handle_line(self, line) -> dict:
        """Answer one raw protocol line; never raises for bad input."""
        try:
            msg = parse_message(line)
        except MalformedMessage as exc:
            text = line.decode("utf-8", "replace") if isinstance(line, bytes) else str(line)
            return _err("MalformedMessage", str(exc), echo=text.rstrip("\n")[:200])
        return self.handle_message(msg)

    def handle_message(self, msg: dict) -> dict:
        head = {"type": msg["type"], "node": msg["node"]}
        try:
            if msg["type"] == "obs":
                body = self._obs(msg["node"], msg["ts"], float(msg["count"]))
            elif msg["type"] == "predict":
                body = self._predict(msg["node"], msg["until"])
            else:
                body = self._stats(msg["node"])
        except HistoryGap as exc:
            return {**head, **_err("HistoryGap", str(exc))}
        except (DataError, NumericError) as exc:
            return {**head, **_err(type(exc).__name__, str(exc))}
        return {**head, "status": "ok", **body}

    def _obs(self, node: str, ts, count: float) -> dict:
        entry = self.entries.get(node) or NodeEntry(node, schedule=self.schedule)
        entry = append_observations(entry, TrafficSeries(ts, QUARTER_HOUR, [count]))
        retrained = False
        if due_for_retrain(entry, self.settings) and node not in self._jobs:
            if self.sync_retrain:
                entry = retrain(entry, self.settings)
                retrained = True
            else:
                self._jobs[node] = _Job(entry)
        self.entries[node] = entry
        self._persist(entry, models_changed=retrained)
        return {"version": entry.version, "retrained": retrained}

    def _predict(self, node: str, until) -> dict:
        entry = self.entries.get(node)
        if entry is None or not entry.trained:
            raise UntrainedModel(f"node {node} has no trained model yet")
        fc = predict_hybrid(entry.lstm, entry.arima, entry.schedule, entry.history, until)
        points = [
            {"ts": format_timestamp(p.timestamp), "value": p.value, "source": p.source, "interval": p.interval}
            for p in fc.points
        ]
        # retained for inspection; models are trained on observations only
        self.predictions.setdefault(node, deque(maxlen=KEPT_PREDICTIONS)).append(
            (format_timestamp(entry.history.end), entry.version, points)
        )
        return {"version": entry.version, "points": points}

    def _stats(self, node: str) -> dict:
        entry = self.entries.get(node)
        if entry is None:
            raise UnknownNode(f"node {node} has not sent any observation")
        hist = entry.history
        return {
            "version": entry.version,
            "history": [format_timestamp(hist.start), format_timestamp(hist.end)] if hist is not None else None,
            "observations": len(hist) if hist is not None else 0,
            "pending": entry.pending,
            "dropout_p": entry.lstm.dropout_p if entry.lstm is not None else None,
            "last_retrain": format_timestamp(entry.last_retrain) if entry.last_retrain else None,
            "retraining": node in self._jobs,
        }

    # -- background retraining -----------------------------------------------

    def take_jobs(self) -> list[tuple[str, NodeEntry]]:
        """Snapshots waiting for a worker; each is handed out once."""
        out = []
        for node, job in self._jobs.items():
            if job.task is None:
                job.task = True
                out.append((node, job.snapshot))
        return out

    def finish_retrain(self, node: str, trained: NodeEntry | None) -> None:
        """Swap a finished retrain into the live entry (``None`` if it failed)."""
        job = self._jobs.pop(node)
        if trained is None:
            return
        live = self.entries[node]
        swapped = replace(
            live,
            lstm=trained.lstm,
            arima=trained.arima,
            version=trained.version,
            last_retrain=trained.last_retrain,
            pending=live.pending - job.snapshot.pending,
        )
        self.entries[node] = swapped
        self._persist(swapped, models_changed=True)


# -- asyncio server -----------------------------------------------------------


class Service:
    def __init__(self, registry: NodeRegistry):
        self.registry = registry
        self._workers: set[asyncio.Task] = set()

    def _spawn_retrains(self) -> None:
        loop = asyncio.get_running_loop()
        for node, snapshot in self.registry.take_jobs():
            task = loop.create_task(self._retrain(node, snapshot))
            self._workers.add(task)
            task.add_done_callback(self._workers.discard)

    async def _retrain(self, node: str, snapshot: NodeEntry) -> None:
        loop = asyncio.get_running_loop()
        try:
            trained = await loop.run_in_executor(None, retrain, snapshot, self.registry.settings)
        except TrafficCastError as exc:
            log.warning("retrain of %s failed: %s", node, exc)
            trained = None
        self.registry.finish_retrain(node, trained)

    def respond(self, line: bytes) -> bytes:
        reply = self.registry.handle_line(line)
        self._spawn_retrains()
        return (json.dumps(reply, sort_keys=True) + "\n").encode("utf-8")

    async def handle_client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                try:
                    line = await reader.readline()
                except ValueError:
                    # line longer than the stream limit; the reader has discarded it
                    writer.write((json.dumps(_err("MalformedMessage", "line too long")) + "\n").encode())
                    await writer.drain()
                    continue
                if not line:
                    break
                if not line.strip():
                    continue
                writer.write(self.respond(line))
                await writer.drain()
        except ConnectionError:
            pass
        finally:
            writer.close()

    async def drain_retrains(self) -> None:
        while self._workers:
            await asyncio.gather(*list(self._workers))

    async def serve(self, host: str, port: int, ready=None) -> None:
        server = await asyncio.start_server(self.handle_client, host, port, limit=MAX_LINE)
        if ready is not None:
            ready(server.sockets[0].getsockname())
        async with server:
            await server.serve_forever()
