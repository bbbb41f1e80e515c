from __future__ import annotations

import asyncio
import json
from datetime import timedelta

import pytest

from trafficcast.combiner import RetrainSettings
from trafficcast.datagen import GenSpec, generate
from trafficcast.series import format_timestamp
from trafficcast.service import MAX_LINE, NodeRegistry, Service, parse_message

from conftest import QUICK_RETRAIN, obs_lines


@pytest.fixture(scope="module")
def streams():
    return {name: generate(GenSpec(days=3, seed=seed))[0] for name, seed in (("A", 11), ("B", 12))}


def predict_line(node, until):
    return json.dumps({"type": "predict", "node": node, "until": format_timestamp(until)})


def replay(registry, lines):
    return [registry.handle_line(line) for line in lines]


class TestMessages:
    def test_first_contact_registers(self):
        reg = NodeRegistry(QUICK_RETRAIN)
        reply = reg.handle_line('{"type":"obs","node":"n-1","ts":"2018-01-01T00:00:00Z","count":12}')
        assert reply == {"type": "obs", "node": "n-1", "status": "ok", "version": 0, "retrained": False}
        stats = reg.handle_line('{"type":"stats","node":"n-1"}')
        assert stats["status"] == "ok" and stats["observations"] == 1 and stats["dropout_p"] is None

    def test_predict_before_training(self):
        reg = NodeRegistry(QUICK_RETRAIN)
        reg.handle_line('{"type":"obs","node":"a","ts":"2018-01-01T00:00:00Z","count":12}')
        reply = reg.handle_line('{"type":"predict","node":"a","until":"2018-01-01T05:00:00Z"}')
        assert reply["status"] == "err" and reply["error"] == "UntrainedModel"
        reply = reg.handle_line('{"type":"predict","node":"zz","until":"2018-01-01T05:00:00Z"}')
        assert reply["error"] == "UntrainedModel"

    def test_stats_for_unknown_node(self):
        reply = NodeRegistry(QUICK_RETRAIN).handle_line('{"type":"stats","node":"ghost"}')
        assert reply["status"] == "err" and reply["error"] == "UnknownNode"

    def test_gap_is_reported(self):
        reg = NodeRegistry(QUICK_RETRAIN)
        reg.handle_line('{"type":"obs","node":"a","ts":"2018-01-01T00:00:00Z","count":1}')
        reply = reg.handle_line('{"type":"obs","node":"a","ts":"2018-01-01T01:00:00Z","count":1}')
        assert reply["status"] == "err" and reply["error"] == "HistoryGap"
        assert "2018-01-01T00:15:00Z" in reply["reason"]
        ok = reg.handle_line('{"type":"obs","node":"a","ts":"2018-01-01T00:15:00Z","count":1}')
        assert ok["status"] == "ok"

    @pytest.mark.parametrize(
        "line",
        [
            "not json",
            "[1, 2]",
            '{"type":"dance","node":"a"}',
            '{"type":"stats","node":"has space"}',
            '{"type":"stats","node":"' + "x" * 65 + '"}',
            '{"type":"obs","node":"a","ts":"yesterday","count":1}',
            '{"type":"obs","node":"a","ts":"2018-01-01T00:07:00Z","count":1}',
            '{"type":"obs","node":"a","ts":"2018-01-01T00:00:00Z","count":-1}',
            '{"type":"obs","node":"a","ts":"2018-01-01T00:00:00Z","count":true}',
            '{"type":"obs","node":"a","ts":"2018-01-01T00:00:00Z"}',
            '{"type":"predict","node":"a"}',
            b"\xff\xfe",
        ],
    )
    def test_malformed_lines_are_answered(self, line):
        reply = NodeRegistry(QUICK_RETRAIN).handle_line(line)
        assert reply["status"] == "err" and reply["error"] == "MalformedMessage"
        assert reply["reason"] and "echo" in reply

    def test_parse_converts_timestamps(self):
        msg = parse_message('{"type":"predict","node":"a","until":"2018-01-02T00:00:00Z"}')
        assert msg["until"].year == 2018


class TestLifecycle:
    def test_retrain_then_predict(self, streams):
        reg = NodeRegistry(QUICK_RETRAIN)
        replies = replay(reg, obs_lines("A", streams["A"], 0, 192))
        assert [r["retrained"] for r in replies].count(True) == 1
        assert replies[-1]["version"] == 1
        end = streams["A"].start + timedelta(days=2, hours=9)
        reply = reg.handle_line(predict_line("A", end))
        assert reply["status"] == "ok" and reply["version"] == 1
        sources = [p["source"] for p in reply["points"]]
        assert sources == ["SDLSTM"] * 5 + ["ARIMA"] * 12 + ["SDLSTM"]
        assert len(reg.predictions["A"]) == 1
        stats = reg.handle_line('{"type":"stats","node":"A"}')
        assert stats["version"] == 1 and 0.05 <= stats["dropout_p"] <= 0.5

    def test_isolation_two_nodes(self, streams):
        a, b = obs_lines("A", streams["A"], 0, 200), obs_lines("B", streams["B"], 0, 200)
        until = streams["A"].start + timedelta(days=2, hours=14)
        mixed = NodeRegistry(QUICK_RETRAIN)
        for la, lb in zip(a, b):
            mixed.handle_line(la)
            mixed.handle_line(lb)
        alone = NodeRegistry(QUICK_RETRAIN)
        replay(alone, a)
        assert mixed.handle_line(predict_line("A", until)) == alone.handle_line(predict_line("A", until))

    def test_restart_from_disk(self, streams, tmp_path):
        lines = obs_lines("A", streams["A"], 0, 210)
        until = streams["A"].start + timedelta(days=2, hours=20)
        first = NodeRegistry(QUICK_RETRAIN, data_dir=tmp_path)
        replay(first, lines)
        before = first.handle_line(predict_line("A", until))
        assert sorted(p.name for p in (tmp_path / "A").iterdir()) == ["history.csv", "model.json", "state.json"]
        second = NodeRegistry(QUICK_RETRAIN, data_dir=tmp_path)
        after = second.handle_line(predict_line("A", until))
        assert after == before
        assert second.entries["A"].pending == first.entries["A"].pending

    def test_async_swap(self, streams):
        reg = NodeRegistry(QUICK_RETRAIN, sync_retrain=False)
        replies = replay(reg, obs_lines("A", streams["A"], 0, 192))
        assert replies[-1]["version"] == 0 and not replies[-1]["retrained"]
        jobs = reg.take_jobs()
        assert [node for node, _ in jobs] == ["A"] and reg.take_jobs() == []
        # serving continues while the job is out
        reg.handle_line(obs_lines("A", streams["A"], 192, 193)[0])
        assert reg.handle_line('{"type":"stats","node":"A"}')["retraining"] is True
        from trafficcast.combiner import retrain

        reg.finish_retrain("A", retrain(jobs[0][1], reg.settings))
        entry = reg.entries["A"]
        assert entry.version == 1 and entry.trained and entry.pending == 1
        assert len(entry.history) == 193


# -- over a real socket -------------------------------------------------------------


async def _session(service, lines):
    server = await asyncio.start_server(service.handle_client, "127.0.0.1", 0, limit=MAX_LINE)
    port = server.sockets[0].getsockname()[1]
    async with server:
        reader, writer = await asyncio.open_connection("127.0.0.1", port, limit=4 * MAX_LINE)
        replies = []
        for line in lines:
            writer.write(line if isinstance(line, bytes) else line.encode() + b"\n")
            await writer.drain()
            replies.append(json.loads(await reader.readline()))
        await service.drain_retrains()
        writer.close()
        await writer.wait_closed()
    return replies


class TestSocket:
    def test_every_line_answered_and_async_retrain_lands(self, streams):
        reg = NodeRegistry(RetrainSettings(**{**QUICK_RETRAIN.__dict__}), sync_retrain=False)
        service = Service(reg)
        lines = obs_lines("B", streams["B"], 0, 192) + ["garbage", b"x" * (MAX_LINE + 10) + b"\n", '{"type":"stats","node":"B"}']
        replies = asyncio.run(_session(service, lines))
        assert len(replies) == len(lines)
        assert replies[-3]["error"] == "MalformedMessage"
        assert replies[-2]["error"] == "MalformedMessage" and "too long" in replies[-2]["reason"]
        assert reg.entries["B"].version == 1
