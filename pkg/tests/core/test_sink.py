import json

import pytest
from unittest.mock import patch

from app.core.sink import ResultSink, SinkWriter, dumps, result_sink


class TestResultSink:

    def test_singleton_pattern(self):
        """Test that ResultSink is singleton"""
        sink1 = ResultSink()
        sink2 = ResultSink()

        assert sink1 is sink2
        assert sink1 is result_sink

    def test_root_not_initialized(self):
        """Test using the sink before initialization"""
        sink = ResultSink()
        sink._root = None

        with pytest.raises(RuntimeError, match="Result sink not initialized"):
            sink.root

    def test_initialize_creates_directory(self, tmp_path):
        """Test initialization creates the output directory"""
        target = tmp_path / "nested" / "out"

        root = result_sink.initialize(str(target))

        assert root == target
        assert target.is_dir()
        result_sink.close()

    @patch("app.core.sink.settings")
    def test_initialize_uses_settings_default(self, mock_settings, tmp_path):
        """Test the default directory comes from settings"""
        mock_settings.output_dir.return_value = str(tmp_path / "from-settings")

        root = result_sink.initialize()

        assert root.name == "from-settings"
        result_sink.close()

    def test_close_resets_root(self, sink):
        """Test closing the sink"""
        sink.close()

        assert sink._root is None

    def test_write_jsonl_is_deterministic(self, sink):
        """Test records are written with sorted keys, one per line"""
        path = sink.write_jsonl("rows.jsonl", [{"b": 1, "a": 2}, {"z": [1.5]}])

        lines = path.read_text().splitlines()
        assert lines == ['{"a":2,"b":1}', '{"z":[1.5]}']

    def test_write_csv(self, sink):
        """Test CSV rows with a header"""
        path = sink.write_csv("table.csv", [{"method": "rln", "npc": 1.5}, {"method": "greedy", "npc": 2.0}])

        assert path.read_text().splitlines() == ["method,npc", "rln,1.5", "greedy,2.0"]

    def test_write_json(self, sink):
        """Test a single JSON document"""
        path = sink.write_json("doc.json", {"version": 1})

        assert json.loads(path.read_text()) == {"version": 1}


class TestSinkWriter:

    def test_context_manager_success(self, tmp_path):
        """Test the file appears only after a clean exit"""
        target = tmp_path / "out.jsonl"

        with SinkWriter(target) as handle:
            handle.write("x\n")
            assert not target.exists()

        assert target.read_text() == "x\n"
        assert not (tmp_path / "out.jsonl.part").exists()

    def test_context_manager_with_exception(self, tmp_path):
        """Test a failing writer leaves nothing behind"""
        target = tmp_path / "out.jsonl"

        with pytest.raises(ValueError):
            with SinkWriter(target) as handle:
                handle.write("partial")
                raise ValueError("Test error")

        assert not target.exists()
        assert not (tmp_path / "out.jsonl.part").exists()


def test_dumps_sorts_keys():
    """Test the line format used everywhere"""
    assert dumps({"b": 1, "a": {"d": 2, "c": 3}}) == '{"a":{"c":3,"d":2},"b":1}'
