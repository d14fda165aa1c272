import json

import numpy as np
import pytest

from streamformer.cli import main
from streamformer.config import Mode, ModelConfig
from streamformer.model import oracle_bidirectional, random_model
from streamformer.persistence import load_stream, save_model, save_stream


def saved_model(tmp_path, seed=0, **kw):
    base = dict(depth=1, window=4, dim=8, heads=2)
    base.update(kw)
    model = random_model(ModelConfig(**base), seed)
    save_model(model, tmp_path / "model.json", tmp_path / "model.bin")
    return model


class TestVerify:
    def test_quick_grid_passes_and_report_is_deterministic(self, capsys):
        assert main(["verify", "--seed", "0", "--sizes", "quick"]) == 0
        first = capsys.readouterr().out
        assert main(["verify", "--seed", "0", "--sizes", "quick"]) == 0
        second = capsys.readouterr().out
        assert first == second
        assert "kv_cache_equivalence" in first and "PASS" in first

    def test_broken_eviction_order_fails(self, capsys, monkeypatch):
        # negative control: sabotage the memory read order and the
        # equivalence suites must go red
        from streamformer.attention import KVMemory
        true_keys = KVMemory.keys

        def reversed_keys(self):
            return true_keys(self)[::-1].copy()

        monkeypatch.setattr(KVMemory, "keys", reversed_keys)
        assert main(["verify", "--seed", "0", "--sizes", "quick"]) == 1
        out = capsys.readouterr().out
        assert "FAIL" in out


class TestRun:
    def test_stream_through_model(self, tmp_path, capsys):
        model = saved_model(tmp_path, seed=1)
        X = np.random.default_rng(1).standard_normal((8, 8)).astype(np.float32)
        save_stream(X, tmp_path / "in.bin")
        assert main(["run", "--model", str(tmp_path / "model.json"),
                     "--stream", str(tmp_path / "in.bin"),
                     "--out", str(tmp_path / "out.bin")]) == 0
        Y = load_stream(tmp_path / "out.bin")
        assert Y.shape == (8, 8)
        # one-layer model: the streamed file matches the windowed recompute
        want = oracle_bidirectional(model.astype(np.float32), X)
        np.testing.assert_allclose(Y, want.astype(np.float32), atol=1e-5)

    def test_empty_stream_gives_empty_output(self, tmp_path):
        saved_model(tmp_path, seed=2)
        save_stream(np.zeros((0, 8), dtype=np.float32), tmp_path / "in.bin")
        assert main(["run", "--model", str(tmp_path / "model.json"),
                     "--stream", str(tmp_path / "in.bin"),
                     "--out", str(tmp_path / "out.bin")]) == 0
        assert load_stream(tmp_path / "out.bin").shape == (0, 8)

    def test_mismatched_dims_exit_usage(self, tmp_path):
        saved_model(tmp_path, seed=3)
        save_stream(np.zeros((4, 5), dtype=np.float32), tmp_path / "in.bin")
        assert main(["run", "--model", str(tmp_path / "model.json"),
                     "--stream", str(tmp_path / "in.bin"),
                     "--out", str(tmp_path / "out.bin")]) == 2

    def test_missing_file_exits_io(self, tmp_path):
        assert main(["run", "--model", str(tmp_path / "nope.json"),
                     "--stream", str(tmp_path / "in.bin"),
                     "--out", str(tmp_path / "out.bin")]) == 3

    def test_corrupt_blob_exits_io(self, tmp_path):
        saved_model(tmp_path, seed=4)
        raw = bytearray((tmp_path / "model.bin").read_bytes())
        raw[8] ^= 0xFF
        (tmp_path / "model.bin").write_bytes(bytes(raw))
        save_stream(np.zeros((2, 8), dtype=np.float32), tmp_path / "in.bin")
        assert main(["run", "--model", str(tmp_path / "model.json"),
                     "--stream", str(tmp_path / "in.bin"),
                     "--out", str(tmp_path / "out.bin")]) == 3


class TestDelta:
    def test_random_model_report(self, tmp_path):
        out = tmp_path / "delta.json"
        assert main(["delta", "--seed", "5", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["seed"] == 5
        assert report["delta"][0][-1] <= 1e-12
        assert report["recon_max_err"] <= 1e-10

    def test_seeded_reports_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        main(["delta", "--seed", "6", "--out", str(a)])
        main(["delta", "--seed", "6", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_saved_model_report(self, tmp_path):
        saved_model(tmp_path, seed=7, depth=2)
        out = tmp_path / "delta.json"
        assert main(["delta", "--model", str(tmp_path / "model.json"),
                     "--seed", "7", "--out", str(out)]) == 0
        assert len(json.loads(out.read_text())["delta"]) == 2


class TestBenchAndFlops:
    def test_bench_writes_csv_and_svg(self, tmp_path):
        csv = tmp_path / "sweep.csv"
        svg = tmp_path / "sweep.svg"
        cfg = json.dumps(dict(depth=1, window=4, dim=8, heads=1, d_ff=16))
        assert main(["bench", "--config", cfg, "--windows", "4,8",
                     "--batch", "1", "--steps", "6", "--warmup", "1",
                     "--seed", "0", "--csv", str(csv), "--svg", str(svg)]) == 0
        lines = csv.read_text().strip().split("\n")
        assert lines[0] == "mode,n,batch,steps,seconds_per_token,tokens_per_second"
        assert len(lines) == 5
        assert svg.exists()

    def test_flops_json(self, capsys):
        cfg = json.dumps(dict(depth=2, window=8, dim=16, heads=2))
        assert main(["flops", "--config", cfg, "--mode", "continual"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["total_per_step"] == 2 * data["per_layer_total"]

    def test_bad_inline_config_exits_usage(self):
        assert main(["flops", "--config", '{"depth": 1}']) == 2

    def test_unreadable_config_path_exits_io(self, tmp_path):
        assert main(["flops", "--config", str(tmp_path / "nope.json")]) == 3


class TestConvert:
    def test_convert_round_trip(self, tmp_path, capsys):
        saved_model(tmp_path, seed=8, positional="rope",
                    mode=Mode.ORACLE_BIDIRECTIONAL)
        assert main(["convert", "--in-manifest", str(tmp_path / "model.json"),
                     "--out-manifest", str(tmp_path / "cont.json")]) == 0
        data = json.loads((tmp_path / "cont.json").read_text())
        assert data["config"]["mode"] == "continual"

    def test_non_circular_positional_exits_usage(self, tmp_path):
        saved_model(tmp_path, seed=9, positional="rope",
                    mode=Mode.ORACLE_BIDIRECTIONAL)
        manifest = json.loads((tmp_path / "model.json").read_text())
        manifest["config"]["positional"] = "learned_absolute"
        (tmp_path / "model.json").write_text(json.dumps(manifest))
        assert main(["convert", "--in-manifest", str(tmp_path / "model.json"),
                     "--out-manifest", str(tmp_path / "cont.json")]) == 2

    def test_none_positional_warns(self, tmp_path):
        saved_model(tmp_path, seed=10, positional="none",
                    mode=Mode.ORACLE_BIDIRECTIONAL)
        with pytest.warns(UserWarning):
            assert main(["convert", "--in-manifest", str(tmp_path / "model.json"),
                         "--out-manifest", str(tmp_path / "cont.json")]) == 0


class TestUsage:
    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--stream", "x", "--out", "y"])
        assert exc.value.code == 2
