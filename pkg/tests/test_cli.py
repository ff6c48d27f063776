import json

import pytest

from formgen.cli import main
from formgen.forms import serialize_form
from formgen.mos import RatingRecord, write_ratings_csv

from conftest import SAMPLE_RESPONSE

VALID_FORM_RESPONSE = (
    '{"1": ["intro groove, BPM 120", 25, -1],'
    ' "2": ["main theme, BPM 124", 25, -1],'
    ' "3": ["bridge, BPM 118", 20, -1],'
    ' "4": ["theme variation, BPM 124", 30, 2],'
    ' "5": ["intro variation, BPM 120", 25, 1],'
    ' "6": ["finale, BPM 128", 25, 3]}'
)


@pytest.fixture
def form_file(tmp_path, sample_spec):
    path = tmp_path / "form.json"
    path.write_text(serialize_form(sample_spec))
    return path


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"steps_per_second": 2}))
    return path


class TestValidate:
    def test_valid_form(self, form_file, capsys):
        assert main(["validate", str(form_file)]) == 0
        assert "valid: 6 parts" in capsys.readouterr().out

    def test_sample_response_with_prose(self, tmp_path):
        path = tmp_path / "response.txt"
        path.write_text(SAMPLE_RESPONSE)
        assert main(["validate", str(path)]) == 0

    def test_invalid_total(self, tmp_path, capsys):
        doc = json.dumps({"1": ["a", 25, -1], "2": ["b", 25, -1]})  # 50 s
        path = tmp_path / "short.json"
        path.write_text(doc)
        assert main(["validate", str(path)]) == 1
        assert "total-duration" in capsys.readouterr().out

    def test_unreadable_file(self, tmp_path):
        assert main(["validate", str(tmp_path / "missing.json")]) == 2

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("not a form")
        assert main(["validate", str(path)]) == 1


class TestGenerate:
    def test_writes_artifacts(self, form_file, fast_config, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(
            ["--config", str(fast_config), "--seed", "3",
             "generate", str(form_file), "--out", str(out)]
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["total_steps"] == 300
        assert (out / "piece.tokens").exists()
        assert (out / "piece.wav").exists()

    def test_same_seed_same_hash(self, form_file, fast_config, tmp_path):
        hashes = []
        for run in ("a", "b"):
            out = tmp_path / run
            main(["--config", str(fast_config), "--seed", "9",
                  "generate", str(form_file), "--out", str(out)])
            hashes.append(json.loads((out / "manifest.json").read_text())["grid_sha256"])
        assert hashes[0] == hashes[1]

    def test_invalid_form_exit_one(self, tmp_path, fast_config):
        path = tmp_path / "short.json"
        path.write_text(json.dumps({"1": ["a", 25, -1]}))
        assert main(["--config", str(fast_config),
                     "generate", str(path), "--out", str(tmp_path / "o")]) == 1

    def test_unreachable_backend_exit_two(self, form_file, fast_config, tmp_path, capsys):
        code = main(
            ["--config", str(fast_config), "generate", str(form_file),
             "--out", str(tmp_path / "o"), "--backend-url", "http://127.0.0.1:1"]
        )
        assert code == 2
        assert "unreachable" in capsys.readouterr().err


class TestOptimize:
    @pytest.fixture
    def fixture_file(self, tmp_path):
        good = ("Compose with explicit form, BPM and instrument detail per part, "
                "transition and texture notes, contrast between parts, and precise "
                "verbose language throughout the whole 150 seconds of the piece.")
        responses = {
            "po": [json.dumps([good, "mediocre prompt", "weak"])]
            + [json.dumps([f"{good} Iteration {i}."]) for i in range(3)],
            "mp": {"responses": [VALID_FORM_RESPONSE], "cycle": True},
        }
        path = tmp_path / "fixtures.json"
        path.write_text(json.dumps(responses))
        return path

    @pytest.fixture
    def opt_config(self, tmp_path):
        path = tmp_path / "optcfg.json"
        path.write_text(
            json.dumps(
                {
                    "steps_per_second": 1,
                    "n_explore": 3,
                    "pieces_per_prompt": 1,
                    "raters_per_piece": 2,
                    "max_iterations": 3,
                }
            )
        )
        return path

    @pytest.fixture
    def seed_file(self, tmp_path):
        path = tmp_path / "seed.txt"
        path.write_text("Compose a piece with parts, instruments, BPM, and form.")
        return path

    def test_explore_and_exploit(self, fixture_file, opt_config, seed_file, tmp_path, capsys):
        out = tmp_path / "opt"
        code = main(
            ["--config", str(opt_config), "optimize", str(seed_file),
             "--explore", "--exploit", "--llm-fixture", str(fixture_file),
             "--out", str(out)]
        )
        assert code == 0
        state = json.loads((out / "optimizer-state.json").read_text())
        assert state["phase"] == "done"
        assert len(state["pool"]) == 3 + 3  # exploration + exploitation proposals
        assert (out / "exploration-histogram.json").exists()
        assert (out / "trajectory.json").exists()
        assert (out / "best-prompt.txt").exists()
        output = capsys.readouterr().out
        assert "best avg MOS" in output

    def test_missing_fixture_exit_two(self, opt_config, seed_file, tmp_path):
        assert main(
            ["--config", str(opt_config), "optimize", str(seed_file),
             "--explore", "--out", str(tmp_path / "o")]
        ) == 2


class TestReport:
    @pytest.fixture
    def ratings_csv(self, tmp_path):
        records = []
        for clip, scores in (
            ("ours-1", [4, 4, 3, 5]),
            ("vanilla-1", [3, 3, 4, 2]),
        ):
            for i, s in enumerate(scores):
                records.append(RatingRecord(f"r{i}", clip, s))
        path = tmp_path / "ratings.csv"
        write_ratings_csv(path, records)
        return path

    @pytest.fixture
    def groups_file(self, tmp_path):
        path = tmp_path / "groups.json"
        path.write_text(json.dumps({"Ours": ["ours-1"], "Vanilla": ["vanilla-1"]}))
        return path

    def test_table(self, ratings_csv, groups_file, capsys):
        assert main(["report", str(ratings_csv), "--groups", str(groups_file)]) == 0
        out = capsys.readouterr().out
        assert "Ours" in out and "4.00±0.82" in out

    def test_compare(self, ratings_csv, groups_file, capsys):
        code = main(
            ["report", str(ratings_csv), "--groups", str(groups_file),
             "--compare", "Ours,Vanilla"]
        )
        assert code == 0
        assert "Welch t" in capsys.readouterr().out

    def test_empty_group_exit_one(self, ratings_csv, tmp_path):
        groups = tmp_path / "bad-groups.json"
        groups.write_text(json.dumps({"Ghost": ["no-such-clip"]}))
        assert main(["report", str(ratings_csv), "--groups", str(groups)]) == 1

    def test_json_out(self, ratings_csv, groups_file, tmp_path):
        out = tmp_path / "summaries.json"
        main(["report", str(ratings_csv), "--groups", str(groups_file), "--out", str(out)])
        body = json.loads(out.read_text())
        assert body[0]["rendered"] == "4.00±0.82"


class TestConfig:
    def test_bad_config_exit_two(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"unknown_key": 1}')
        assert main(["--config", str(path), "validate", "x"]) == 2
