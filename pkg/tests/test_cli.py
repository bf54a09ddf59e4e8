from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from plotnpolish.cli import main
from plotnpolish.schema import StoryIdea, parse_plan, serialize_plan

DATA_DIR = Path(__file__).parent / "data"
FIXTURE = DATA_DIR / "weather_machine.json"

IDEA_ARGS = [
    "--idea", "A scientist woman creates a weather-changing machine",
    "--pages", "6",
]


@pytest.fixture
def runner():
    return CliRunner()


def make_project(runner, tmp_path, seed="7") -> Path:
    plan_path = tmp_path / "plan.json"
    result = runner.invoke(
        main,
        ["--json", "plan", *IDEA_ARGS, "--stub-llm", str(FIXTURE), "--out", str(plan_path)],
    )
    assert result.exit_code == 0, result.output
    project_dir = tmp_path / "proj"
    result = runner.invoke(
        main,
        ["--json", "visualize", "--project", str(project_dir), "--plan", str(plan_path),
         "--seed", seed, "--t-steps", "6"],
    )
    assert result.exit_code == 0, result.output
    return project_dir


class TestPlan:
    def test_stub_llm_writes_expected_plan(self, runner, tmp_path):
        out = tmp_path / "plan.json"
        result = runner.invoke(
            main,
            ["--json", "plan", *IDEA_ARGS, "--stub-llm", str(FIXTURE), "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        assert payload["characters"] == 2
        assert payload["pages"] == 6
        idea = StoryIdea(
            idea_text="A scientist woman creates a weather-changing machine",
            page_count=6,
            story_style="children's picture book style",
            visual_style="watercolor painting style",
        )
        expected = serialize_plan(
            parse_plan(FIXTURE.read_text(encoding="utf-8"), default_idea=idea)
        )
        assert out.read_text(encoding="utf-8") == expected

    def test_rejected_plan_exits_backend_code(self, runner, tmp_path):
        bad = tmp_path / "garbage.txt"
        bad.write_text("not json at all")
        result = runner.invoke(
            main,
            ["--json", "plan", *IDEA_ARGS, "--stub-llm", str(bad),
             "--out", str(tmp_path / "plan.json")],
        )
        assert result.exit_code == 4
        error = json.loads(result.stderr)
        assert error["error"] == "PlanRejected"


class TestVisualizeAndEdit:
    def test_visualize_matches_golden(self, runner, tmp_path):
        plan_path = tmp_path / "plan.json"
        runner.invoke(
            main,
            ["--json", "plan", *IDEA_ARGS, "--stub-llm", str(FIXTURE), "--out", str(plan_path)],
        )
        result = runner.invoke(
            main,
            ["--json", "visualize", "--project", str(tmp_path / "proj"),
             "--plan", str(plan_path), "--seed", "7", "--t-steps", "6"],
        )
        assert result.exit_code == 0, result.output
        golden = json.loads((DATA_DIR / "cli_visualize.golden.json").read_text())
        assert json.loads(result.output) == golden

    def test_edit_changes_only_requested_frames(self, runner, tmp_path):
        project_dir = make_project(runner, tmp_path)
        before = json.loads(
            runner.invoke(main, ["--json", "replay", "--project", str(project_dir)]).output
        )["frames"]
        result = runner.invoke(
            main,
            ["--json", "edit", "--project", str(project_dir), "--concept", "woman",
             "--prompt", "a red lab coat", "--frames", "2,4", "--seed", "11"],
        )
        assert result.exit_code == 0, result.output
        after = json.loads(result.output)["frames"]
        changed = [i for i, (a, b) in enumerate(zip(before, after)) if a != b]
        assert changed == [1, 3]
        golden = json.loads((DATA_DIR / "cli_edit.golden.json").read_text())
        assert json.loads(result.output) == golden

    def test_style_and_personalize_commands(self, runner, tmp_path):
        project_dir = make_project(runner, tmp_path)
        result = runner.invoke(
            main,
            ["--json", "style", "--project", str(project_dir),
             "--prompt", "Van Gogh style", "--seed", "3"],
        )
        assert result.exit_code == 0, result.output

        reference = tmp_path / "reference.png"
        Image.fromarray(np.full((32, 32, 3), (255, 120, 0), dtype=np.uint8)).save(reference)
        result = runner.invoke(
            main,
            ["--json", "personalize", "--project", str(project_dir), "--concept", "woman",
             "--prompt", "the mascot", "--reference", str(reference), "--seed", "4"],
        )
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["turns"] == 2

    def test_consistency_pass_kind(self, runner, tmp_path):
        project_dir = make_project(runner, tmp_path)
        result = runner.invoke(
            main,
            ["--json", "edit", "--project", str(project_dir),
             "--kind", "consistency_pass", "--seed", "5"],
        )
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["turns"] == 2  # one per character


class TestImportReplayReport:
    def test_import_and_replay(self, runner, tmp_path):
        rng = np.random.default_rng(0)
        paths = []
        for i in range(3):
            path = tmp_path / f"page{i}.png"
            Image.fromarray(
                rng.integers(0, 256, size=(512, 512, 3), dtype=np.uint8)
            ).save(path)
            paths.append(str(path))
        project_dir = tmp_path / "imported"
        result = runner.invoke(
            main,
            ["--json", "import", *paths, "--project", str(project_dir), "--t-steps", "4"],
        )
        assert result.exit_code == 0, result.output
        assert len(json.loads(result.output)["frames"]) == 3
        result = runner.invoke(main, ["--json", "replay", "--project", str(project_dir)])
        assert result.exit_code == 0, result.output

    def test_replay_divergence_exits_5(self, runner, tmp_path):
        project_dir = make_project(runner, tmp_path)
        meta = json.loads((project_dir / "project.json").read_text())
        target = project_dir / "frames" / f"{meta['baseline_ids'][0]}.png"
        image = np.asarray(Image.open(target).convert("RGB")).copy()
        image[0, 0] ^= 255
        Image.fromarray(image).save(target)
        result = runner.invoke(main, ["--json", "replay", "--project", str(project_dir)])
        assert result.exit_code == 5
        assert json.loads(result.stderr)["code"] == 5

    def test_report_renders_artifacts(self, runner, tmp_path):
        project_dir = make_project(runner, tmp_path)
        runner.invoke(
            main,
            ["--json", "edit", "--project", str(project_dir), "--concept", "woman",
             "--prompt", "a red lab coat", "--seed", "11"],
        )
        result = runner.invoke(main, ["--json", "report", "--project", str(project_dir)])
        assert result.exit_code == 0, result.output
        artifacts = json.loads(result.output)
        storyboard = Path(artifacts["storyboard"])
        assert storyboard.is_file() and storyboard.stat().st_size > 0
        frames_csv = Path(artifacts["frames_csv"]).read_text().splitlines()
        assert len(frames_csv) == 7  # header + 6 frames
        turns_csv = Path(artifacts["turns_csv"]).read_text().splitlines()
        assert len(turns_csv) == 2  # header + 1 turn
        assert Path(artifacts["turn_history"]).is_file()


class TestExitCodes:
    def test_usage_error_is_2(self, runner):
        assert runner.invoke(main, ["edit"]).exit_code == 2
        assert runner.invoke(main, ["no-such-command"]).exit_code == 2

    def test_schema_error_is_3(self, runner, tmp_path):
        bad_plan = tmp_path / "plan.json"
        bad_plan.write_text("{}")
        result = runner.invoke(
            main,
            ["--json", "visualize", "--project", str(tmp_path / "p"),
             "--plan", str(bad_plan)],
        )
        assert result.exit_code == 3
        error = json.loads(result.stderr)
        assert error["code"] == 3
        assert "Main Characters" in error["message"]

    def test_backend_error_is_4(self, runner, tmp_path):
        plan_path = tmp_path / "plan.json"
        runner.invoke(
            main,
            ["--json", "plan", *IDEA_ARGS, "--stub-llm", str(FIXTURE), "--out", str(plan_path)],
        )
        result = runner.invoke(
            main,
            ["--json", "visualize", "--project", str(tmp_path / "p"), "--plan", str(plan_path),
             "--backend", "latent-diffusion-v1", "--checkpoint", "sd15.ckpt"],
        )
        assert result.exit_code == 4
        assert json.loads(result.stderr)["error"] == "BackendUnavailable"
