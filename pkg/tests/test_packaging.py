from pathlib import Path
import tomllib

ROOT = Path(__file__).resolve().parent.parent


class TestPackageMetadata:

    def test_python_floor(self):
        project = tomllib.loads((ROOT / "pyproject.toml").read_text(encoding="utf-8"))["project"]
        assert project["requires-python"] == ">=3.11"

    def test_dependencies_match_requirements(self):
        project = tomllib.loads((ROOT / "pyproject.toml").read_text(encoding="utf-8"))["project"]
        pinned = [
            line.strip() for line in (ROOT / "requirements.txt").read_text(encoding="utf-8").splitlines()
            if line.strip() and not line.startswith("pytest")
        ]
        assert sorted(project["dependencies"]) == sorted(pinned)
        assert project["optional-dependencies"]["test"] == ["pytest>=8.0.0"]
