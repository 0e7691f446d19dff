import subprocess
import sys

import pytest

from pvfm_extractor.cli import main


@pytest.fixture(scope="module")
def cli_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_bundle") / "model.pt"
    assert main(["make-bundle", "--out", str(out), "--seed", "0"]) == 0
    return out


def _extract_args(image_dir, out_dir, bundle, *names):
    paths = [str(image_dir / n) for n in names]
    return ["extract", "--bundle", str(bundle), "--out-dir", str(out_dir), *paths]


class TestExitCodes:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "extract" in capsys.readouterr().out

    def test_no_args_is_usage_error(self):
        assert main([]) == 1

    def test_unknown_flag_is_usage_error(self, tmp_path):
        assert main(["make-bundle", "--out", str(tmp_path / "b.pt"), "--frobnicate"]) == 1

    def test_missing_bundle_is_data_error(self, image_dir, tmp_path, capsys):
        rc = main(_extract_args(image_dir, tmp_path, tmp_path / "nope.pt", "scene_0.png"))
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_corrupt_bundle_is_data_error(self, image_dir, tmp_path, capsys):
        bad = tmp_path / "bad.pt"
        bad.write_bytes(b"not a bundle")
        rc = main(_extract_args(image_dir, tmp_path / "out", bad, "scene_0.png"))
        assert rc == 2

    def test_duplicate_basenames_is_usage_error(self, image_dir, cli_bundle, tmp_path, capsys):
        other = tmp_path / "elsewhere"
        other.mkdir()
        (other / "scene_0.png").write_bytes((image_dir / "scene_0.png").read_bytes())
        rc = main(
            [
                "extract",
                "--bundle",
                str(cli_bundle),
                "--out-dir",
                str(tmp_path / "out"),
                str(image_dir / "scene_0.png"),
                str(other / "scene_0.png"),
            ]
        )
        assert rc == 1
        assert "duplicate" in capsys.readouterr().err


class TestExtractCommand:
    def test_end_to_end(self, image_dir, cli_bundle, tmp_path, capsys):
        out_dir = tmp_path / "feats"
        rc = main(
            _extract_args(
                image_dir, out_dir, cli_bundle, "scene_0.png", "scene_1.jpg", "blank.png"
            )
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "wrote 3 of 3 images" in out
        assert "blank.pvfm: 0 features" in out
        for stem in ("scene_0", "scene_1", "blank"):
            assert (out_dir / f"{stem}.pvfm").is_file()

    def test_unreadable_image_warns_but_succeeds(self, image_dir, cli_bundle, tmp_path, capsys):
        garbage = tmp_path / "garbage.png"
        garbage.write_text("not an image")
        rc = main(
            [
                "extract",
                "--bundle",
                str(cli_bundle),
                "--out-dir",
                str(tmp_path / "out"),
                str(image_dir / "scene_0.png"),
                str(garbage),
            ]
        )
        assert rc == 0
        captured = capsys.readouterr()
        assert "warning: skipped" in captured.err
        assert "wrote 1 of 2 images" in captured.out
        assert not (tmp_path / "out" / "garbage.pvfm").exists()

    def test_max_features_flag(self, image_dir, cli_bundle, tmp_path, capsys):
        rc = main(
            _extract_args(image_dir, tmp_path / "out", cli_bundle, "scene_1.jpg")
            + ["--max-features", "5"]
        )
        assert rc == 0
        assert "scene_1.pvfm: 5 features" in capsys.readouterr().out


class TestMakeBundleCommand:
    def test_reports_destination(self, tmp_path, capsys):
        out = tmp_path / "model.pt"
        assert main(["make-bundle", "--out", str(out), "--seed", "3"]) == 0
        assert str(out) in capsys.readouterr().out
        assert out.is_file()

    def test_module_entrypoint(self):
        proc = subprocess.run(
            [sys.executable, "-m", "pvfm_extractor.cli", "--help"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "make-bundle" in proc.stdout
