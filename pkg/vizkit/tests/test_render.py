import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from vizkit.render import main


def write_grid(path, n=60, schema="hypepull/grid/v1"):
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.7, 0.7, size=(n, 2))
    pts = pts[np.sum(pts**2, axis=1) < 1.0]
    doc = {
        "schema": schema,
        "version": "hypepull-0.1.0",
        "manifold": "hyperbolic",
        "coords": "poincare",
        "points": pts.tolist(),
        "volume": np.abs(rng.standard_normal(len(pts)) + 2.0).tolist(),
        "config": {},
    }
    path.write_text(json.dumps(doc))
    return path


def write_curve(path, kind="base"):
    ts = np.linspace(0, 1, 9)
    pts = np.column_stack([0.5 * np.cos(ts * 2), 0.5 * np.sin(ts * 2)])
    doc = {
        "schema": "hypepull/curve/v1",
        "version": "hypepull-0.1.0",
        "kind": kind,
        "manifold": "hyperbolic",
        "points": np.column_stack([np.ones(9), pts]).tolist(),
        "points_poincare": pts.tolist(),
        "segment_energies_pullback": np.ones(8).tolist(),
        "segment_energies_base": np.ones(8).tolist(),
        "total_energy_pullback": 8.0,
        "spline_energy": 0.0,
        "decoded_means": np.zeros((9, 2)).tolist(),
        "decoded_vars": np.full(9, 0.1).tolist(),
        "mean_uncertainty": 0.1,
        "config": {},
    }
    path.write_text(json.dumps(doc))
    return path


def write_energies(path):
    lines = ["segment,base_curve_base_metric,base_curve_pullback_metric,"
             "pullback_curve_pullback_metric"]
    for i in range(10):
        lines.append(f"{i},1.0,{1.0 + 0.3 * np.sin(i)},{1.1}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_decoded(path, d=4, m=12):
    rng = np.random.default_rng(5)
    rows = np.column_stack([np.arange(m),
                            rng.standard_normal((m, d)),
                            np.abs(rng.standard_normal(m)) * 0.1])
    np.savetxt(path, rows, delimiter=",")
    return path


def png_magic(path):
    return path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


class TestHeatmap:
    def test_renders_with_curve_overlays(self, tmp_path):
        grid = write_grid(tmp_path / "grid.json")
        c1 = write_curve(tmp_path / "curve_base.json", "base")
        c2 = write_curve(tmp_path / "curve_pullback.json", "pullback")
        out = tmp_path / "fig.png"
        code = main(["render", "--kind", "heatmap", "--grid", str(grid),
                     "--curves", str(c1), str(c2), "--out", str(out)])
        assert code == 0
        assert out.stat().st_size > 1000
        assert png_magic(out)

    def test_unknown_schema_rejected(self, tmp_path, capsys):
        grid = write_grid(tmp_path / "grid.json", schema="hypepull/grid/v99")
        out = tmp_path / "fig.png"
        code = main(["render", "--kind", "heatmap", "--grid", str(grid),
                     "--out", str(out)])
        assert code != 0
        assert not out.exists()
        assert "schema" in capsys.readouterr().err

    def test_empty_grid_rejected(self, tmp_path):
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({"schema": "hypepull/grid/v1",
                                    "points": [], "volume": [],
                                    "coords": "poincare"}))
        out = tmp_path / "fig.png"
        assert main(["render", "--kind", "heatmap", "--grid", str(grid),
                     "--out", str(out)]) != 0
        assert not out.exists()

    def test_garbled_json_rejected(self, tmp_path):
        grid = tmp_path / "grid.json"
        grid.write_text("{not json")
        assert main(["render", "--kind", "heatmap", "--grid", str(grid),
                     "--out", str(tmp_path / "f.png")]) != 0

    def test_missing_file_rejected(self, tmp_path):
        assert main(["render", "--kind", "heatmap", "--grid",
                     str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "f.png")]) != 0

    def test_rerun_pixel_identical(self, tmp_path):
        grid = write_grid(tmp_path / "grid.json")
        outs = []
        for name in ("a.png", "b.png"):
            out = tmp_path / name
            assert main(["render", "--kind", "heatmap", "--grid", str(grid),
                         "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestEnergy:
    def test_renders(self, tmp_path):
        en = write_energies(tmp_path / "energies.csv")
        out = tmp_path / "energy.png"
        assert main(["render", "--kind", "energy", "--energies", str(en),
                     "--out", str(out)]) == 0
        assert out.stat().st_size > 1000 and png_magic(out)

    def test_wrong_header_rejected(self, tmp_path):
        bad = tmp_path / "energies.csv"
        bad.write_text("a,b\n1,2\n")
        assert main(["render", "--kind", "energy", "--energies", str(bad),
                     "--out", str(tmp_path / "f.png")]) != 0

    def test_rerun_identical(self, tmp_path):
        en = write_energies(tmp_path / "energies.csv")
        blobs = []
        for name in ("a.png", "b.png"):
            out = tmp_path / name
            assert main(["render", "--kind", "energy", "--energies", str(en),
                         "--out", str(out)]) == 0
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]


class TestDecodeStrip:
    def test_renders(self, tmp_path):
        dec = write_decoded(tmp_path / "decoded.csv")
        out = tmp_path / "strip.png"
        assert main(["render", "--kind", "decode-strip", "--decoded",
                     str(dec), "--out", str(out)]) == 0
        assert out.stat().st_size > 1000 and png_magic(out)

    def test_empty_rejected(self, tmp_path):
        dec = tmp_path / "decoded.csv"
        dec.write_text("")
        assert main(["render", "--kind", "decode-strip", "--decoded",
                     str(dec), "--out", str(tmp_path / "f.png")]) != 0


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    out = tmp_path_factory.mktemp("cshape")
    subprocess.run(
        ["hypepull", "cshape", "--n", "40", "--mc-samples", "60",
         "--grid", "15", "--m", "7", "--steps", "5", "--out", str(out)],
        check=True)
    return out


@pytest.mark.skipif(shutil.which("hypepull") is None,
                    reason="hypepull CLI not installed")
class TestAgainstRealArtifacts:
    """Secondary acceptance: render real C-shape artifacts end to end."""

    def test_heatmap_and_energy_round(self, artifacts, tmp_path):
        fig = tmp_path / "fig.png"
        assert main(["render", "--kind", "heatmap",
                     "--grid", str(artifacts / "grid.json"),
                     "--curves", str(artifacts / "curve_base.json"),
                     str(artifacts / "curve_pullback.json"),
                     "--out", str(fig)]) == 0
        assert fig.stat().st_size > 1000 and png_magic(fig)
        en = tmp_path / "energy.png"
        assert main(["render", "--kind", "energy",
                     "--energies", str(artifacts / "energies.csv"),
                     "--out", str(en)]) == 0
        assert en.stat().st_size > 1000 and png_magic(en)
        # pixel-identical rerun on the same artifacts
        fig2 = tmp_path / "fig2.png"
        assert main(["render", "--kind", "heatmap",
                     "--grid", str(artifacts / "grid.json"),
                     "--curves", str(artifacts / "curve_base.json"),
                     str(artifacts / "curve_pullback.json"),
                     "--out", str(fig2)]) == 0
        assert fig.read_bytes() == fig2.read_bytes()

    def test_refuses_checkpoint_as_grid(self, artifacts, tmp_path):
        assert main(["render", "--kind", "heatmap",
                     "--grid", str(artifacts / "resolved_config.json"),
                     "--out", str(tmp_path / "f.png")]) != 0
