"""Persistence formats, config validation, and the three CLI workflows."""

import configparser
import os

import numpy as np
import pytest

from dynct.cli import main
from dynct.errors import ConfigError, DataIOError
from dynct.io_formats import (DEFAULT_NOISE_LEVEL, content_hash, load_config,
                              read_array, read_manifest, write_array,
                              write_manifest, write_pgm)
from dynct.metrics import read_metrics_csv


def _write_config(path, out_dir, **overrides):
    sections = {
        "phantom": {"n_x": 16, "n_y": 16, "n_frames": 4, "seed": 1},
        "scan": {"n_angles": 5},
        "prior": {"alpha": 1.0, "ell": 2.0, "rank": 40},
        "method": {"name": "IRKFS", "n_iter": 2},
        "noise": {"sigma": 0.02, "seed": 7},
        "output": {"directory": str(out_dir)},
    }
    for dotted, value in overrides.items():
        sect, key = dotted.split(".")
        if value is None:
            sections.setdefault(sect, {}).pop(key, None)
        else:
            sections.setdefault(sect, {})[key] = value
    parser = configparser.ConfigParser()
    for sect, keys in sections.items():
        if keys:
            parser[sect] = {k: str(v) for k, v in keys.items()}
    with open(path, "w") as fh:
        parser.write(fh)
    return str(path)


@pytest.fixture
def sim_run(tmp_path):
    """A simulated 16x16 data set plus its config path."""
    data = tmp_path / "data"
    cfg = _write_config(tmp_path / "run.cfg", data)
    assert main(["simulate", cfg]) == 0
    return cfg, str(data)


# -- array and image containers ------------------------------------------------

def test_array_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((3, 5, 4))
    base = str(tmp_path / "frames")
    write_array(base, arr)
    back = read_array(base)
    assert back.shape == arr.shape
    assert np.array_equal(back, arr)
    vec = rng.standard_normal(17)
    write_array(str(tmp_path / "v"), vec)
    assert np.array_equal(read_array(str(tmp_path / "v")), vec)


def test_read_array_rejects_tampered_sidecar(tmp_path):
    base = str(tmp_path / "a")
    write_array(base, np.zeros(4))
    text = open(base + ".txt").read().replace("float64-le", "float32-le")
    open(base + ".txt", "w").write(text)
    with pytest.raises(DataIOError):
        read_array(base)


def test_read_array_rejects_size_mismatch(tmp_path):
    base = str(tmp_path / "a")
    write_array(base, np.zeros((2, 3)))
    with open(base + ".bin", "ab") as fh:
        fh.write(b"\x00" * 8)
    with pytest.raises(DataIOError):
        read_array(base)


def test_pgm_header_and_range(tmp_path):
    img = np.linspace(-1.0, 2.0, 12).reshape(3, 4)
    path = str(tmp_path / "img.pgm")
    write_pgm(path, img)
    raw = open(path, "rb").read()
    assert raw.startswith(b"P5")
    header = raw.split(b"\n")
    assert header[1] == b"4 3"
    assert header[2] == b"255"
    pixels = np.frombuffer(raw[len(b"\n".join(header[:3])) + 1:], dtype=np.uint8)
    assert pixels.min() == 0 and pixels.max() == 255


# -- config schema ---------------------------------------------------------------

def test_config_minimal_loads(tmp_path):
    cfg = load_config(_write_config(tmp_path / "c.cfg", tmp_path / "o"))
    assert cfg.n_x == cfg.n_y == 16
    assert cfg.method.name == "IRKFS"
    assert cfg.method.n_iter == 2
    assert cfg.sigma == 0.02


def test_config_sigma_defaults(tmp_path):
    cfg = load_config(_write_config(tmp_path / "c.cfg", tmp_path / "o",
                                    **{"noise.sigma": None}))
    assert cfg.sigma == DEFAULT_NOISE_LEVEL == 0.01


def test_config_unknown_key_rejected(tmp_path):
    path = _write_config(tmp_path / "c.cfg", tmp_path / "o",
                         **{"phantom.n_z": 4})
    with pytest.raises(ConfigError, match="n_z"):
        load_config(path)


def test_config_unknown_section_rejected(tmp_path):
    path = _write_config(tmp_path / "c.cfg", tmp_path / "o",
                         **{"teleport.speed": 3})
    with pytest.raises(ConfigError, match="teleport"):
        load_config(path)


def test_config_missing_required(tmp_path):
    path = _write_config(tmp_path / "c.cfg", tmp_path / "o",
                         **{"prior.rank": None})
    with pytest.raises(ConfigError, match="prior.rank"):
        load_config(path)


def test_config_single_frame_rejected(tmp_path):
    path = _write_config(tmp_path / "c.cfg", tmp_path / "o",
                         **{"phantom.n_frames": 1})
    with pytest.raises(ConfigError, match="n_frames"):
        load_config(path)


def test_config_patch_divisibility_named(tmp_path):
    path = _write_config(tmp_path / "c.cfg", tmp_path / "o",
                         **{"method.name": "IRKFS-M3", "motion.z_x": 3})
    with pytest.raises(ConfigError, match="z_x"):
        load_config(path)


def test_config_missing_file_is_io_error(tmp_path):
    with pytest.raises(DataIOError):
        load_config(str(tmp_path / "absent.cfg"))


# -- manifests -------------------------------------------------------------------

def test_manifest_round_trip_and_hash(tmp_path):
    f1 = tmp_path / "x.bin"
    f1.write_bytes(b"12345")
    path = str(tmp_path / "manifest.json")
    write_manifest(path, {"alpha": 0.5}, [str(f1)])
    back = read_manifest(path)
    assert back["params"]["alpha"] == 0.5
    assert back["content_sha256"] == content_hash([str(f1)])
    f1.write_bytes(b"12346")
    assert back["content_sha256"] != content_hash([str(f1)])


# -- simulate --------------------------------------------------------------------

def test_simulate_outputs_and_determinism(tmp_path):
    data1 = tmp_path / "d1"
    data2 = tmp_path / "d2"
    cfg1 = _write_config(tmp_path / "c1.cfg", data1)
    cfg2 = _write_config(tmp_path / "c2.cfg", data2)
    assert main(["simulate", cfg1]) == 0
    assert main(["simulate", cfg2]) == 0
    for name in ("truth.bin", "truth.txt", "sinograms.bin", "manifest.json"):
        assert (data1 / name).exists(), name
    m1 = read_manifest(str(data1 / "manifest.json"))
    m2 = read_manifest(str(data2 / "manifest.json"))
    assert m1["content_sha256"] == m2["content_sha256"]
    assert abs(m1["params"]["realized_noise_level"] - 0.02) <= 1e-12


def test_simulate_records_default_sigma(tmp_path):
    data = tmp_path / "d"
    cfg = _write_config(tmp_path / "c.cfg", data, **{"noise.sigma": None})
    assert main(["simulate", cfg]) == 0
    params = read_manifest(str(data / "manifest.json"))["params"]
    assert params["sigma"] == 0.01


def test_simulate_bad_config_exits_2(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.cfg", tmp_path / "d",
                        **{"method.name": "IRKFS-M3", "motion.z_x": 3})
    assert main(["simulate", cfg]) == 2
    assert "z_x" in capsys.readouterr().err


def test_simulate_pgm_export(tmp_path):
    data = tmp_path / "d"
    cfg = _write_config(tmp_path / "c.cfg", data, **{"output.pgm": "true"})
    assert main(["simulate", cfg]) == 0
    assert (data / "truth_t000.pgm").exists()
    assert (data / "truth_t003.pgm").exists()


# -- reconstruct -----------------------------------------------------------------

def test_reconstruct_irkfs_iterations_identical(sim_run):
    cfg, data = sim_run
    assert main(["reconstruct", cfg, data]) == 0
    out = os.path.join(data, "IRKFS")
    for t in range(4):
        b1 = open(os.path.join(out, f"recon_i1_t{t:03d}.bin"), "rb").read()
        b2 = open(os.path.join(out, f"recon_i2_t{t:03d}.bin"), "rb").read()
        assert b1 == b2, t
    rows = read_metrics_csv(os.path.join(out, "metrics.csv"))
    rre_rows = [r for r in rows if r["rre"]]
    assert len(rre_rows) == 2 * 4  # n_iter * (T+1)
    for it in ("1", "2"):
        assert sum(r["iteration"] == it for r in rre_rows) == 4


def test_reconstruct_missing_data_dir(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.cfg", tmp_path / "never")
    assert main(["reconstruct", cfg, str(tmp_path / "never")]) == 3


def test_reconstruct_mismatched_config(sim_run, tmp_path, capsys):
    _, data = sim_run
    other = _write_config(tmp_path / "other.cfg", data,
                          **{"phantom.n_frames": 5})
    assert main(["reconstruct", other, data]) == 2
    assert "does not match config" in capsys.readouterr().err


def test_reconstruct_custom_out_dir(sim_run, tmp_path):
    cfg, data = sim_run
    out = str(tmp_path / "elsewhere")
    assert main(["reconstruct", cfg, data, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "metrics.csv"))


# -- evaluate --------------------------------------------------------------------

def test_evaluate_single_and_sorted(sim_run, tmp_path, capsys):
    cfg, data = sim_run
    assert main(["reconstruct", cfg, data]) == 0
    run1 = os.path.join(data, "IRKFS")
    out_csv = str(tmp_path / "table.csv")
    assert main(["evaluate", run1, "--out", out_csv]) == 0
    rows = read_metrics_csv(out_csv)
    assert len(rows) == 2  # one per iteration
    assert {r["method"] for r in rows} == {"IRKFS"}
    # add a second method and aggregate both
    cfg2 = _write_config(tmp_path / "c2.cfg", data,
                         **{"method.name": "EMIRKFS", "method.n_iter": 1})
    assert main(["reconstruct", cfg2, data]) == 0
    run2 = os.path.join(data, "EMIRKFS")
    assert main(["evaluate", run1, run2, "--out", out_csv]) == 0
    rows = read_metrics_csv(out_csv)
    rres = [float(r["rre"]) for r in rows]
    assert rres == sorted(rres)
    assert len(rres) == 3
    assert all(r["phase"] == "total" for r in rows)


def test_evaluate_differing_frames_exits_2(tmp_path, capsys):
    runs = []
    for i, n_frames in enumerate((4, 3)):
        data = tmp_path / f"d{i}"
        cfg = _write_config(tmp_path / f"c{i}.cfg", data,
                            **{"phantom.n_frames": n_frames,
                               "method.n_iter": 1})
        assert main(["simulate", cfg]) == 0
        assert main(["reconstruct", cfg, str(data)]) == 0
        runs.append(os.path.join(str(data), "IRKFS"))
    assert main(["evaluate", *runs]) == 2
    assert "differs" in capsys.readouterr().err


# -- environment -----------------------------------------------------------------

def test_thread_env_validation(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DYNCT_THREADS", "abc")
    cfg = _write_config(tmp_path / "c.cfg", tmp_path / "d")
    assert main(["simulate", cfg]) == 2
    assert "DYNCT_THREADS" in capsys.readouterr().err
    monkeypatch.setenv("DYNCT_THREADS", "0")
    assert main(["simulate", cfg]) == 2
