import csv

import numpy as np
import pytest

from tomograph.cli import ConfigError, main, parse_config_text, resolve_config


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


EXACT = ["--set", "source=synth", "--set", "model=exact", "--set", "n=6",
         "--set", "avg_out_degree=3", "--set", "T=140", "--set", "train_len=100",
         "--set", "seed=4"]


def test_synth_toy(tmp_path, capsys):
    assert main(["synth", "--set", "model=toy", "--set", "T=5", "-o", str(tmp_path)]) == 0
    assert (tmp_path / "meta.csv").read_text().split(",")[:2] == ["3", "4"]
    assert "rank(A)=4" in capsys.readouterr().out


def test_synth_byte_identical(tmp_path):
    args = ["synth", "--set", "n=5", "--set", "avg_out_degree=2", "--set", "T=30"]
    assert main(args + ["-o", str(tmp_path / "a")]) == 0
    assert main(args + ["-o", str(tmp_path / "b")]) == 0
    for name in ("tm.csv", "routing.csv", "links.csv", "meta.csv", "resolved_config.txt"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b.replace(b"/b", b"/a"), name


def test_invalid_n(tmp_path, capsys):
    assert main(["synth", "--set", "n=1", "-o", str(tmp_path)]) == 1
    assert "n must be at least 2" in capsys.readouterr().err


def test_config_file_and_errors(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("# comment\npreset = abilene\nmethod = pme\nsigma_factor = 0\n")
    c = resolve_config(cfg, ["seed=9"])
    assert (c["train_len"], c["test_len"], c["s"], c["k"]) == (500, 1500, 35, 11)
    assert c["method"] == "pme" and c["sigma_factor"] == 0 and c["seed"] == 9
    with pytest.raises(ConfigError):
        parse_config_text("bogus = 1")
    with pytest.raises(ConfigError):
        resolve_config(None, ["s=abc"])
    with pytest.raises(ConfigError):
        resolve_config(None, ["method=svd"])


def test_env_out_override(tmp_path, monkeypatch):
    monkeypatch.setenv("TOMOGRAPH_OUT", str(tmp_path / "env"))
    assert resolve_config(None, [], "ignored")["out"] == str(tmp_path / "env")


def test_run_exact_all_links(tmp_path):
    out = tmp_path / "run"
    assert main(["run", *EXACT, "--set", "s=18", "-o", str(out)]) == 0
    rows = read_rows(out / "metrics.csv")
    assert max(float(r[4]) for r in rows[1:]) <= 1e-5
    assert read_rows(out / "diagnostics.csv")[0] == [
        "t", "iterations", "kkt", "feasible", "s", "converged", "mode"]
    est = read_rows(out / "estimates.csv")
    assert est[0][:2] == ["t", "od_1"] and est[1][0] == "100" and len(est) == 41
    assert read_rows(out / "demands.csv")[0] == ["t"] + [f"src_{i}" for i in range(1, 7)]
    sel = read_rows(out / "selection.csv")
    assert sel[0] == ["t"] + [f"link_{j}" for j in range(1, 19)]
    assert sorted(int(v) for v in sel[1][1:]) == list(range(1, 19))
    resolved = (out / "resolved_config.txt").read_text()
    assert "s = 18" in resolved and "constraint_mode = lower_bound" in resolved


def test_all_methods_share_schema(tmp_path):
    heads = {}
    for method in ("csdme", "pca", "cur", "pme"):
        out = tmp_path / method
        assert main(["run", *EXACT, "--set", f"method={method}", "--set", "k=6",
                     "-o", str(out)]) == 0
        heads[method] = [r[:3] for r in read_rows(out / "metrics.csv")]
        rep = read_rows(out / "report.csv")
        assert rep[1][0] == method
        heads[method].append(rep[0])
    assert all(h == heads["csdme"] for h in heads.values())


def test_pme_zero_sigma_uses_mean_basis(tmp_path):
    from tomograph.baselines import run_baseline, train_pme_basis
    from tomograph.cli import load_bundle, split_for
    from tomograph.estimator import link_covariance

    out = tmp_path / "pme"
    assert main(["run", *EXACT, "--set", "method=pme", "--set", "sigma_factor=0",
                 "-o", str(out)]) == 0
    cfg = resolve_config(None, [a for a in EXACT if a != "--set"])
    train, test = split_for(cfg, load_bundle(cfg))
    basis = train_pme_basis(train.X, train.A, sigma_factor=0.0)
    ref = run_baseline(basis, train.A, test.Y, link_covariance(train.Y.values)).x_hat
    got = np.loadtxt(out / "estimates.csv", delimiter=",", skiprows=1)[:, 1:]
    np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-9)


def test_repetitions_and_jobs(tmp_path):
    out = tmp_path / "reps"
    args = ["run", *EXACT, "--set", "repetitions=2", "--set", "T=110", "-o", str(out)]
    assert main(args + ["-j", "2"]) == 0
    assert (out / "seed_4" / "metrics.csv").exists() and (out / "seed_5" / "metrics.csv").exists()
    first = (out / "seed_5" / "estimates.csv").read_bytes()
    assert main(args) == 0
    assert (out / "seed_5" / "estimates.csv").read_bytes() == first


def test_spectrum_toy(tmp_path):
    assert main(["spectrum", "--set", "source=synth", "--set", "model=toy",
                 "--set", "T=8", "-o", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "spectrum.csv")[1:]
    a = [float(r[2]) for r in rows if r[0] == "A"]
    phi = [float(r[2]) for r in rows if r[0] == "phi"]
    assert len(a) == 4 and len(phi) == 3
    assert a[0] == 1.0 and phi[0] == 1.0
    assert len(read_rows(tmp_path / "phi_surface.csv")) == 13


def test_convert_and_eval(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", *EXACT, "-o", str(data)]) == 0
    out = tmp_path / "run"
    assert main(["run", "--set", f"data={data}", "--set", "train_len=100",
                 "--set", "s=18", "-o", str(out)]) == 0
    ev = tmp_path / "eval"
    assert main(["eval", "--estimates", str(out / "estimates.csv"),
                 "--truth", str(data / "tm.csv"), "-o", str(ev)]) == 0
    a = np.loadtxt(out / "metrics.csv", delimiter=",", skiprows=1)
    b = np.loadtxt(ev / "metrics.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(a[:, 4], b[:, 4], atol=1e-9)
    assert main(["convert", "--set", "source=canonical", "-o", str(tmp_path / "c")]) == 1


def test_missing_data_is_error(tmp_path):
    assert main(["run", "--set", f"data={tmp_path / 'nope'}", "-o", str(tmp_path)]) == 1
