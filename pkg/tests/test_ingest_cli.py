import json
import math

import numpy as np
import pytest

from mfcopula.cli import load_chain, main
from mfcopula.config import grid_points, load_config
from mfcopula.exceptions import ConfigError, IngestError
from mfcopula.ingest import (
    Panel,
    as_dataset,
    harmonic_detrend,
    ingest_csv,
    rank_transform,
)
from mfcopula.spatial import SiteSet

SITES = "site,x,y\nA,0,0\nB,1,0\n"


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_bytes(text.encode("utf-8"))
    return path


def obs_text(rows):
    return "field,site,replicate,value\n" + "".join(f"{f},{s},{r},{v}\n" for f, s, r, v in rows)


def full_rows():
    return [(f, s, r, 10 * i + 3 * j + k) for i, f in enumerate("TP") for j, s in enumerate("AB")
            for k, r in enumerate(("d1", "d2", "d3"))]


def panel_from(values, labels=None):
    values = np.asarray(values, dtype=float)
    p, d, n = values.shape
    sites = SiteSet.from_coords(np.column_stack([np.arange(d), np.zeros(d)]).astype(float))
    labels = labels or tuple(str(k) for k in range(n))
    return Panel(values, sites, tuple(f"f{i}" for i in range(p)), tuple(f"s{j}" for j in range(d)), tuple(labels))


# ------------------------------------------------------------------ ingest

def test_complete_panel(tmp_path):
    panel = ingest_csv(write(tmp_path, "o.csv", obs_text(full_rows())), write(tmp_path, "s.csv", SITES))
    assert panel.shape == (2, 2, 3) and panel.values.size == 12
    assert panel.field_names == ("T", "P") and panel.replicate_labels == ("d1", "d2", "d3")
    assert panel.values[1, 1, 2] == 10 + 3 + 2
    assert panel.report["n_replicates_dropped"] == 0


def test_missing_cell_drops_replicate(tmp_path):
    rows = [r for r in full_rows() if not (r[0] == "P" and r[1] == "A" and r[2] == "d2")]
    obs, sites = write(tmp_path, "o.csv", obs_text(rows)), write(tmp_path, "s.csv", SITES)
    panel = ingest_csv(obs, sites)
    assert panel.shape[2] == 2
    assert panel.report["n_replicates_dropped"] == 1 and panel.report["dropped_replicates"] == ["d2"]
    with pytest.raises(IngestError, match="require-complete"):
        ingest_csv(obs, sites, require_complete=True)


def test_duplicate_cell_names_both_lines(tmp_path):
    rows = full_rows() + [("T", "B", "d1", 99)]
    with pytest.raises(IngestError, match="lines 5 and 14"):
        ingest_csv(write(tmp_path, "o.csv", obs_text(rows)), write(tmp_path, "s.csv", SITES))


def test_unknown_site_and_bad_value(tmp_path):
    sites = write(tmp_path, "s.csv", SITES)
    with pytest.raises(IngestError, match="line 3: unknown site 'Z'"):
        ingest_csv(write(tmp_path, "o.csv", obs_text([("T", "A", "1", 1), ("T", "Z", "1", 2)])), sites)
    with pytest.raises(IngestError, match="line 2: non-numeric value 'abc'"):
        ingest_csv(write(tmp_path, "o.csv", obs_text([("T", "A", "1", "abc")])), sites)


def test_crlf_accepted(tmp_path):
    obs = obs_text(full_rows()).replace("\n", "\r\n")
    panel = ingest_csv(write(tmp_path, "o.csv", obs), write(tmp_path, "s.csv", SITES.replace("\n", "\r\n")))
    assert panel.shape == (2, 2, 3)


def test_lonlat_needs_projection(tmp_path):
    sites = write(tmp_path, "s.csv", "site,lon,lat\nA,-86.8,33.5\nB,-86.0,33.5\n")
    obs = write(tmp_path, "o.csv", obs_text([("T", "A", "1", 1), ("T", "B", "1", 2)]))
    with pytest.raises(IngestError, match="local-km"):
        ingest_csv(obs, sites)
    panel = ingest_csv(obs, sites, project="local-km")
    # 0.8 degrees of longitude at 33.5N is about 74 km
    assert 70 < panel.sites.distances[0, 1] < 78


# ------------------------------------------------------------------ ranks

def test_rank_transform_examples():
    assert rank_transform(panel_from([[[5, 1, 3]]])).U.ravel().tolist() == [0.75, 0.25, 0.5]
    assert rank_transform(panel_from([[[7, 7, 7]]])).U.ravel().tolist() == [0.5, 0.5, 0.5]
    U = rank_transform(panel_from([[[1, 2, 3], [4, 5, 6]]])).U[0].ravel()
    assert np.all(np.diff(U) > 0) and U.max() == 6 / 7


def test_rank_transform_permutation_invariant():
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(2, 4, 25))
    ds = rank_transform(panel_from(vals))
    for i in range(2):
        assert np.array_equal(np.sort(ds.U[i].ravel()), np.arange(1, 101) / 101)
    assert ds.provenance == "rank-transformed"
    per = rank_transform(panel_from(vals), per_site=True)
    assert np.array_equal(np.sort(per.U[0, 2]), np.arange(1, 26) / 26)


# ------------------------------------------------------------------ detrend

def dates(n):
    import datetime as dt

    start = dt.date(2020, 1, 1)
    return tuple((start + dt.timedelta(days=k)).isoformat() for k in range(n))


def test_detrend_white_noise_barely_changes():
    rng = np.random.default_rng(1)
    n = 366
    noise = rng.normal(size=(1, 3, n))
    resid = harmonic_detrend(panel_from(noise, dates(n)), K=2).values
    # coefficients of white noise on 5 regressors have SE about 1/sqrt(n/2)
    fitted = noise - resid
    assert np.max(np.abs(fitted)) < 4 * math.sqrt(5 * 2 / n)


def test_detrend_removes_pure_harmonic():
    n = 366
    labels = dates(n)
    import datetime as dt

    doy = np.array([dt.date.fromisoformat(s).timetuple().tm_yday for s in labels])
    season = 5 + 3 * np.sin(2 * np.pi * doy / 365.25) - 2 * np.cos(2 * np.pi * doy / 365.25)
    resid = harmonic_detrend(panel_from(season[None, None, :], labels), K=1).values
    assert resid.var() < 1e-10 * season.var()


def test_detrend_preconditions():
    with pytest.raises(ConfigError):
        harmonic_detrend(panel_from(np.zeros((1, 1, 10)), dates(10)), K=0)
    with pytest.raises(IngestError):
        harmonic_detrend(panel_from(np.zeros((1, 1, 4)), dates(4)), K=2)
    with pytest.raises(IngestError, match="ISO date"):
        harmonic_detrend(panel_from(np.zeros((1, 1, 10))), K=1)


# ------------------------------------------------------------------ config

def test_config_layers(tmp_path):
    path = write(tmp_path, "c.json", json.dumps({"seed": 3, "sampler": {"n_iter": 900}, "grid": {"delta_u": [0.3]}}))
    cfg = load_config(path, environ={"ST_SAMPLER__N_BURN": "400", "ST_SEED": "11", "OTHER": "x"})
    assert cfg["seed"] == 11 and cfg["sampler"]["n_iter"] == 900 and cfg["sampler"]["n_burn"] == 400
    assert grid_points(cfg) == [{"delta_u": 0.3}]
    with pytest.raises(ConfigError):
        load_config(None, environ={"ST_GRID": "1"})
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "bad.json", json.dumps({"nope": 1})), environ={})
    with pytest.raises(ConfigError):
        grid_points(load_config(None, environ={}))


# ------------------------------------------------------------------ CLI

def run(argv):
    return main([str(a) for a in argv])


def read_json(path):
    return json.loads(path.read_text())


def test_classify_simulation_setting(tmp_path):
    assert run(["classify", "--out", tmp_path, "--alpha", "4,4", "--gamma", "0.4,0.6", "--delta-u", 0.8,
                "--delta-l", 0.6, "--lam", "0.6,0.3", "--rho", -0.7]) == 0
    body = read_json(tmp_path / "classify.json")
    assert body["labels"] == "U: AD, AD--AD; L: AD, AI--AI"
    assert body["spec_version"] == "1" and body["seed"] == 0


def test_simulate_twice_byte_identical(tmp_path):
    a, b = tmp_path / "out", tmp_path / "out2"
    for _ in range(2):
        assert run(["simulate", "--p", 1, "--d", 1, "--n", 100, "--seed", 7, "--out", a]) == 0
        first = {f.name: f.read_bytes() for f in a.iterdir()}
        assert run(["simulate", "--p", 1, "--d", 1, "--n", 100, "--seed", 7, "--out", a]) == 0
        assert first == {f.name: f.read_bytes() for f in a.iterdir()}
    assert run(["simulate", "--p", 1, "--d", 1, "--n", 100, "--seed", 7, "--out", b]) == 0
    assert (a / "U.csv").read_bytes() == (b / "U.csv").read_bytes()


def simulate_small(tmp_path, n=30, d=4):
    out = tmp_path / "sim"
    assert run(["simulate", "--d", d, "--n", n, "--seed", 1, "--out", out]) == 0
    return out


def test_simulate_round_trip(tmp_path):
    out = simulate_small(tmp_path)
    side = read_json(out / "simulate.json")
    data = as_dataset(ingest_csv(out / "U.csv", out / "sites.csv"))
    from mfcopula.config import theta_from_values
    from mfcopula.simulate import simulate

    th = theta_from_values(side["theta"])
    sim = simulate(th, SiteSet.from_coords(np.array(side["sites"]["coords"])), 30, 1)
    assert np.array_equal(data.U, sim.U)
    assert data.provenance == "externally standardized"


def test_fit_twice_byte_identical(tmp_path):
    sim = simulate_small(tmp_path)
    common = ["--obs", sim / "U.csv", "--sites", sim / "sites.csv", "--n-iter", 400, "--n-burn", 200,
              "--thin", 5, "--fix", "alpha_1,alpha_2,delta_u,delta_l", "--seed", 4]
    out = tmp_path / "fit"
    assert run(["fit", "--out", out] + common) == 0
    first = {f.name: f.read_bytes() for f in out.iterdir()}
    assert run(["fit", "--out", out] + common) == 0
    assert first == {f.name: f.read_bytes() for f in out.iterdir()}
    meta, samples = load_chain(out)
    assert len(samples) == 40 and meta["free"] == ["gamma_1", "gamma_2", "lambda_1", "lambda_2", "rho_12"]
    assert (out / "chain.csv").read_text().splitlines()[0] == ",".join(meta["free"])


def test_select_one_point_equals_fit(tmp_path):
    sim = simulate_small(tmp_path)
    common = ["--obs", sim / "U.csv", "--sites", sim / "sites.csv", "--n-iter", 400, "--n-burn", 200,
              "--thin", 5, "--fix", "alpha_1,alpha_2", "--seed", 4]
    assert run(["fit", "--out", tmp_path / "fit", "--delta-u", 0.3, "--delta-l", 0.6,
                "--fix", "alpha_1,alpha_2,delta_u,delta_l"] + common[:-4] + ["--seed", 4]) == 0
    assert run(["select", "--out", tmp_path / "sel", "--grid", "delta_u=0.3", "--grid", "delta_l=0.6"]
               + common) == 0
    ranking = read_json(tmp_path / "sel" / "select.json")["ranking"]
    assert len(ranking) == 1 and ranking[0]["rank"] == 1 and ranking[0]["fixed"] == {"delta_u": 0.3, "delta_l": 0.6}
    fit_csv = (tmp_path / "fit" / "chain.csv").read_bytes()
    assert (tmp_path / "sel" / "cell_000" / "chain.csv").read_bytes() == fit_csv


def test_chi_empirical_and_model(tmp_path):
    sim = simulate_small(tmp_path, n=60, d=6)
    fit_out = tmp_path / "fit"
    assert run(["fit", "--out", fit_out, "--obs", sim / "U.csv", "--sites", sim / "sites.csv", "--n-iter", 300,
                "--n-burn", 200, "--thin", 10, "--fix", "alpha_1,alpha_2,delta_u,delta_l"]) == 0
    out = tmp_path / "chi"
    assert run(["chi", "--out", out, "--obs", sim / "U.csv", "--sites", sim / "sites.csv", "--chain", fit_out,
                "--pair", "1,2", "--tail", "upper", "--bins", 3, "--mc", 10000, "--max-samples", 3]) == 0
    lines = (out / "chi_empirical_upper_12_distance.csv").read_text().splitlines()
    assert lines[0] == "tail,pair,abscissa_type,abscissa,estimate,lo,hi,estimator"
    assert len(lines) == 4 and lines[1].startswith("upper,12,distance,")
    assert (out / "chi_model_upper_12_distance.csv").exists()
    assert read_json(out / "chi.json")["spec_version"] == "1"


def test_errors_are_one_json_line(tmp_path, capsys):
    assert run(["simulate", "--n", 5, "--out", tmp_path]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and json.loads(err[0])["flag"] == "--d"
    assert run(["fit", "--obs", tmp_path / "missing.csv", "--sites", tmp_path / "s.csv"]) == 1
    body = json.loads(capsys.readouterr().err)
    assert body["error"] == "IngestError" and "s.csv" in body["message"]
    assert run(["frobnicate"]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "UsageError"
