from __future__ import annotations

import csv
import json

import numpy as np
import pytest
import yaml

from sqdiag.driver import (
    CSV_COLUMNS,
    PointConfig,
    PointResult,
    ScanConfig,
    amplitude_report,
    gap_series,
    load_point_config,
    load_scan_config,
    parse_scan_config,
    run_point,
    run_scan,
    write_point,
    write_scan,
)
from sqdiag.exceptions import ConfigError, PipelineError, SectorMismatchError
from sqdiag.integrals import MolecularHamiltonian, random_hamiltonian, save_fcidump
from sqdiag.models import methylene_model
from sqdiag.oracle import fci_ground_state
from sqdiag.sampler import Amplitudes, exhaustive_samples, save_amplitudes, write_samples
from sqdiag.subspace import SubspaceBasis, SubspaceState

FAST = {
    "shots": 4000,
    "recovery": {"n_batches": 2, "n_iterations": 2},
    "orbopt": {"max_steps": 10},
}


def _point(**kwargs) -> PointConfig:
    base = {"label": 1.1, "model": {"r": 1.1}, "sector": (3, 3), **FAST}
    base.update(kwargs)
    return PointConfig.model_validate(base)


@pytest.fixture
def two_orbital_fcidump(tmp_path):
    path = tmp_path / "h2.fcidump"
    save_fcidump(random_hamiltonian(2, 1, 1, 3), path)
    return path


def test_minimal_point_matches_oracle(two_orbital_fcidump):
    cfg = PointConfig(label=0.7, integrals=two_orbital_fcidump, sector=(1, 1), n_layers=1, shots=2000, oracle=True)
    res = run_point(cfg)
    assert res.dimension == 4
    assert abs(res.e_sqd - res.e_oracle) < 1e-8
    assert res.variational_violations() == []


def test_spin_flipped_sectors_agree(tmp_path):
    ham = random_hamiltonian(4, 2, 1, 8)
    path = tmp_path / "h.fcidump"
    save_fcidump(ham, path)
    energies = []
    for sector in ((2, 1), (1, 2)):
        cfg = PointConfig(label=1.0, integrals=path, sector=sector, shots=20_000,
                          recovery={"n_batches": 1, "n_iterations": 1}, orbopt={"enabled": False})
        res = run_point(cfg)
        assert res.dimension == 24
        energies.append(res.e_sqd)
    assert abs(energies[0] - energies[1]) < 1e-10


def test_point_is_deterministic():
    cfg = _point(noise={"bit_flip_prob": 0.02}, oracle=True)
    a, b = run_point(cfg), run_point(cfg)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert a.variational_violations() == []
    assert a.e_sqd_orbopt <= a.e_sqd + 1e-9


def test_seed_changes_samples_but_not_validity():
    a = run_point(_point(noise={"bit_flip_prob": 0.05}, recovery={"batch_size": 20, "n_batches": 2, "n_iterations": 2}))
    b = run_point(_point(noise={"bit_flip_prob": 0.05}, recovery={"batch_size": 20, "n_batches": 2, "n_iterations": 2}, seed=1))
    assert a.batches != b.batches


def test_sample_file_ingestion(tmp_path):
    ham = methylene_model(1.6, 4, 2)
    path = tmp_path / "samples.txt"
    path.write_text(write_samples(exhaustive_samples(SubspaceBasis.full(6, 4, 2), 3)))
    res = run_point(_point(label=1.6, model={"r": 1.6}, sector=(4, 2), samples=path, orbopt={"enabled": False}))
    assert abs(res.e_sqd - fci_ground_state(ham, target_spin=1).energy) < 1e-8
    assert "simulate" not in res.timing


def test_sample_file_orbital_mismatch(tmp_path):
    path = tmp_path / "samples.txt"
    path.write_text("1010 5\n")
    with pytest.raises(PipelineError) as info:
        run_point(_point(samples=path))
    assert info.value.stage == "samples"
    assert isinstance(info.value.error, ConfigError)


def test_amplitude_file_ingestion(tmp_path):
    good, bad = tmp_path / "good.amp", tmp_path / "bad.amp"
    save_amplitudes(Amplitudes.zeros(6, 3, 3), good)
    save_amplitudes(Amplitudes.zeros(6, 4, 2), bad)
    res = run_point(_point(amplitudes=str(good), orbopt={"enabled": False}))
    # zero amplitudes leave the reference determinant only
    assert res.dimension == 1
    with pytest.raises(PipelineError) as info:
        run_point(_point(amplitudes=str(bad)))
    assert info.value.stage == "amplitudes"


def test_sector_must_match_electron_count(two_orbital_fcidump):
    with pytest.raises(PipelineError) as info:
        run_point(PointConfig(label=1.0, integrals=two_orbital_fcidump, sector=(2, 1)))
    assert info.value.stage == "integrals"


def test_frozen_core_point(tmp_path):
    ham = random_hamiltonian(4, 2, 2, 13)
    path = tmp_path / "f.fcidump"
    save_fcidump(ham, path)
    cfg = PointConfig(label=1.0, integrals=path, sector=(1, 1), n_frozen=1, shots=5000,
                      orbopt={"enabled": False}, oracle=True)
    res = run_point(cfg)
    assert res.n_orb == 3
    assert abs(res.e_sqd - res.e_oracle) < 1e-8


@pytest.mark.parametrize(
    "kwargs",
    [
        {"model": None},
        {"integrals": "x.fcidump"},
        {"target_spin": 0.5},
        {"sector": (4, 2), "target_spin": 0},
        {"noise": {"bit_flip_prob": 0.7}},
        {"recovery": {"n_batches": 0}},
        {"unknown": 1},
    ],
)
def test_point_config_validation(kwargs):
    with pytest.raises(ValueError):
        _point(**kwargs)


def test_scan_config_merges_defaults_and_resolves_paths(tmp_path):
    data = {
        "defaults": {"sector": [3, 3], "shots": 10, "recovery": {"n_batches": 2}},
        "chaining": "none",
        "points": [
            {"label": 1.0, "integrals": "a.fcidump", "recovery": {"n_iterations": 3}},
            {"label": 2.0, "model": {"r": 2.0}, "sector": [4, 2]},
        ],
    }
    cfg_path = tmp_path / "scan.yaml"
    cfg_path.write_text(yaml.safe_dump(data))
    scan = load_scan_config(cfg_path)
    a, b = scan.points
    assert scan.chaining == "none"
    assert a.integrals == tmp_path / "a.fcidump"
    assert (a.recovery.n_batches, a.recovery.n_iterations) == (2, 3)
    assert b.spin == 1.0 and b.shots == 10


@pytest.mark.parametrize(
    "data",
    [
        {"points": []},
        {"defaults": {}, "points": [{"label": 1.0, "sector": [3, 3]}]},
        {"defaults": {}, "points": [1]},
        {"defaults": {}, "chaining": "sideways", "points": [{"label": 1.0, "model": {"r": 1}, "sector": [3, 3]}]},
        {"extra": 1, "points": [{"label": 1.0, "model": {"r": 1}, "sector": [3, 3]}]},
    ],
)
def test_scan_config_errors(data):
    with pytest.raises(ConfigError):
        parse_scan_config(data)


def test_point_config_file(tmp_path):
    path = tmp_path / "p.yaml"
    path.write_text(yaml.safe_dump({"label": 1.1, "model": {"r": 1.1}, "sector": [3, 3]}))
    assert load_point_config(path).label == 1.1
    path.write_text("label: [unclosed\n")
    with pytest.raises(ConfigError):
        load_point_config(path)
    with pytest.raises(ConfigError):
        load_point_config(tmp_path / "missing.yaml")


def test_self_warm_start_is_a_cycle():
    with pytest.raises(ConfigError, match="cycle"):
        run_scan([_point(warm_start=1.1)])


def test_two_point_cycle_and_missing_dependency():
    a = _point(label=1.1, warm_start=1.6)
    b = _point(label=1.6, model={"r": 1.6}, warm_start=1.1)
    with pytest.raises(ConfigError, match="cycle"):
        run_scan([a, b])
    with pytest.raises(ConfigError, match="missing"):
        run_scan([_point(label=1.1, warm_start=2.0)])
    with pytest.raises(ConfigError, match="duplicate"):
        run_scan([_point(), _point()])


def test_single_label_scan_gives_one_gap():
    scan = run_scan([_point(oracle=True), _point(sector=(4, 2), oracle=True)])
    assert set(scan.series) == {"singlet", "triplet"}
    (row,) = scan.gaps
    assert row.gap == pytest.approx(row.e_singlet - row.e_triplet, abs=0)
    assert row.gap_oracle == pytest.approx(row.e_singlet_oracle - row.e_triplet_oracle, abs=0)
    assert row.err_triplet >= -1e-9


def test_chained_scan_warm_starts_and_matches_across_threads(tmp_path):
    points = [_point(label=r, model={"r": r}, sector=s) for r in (1.1, 1.6) for s in ((3, 3), (4, 2))]
    serial = run_scan(ScanConfig(points, "ascending"), threads=1)
    parallel = run_scan(ScanConfig(points, "ascending"), threads=3)
    assert [p.warm_start for p in serial.series["singlet"]] == [None, 1.1]
    for name in serial.series:
        for a, b in zip(serial.series[name], parallel.series[name]):
            assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert serial.gaps == parallel.gaps

    write_scan(serial, tmp_path)
    rows = list(csv.reader((tmp_path / "scan.csv").open()))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [float(r[0]) for r in rows[1:]] == [1.1, 1.6]
    assert all(r[4] == "" for r in rows[1:])
    assert len(list(tmp_path.glob("point_*.json"))) == 4
    n_batches = sum(len(p.batches) for s in serial.series.values() for p in s)
    assert len((tmp_path / "history.jsonl").read_text().splitlines()) == n_batches
    record = json.loads((tmp_path / "point_triplet_1.6.json").read_text())
    assert record["warm_start"] == 1.1
    assert np.allclose(np.array(record["kappa"]), -np.array(record["kappa"]).T)


def test_descending_chain_starts_at_largest_label():
    points = [_point(label=r, model={"r": r}, orbopt={"max_steps": 2}) for r in (1.1, 1.6, 2.2)]
    scan = run_scan(points, chaining="descending")
    assert [p.warm_start for p in scan.series["singlet"]] == [1.6, 2.2, None]


def test_gap_pairing_checks_active_space():
    def fake(label, na, nb, s, n_orb):
        return PointResult(label, na, nb, s, n_orb, -1.0, -1.0, 0.0, 1, [], [], [])

    assert gap_series({0.0: [fake(1.0, 3, 3, 0.0, 6)], 1.0: [fake(1.0, 4, 2, 1.0, 6)]})[0].gap == 0.0
    with pytest.raises(SectorMismatchError):
        gap_series({0.0: [fake(1.0, 3, 3, 0.0, 6)], 1.0: [fake(1.0, 4, 2, 1.0, 7)]})


def test_amplitude_report_against_itself_and_oracle():
    ham = methylene_model(1.1, 3, 3)
    ref = fci_ground_state(ham, target_spin=0)
    rows = amplitude_report(ref.state, ref)
    assert all(r.p_reference == r.p_test for r in rows)
    assert rows[0].determinant == "α:111000|β:111000"
    assert sum(r.p_reference for r in rows) <= 1 + 1e-9
    weights = [r.p_reference for r in rows]
    assert weights == sorted(weights, reverse=True)

    basis = SubspaceBasis((0b000111, 0b001011), (0b000111,), 6, 3, 3)
    partial = SubspaceState(basis, np.array([0.8, 0.6]))
    rows = amplitude_report(partial, ref, top_n=5)
    assert len(rows) == 5
    assert sum(r.p_test for r in rows) <= 1 + 1e-9
    absent = [r for r in rows if r.determinant not in {"α:111000|β:111000", "α:110100|β:111000"}]
    assert all(r.p_test == 0.0 for r in absent)


def test_write_point_round_trip(tmp_path):
    res = run_point(_point(oracle=True))
    path = write_point(res, tmp_path)
    data = json.loads(path.read_text())
    assert data["e_sqd"] == res.e_sqd
    assert data["amplitudes"][0]["determinant"] == res.amplitudes[0].determinant
    assert "timing" not in data and "state" not in data
