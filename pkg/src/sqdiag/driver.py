"""Run orchestration: single points, dissociation scans, gaps and reports.

A point runs the whole pipeline for one geometry and one spin sector:
integrals, amplitudes, LUCJ ansatz, exact simulation, noisy sampling (or a
sample file), configuration recovery, orbital optimization and optionally the
exact reference. A scan runs many points, warm-starting the orbital rotation
of each point from its neighbour, and pairs singlet and triplet results into
a gap series.
"""

from __future__ import annotations

import csv
import io
import json
import time
import zlib
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Any, Iterator, Literal, Sequence

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from sqdiag.exceptions import ConfigError, PipelineError, SectorMismatchError
from sqdiag.integrals import MolecularHamiltonian, freeze_core, read_fcidump
from sqdiag.models import methylene_model
from sqdiag.oracle import OracleResult, fci_ground_state
from sqdiag.orbopt import OrbitalRotation, OrbOptConfig, OrbOptStep, optimize_orbitals
from sqdiag.recovery import BatchRecord, IterationRecord, RecoveryConfig, run_recovery
from sqdiag.sampler import (
    NoiseModel,
    SampleSet,
    build_lucj,
    load_amplitudes,
    mp2_amplitudes,
    read_samples,
    sample,
    simulate_lucj_state,
)
from sqdiag.subspace import SolverConfig, SubspaceState

CSV_COLUMNS = (
    "label",
    "e_triplet",
    "e_singlet",
    "gap",
    "e_triplet_oracle",
    "e_singlet_oracle",
    "err_triplet",
    "err_singlet",
    "gap_oracle",
)
VARIATIONAL_SLACK = 1e-9
REPORT_ROWS = 20


# ---------------------------------------------------------------------------
# configuration


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSource(_Section):
    name: Literal["methylene"] = "methylene"
    r: float = Field(gt=0)


class NoiseSettings(_Section):
    bit_flip_prob: float = Field(0.0, ge=0.0, lt=0.5)


class SolverSettings(_Section):
    lambda_penalty: float = Field(0.2, ge=0.0)
    davidson_tol: float = Field(1e-7, gt=0.0)
    max_davidson_iter: int = Field(500, ge=1)
    max_subspace_vectors: int = Field(20, ge=3)


class RecoverySettings(_Section):
    n_batches: int = Field(10, ge=1)
    batch_size: int = Field(3000, ge=1)
    n_iterations: int = Field(10, ge=1)


class OrbOptSettings(_Section):
    enabled: bool = True
    learning_rate: float = Field(0.01, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    epsilon: float = Field(1e-8, gt=0.0)
    max_steps: int = Field(200, ge=0)
    grad_tol: float = Field(1e-6, ge=0.0)
    resolve_every: int = Field(1, ge=1)


class PointConfig(_Section):
    """One geometry in one spin sector.

    ``sector`` counts active electrons after ``n_frozen`` doubly occupied
    orbitals are removed. ``target_spin`` defaults to ``|n_alpha - n_beta| / 2``.
    """

    label: float
    integrals: Path | None = None
    model: ModelSource | None = None
    n_frozen: int = Field(0, ge=0)
    sector: tuple[int, int]
    target_spin: float | None = None
    amplitudes: str = "mp2"
    n_layers: int = Field(2, ge=1)
    connectivity: str = "all-to-all"
    shots: int = Field(100_000, ge=1)
    noise: NoiseSettings = NoiseSettings()
    samples: Path | None = None
    recovery: RecoverySettings = RecoverySettings()
    orbopt: OrbOptSettings = OrbOptSettings()
    solver: SolverSettings = SolverSettings()
    warm_start: float | None = None
    oracle: bool = False
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> PointConfig:
        if (self.integrals is None) == (self.model is None):
            raise ValueError("give exactly one of 'integrals' and 'model'")
        na, nb = self.sector
        if na < 0 or nb < 0:
            raise ValueError("electron counts must be non-negative")
        s = self.spin
        s_min = abs(na - nb) / 2
        if s < s_min - 1e-12 or abs((s - s_min) - round(s - s_min)) > 1e-12:
            raise ValueError(f"target_spin {s} is impossible in sector {self.sector}")
        return self

    @property
    def spin(self) -> float:
        na, nb = self.sector
        return abs(na - nb) / 2 if self.target_spin is None else float(self.target_spin)

    @property
    def key(self) -> tuple[float, float]:
        return (self.spin, self.label)


def spin_name(s: float) -> str:
    names = {0.0: "singlet", 0.5: "doublet", 1.0: "triplet", 1.5: "quartet", 2.0: "quintet"}
    return names.get(float(s), f"s{s:g}")


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _resolve_paths(raw: dict, root: Path) -> dict:
    out = dict(raw)
    for key in ("integrals", "samples"):
        if out.get(key) is not None:
            out[key] = str(root / Path(out[key]).expanduser())
    amps = out.get("amplitudes")
    if amps is not None and amps != "mp2":
        out["amplitudes"] = str(root / Path(amps).expanduser())
    return out


def _validate(raw: dict) -> PointConfig:
    try:
        return PointConfig.model_validate(raw)
    except ValidationError as exc:
        label = raw.get("label", "?")
        raise ConfigError(f"point {label}: {exc}") from exc


@dataclass
class ScanConfig:
    points: list[PointConfig]
    chaining: Literal["ascending", "descending", "none"] = "ascending"


def _read_yaml(path: Path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def parse_scan_config(data: dict, root: Path | str = ".") -> ScanConfig:
    """Build a scan from a mapping with ``defaults``, ``chaining`` and ``points``.

    Each point mapping is deep-merged over ``defaults``; relative paths are
    resolved against ``root``.
    """
    root = Path(root)
    unknown = set(data) - {"defaults", "chaining", "points"}
    if unknown:
        raise ConfigError(f"unknown scan keys: {sorted(unknown)}")
    defaults = data.get("defaults") or {}
    points = data.get("points")
    if not isinstance(defaults, dict) or not isinstance(points, list) or not points:
        raise ConfigError("a scan needs a 'defaults' mapping and a non-empty 'points' list")
    chaining = data.get("chaining", "ascending")
    if chaining not in ("ascending", "descending", "none"):
        raise ConfigError(f"chaining must be ascending, descending or none, got {chaining!r}")
    resolved = []
    for raw in points:
        if not isinstance(raw, dict):
            raise ConfigError("every point must be a mapping")
        resolved.append(_validate(_resolve_paths(_merge(defaults, raw), root)))
    return ScanConfig(resolved, chaining)


def load_scan_config(path: Path | str) -> ScanConfig:
    path = Path(path)
    return parse_scan_config(_read_yaml(path), path.parent)


def load_point_config(path: Path | str) -> PointConfig:
    """A single point: either a flat point mapping or a scan file with one point."""
    path = Path(path)
    data = _read_yaml(path)
    if "points" in data:
        scan = parse_scan_config(data, path.parent)
        if len(scan.points) != 1:
            raise ConfigError(f"{path} defines {len(scan.points)} points; run-point needs exactly one")
        return scan.points[0]
    return _validate(_resolve_paths(data, path.parent))


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class AmplitudeRow:
    determinant: str
    p_reference: float
    p_test: float


@dataclass
class PointResult:
    """Outputs of one pipeline run.

    ``e_sqd`` is the recovery energy in the input orbitals, ``e_sqd_orbopt``
    the energy after orbital optimization (equal to ``e_sqd`` when disabled).
    ``warm_start`` is the label whose rotation was offered as the starting
    point and ``warm_start_used`` whether the result came from it.
    """

    label: float
    n_alpha: int
    n_beta: int
    target_spin: float
    n_orb: int
    e_sqd: float
    e_sqd_orbopt: float
    s2: float
    dimension: int
    history: list[IterationRecord]
    batches: list[BatchRecord]
    kappa: list[list[float]]
    orbopt_trajectory: list[OrbOptStep] = field(default_factory=list)
    warm_start: float | None = None
    warm_start_used: bool = False
    e_oracle: float | None = None
    s2_oracle: float | None = None
    amplitudes: list[AmplitudeRow] = field(default_factory=list)
    timing: dict[str, float] = field(default_factory=dict, compare=False)
    state: SubspaceState | None = field(default=None, repr=False, compare=False)

    @property
    def energy(self) -> float:
        return self.e_sqd_orbopt

    @property
    def rotation(self) -> OrbitalRotation:
        return OrbitalRotation.from_list(self.kappa)

    def variational_violations(self, slack: float = VARIATIONAL_SLACK) -> list[str]:
        out = []
        if self.e_sqd_orbopt > self.e_sqd + slack:
            out.append(f"E_orbopt {self.e_sqd_orbopt:.12f} > E_sqd {self.e_sqd:.12f}")
        if self.e_oracle is not None and self.e_oracle > self.e_sqd_orbopt + slack:
            out.append(f"E_oracle {self.e_oracle:.12f} > E_orbopt {self.e_sqd_orbopt:.12f}")
        return out

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready record; timings are left out so reruns compare equal."""
        out = {}
        for f in fields(self):
            if f.name in ("timing", "state"):
                continue
            value = getattr(self, f.name)
            if isinstance(value, list):
                value = [asdict(v) if is_dataclass(v) else v for v in value]
            out[f.name] = value
        return out


def amplitude_report(
    state: SubspaceState,
    reference: SubspaceState | OracleResult,
    top_n: int | None = None,
) -> list[AmplitudeRow]:
    """Compare determinant weights of ``state`` against ``reference``.

    Rows follow the reference weights in descending order (ties keep basis
    order); determinants missing from ``state`` report zero.
    """
    ref = reference.state if isinstance(reference, OracleResult) else reference
    n = ref.basis.n_orb
    weights = ref.coefficients**2
    order = np.argsort(-weights, kind="stable")
    if top_n is not None:
        order = order[:top_n]
    dets = ref.basis.determinants()
    rows = []
    for i in order:
        det = dets[i]
        rows.append(AmplitudeRow(det.render(n), float(weights[i]), state.amplitude(det) ** 2))
    return rows


@dataclass(frozen=True)
class GapRow:
    label: float
    e_triplet: float
    e_singlet: float
    gap: float
    e_triplet_oracle: float | None = None
    e_singlet_oracle: float | None = None
    err_triplet: float | None = None
    err_singlet: float | None = None
    gap_oracle: float | None = None


@dataclass
class ScanResult:
    """Point results grouped by spin name, each ordered by label, plus the gap series."""

    series: dict[str, list[PointResult]]
    gaps: list[GapRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.gaps:
            writer.writerow(["" if v is None else repr(v) for v in (getattr(row, c) for c in CSV_COLUMNS)])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# pipeline


@contextmanager
def _stage(name: str, timing: dict[str, float]) -> Iterator[None]:
    start = time.perf_counter()
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc
    finally:
        timing[name] = timing.get(name, 0.0) + time.perf_counter() - start


def load_hamiltonian(cfg: PointConfig) -> MolecularHamiltonian:
    """Integrals for ``cfg`` with the core frozen and the requested sector set."""
    na, nb = cfg.sector
    if cfg.model is not None:
        ham = methylene_model(cfg.model.r)
    else:
        ham = read_fcidump(cfg.integrals)
    ham = freeze_core(ham, cfg.n_frozen)
    if na + nb != ham.n_alpha + ham.n_beta:
        raise ConfigError(
            f"sector {cfg.sector} has {na + nb} electrons, integrals have {ham.n_alpha + ham.n_beta}"
        )
    if max(na, nb) > ham.n_orb:
        raise ConfigError(f"sector {cfg.sector} does not fit in {ham.n_orb} orbitals")
    return ham.with_sector(na, nb)


def point_seeds(cfg: PointConfig) -> tuple[int, int]:
    """Independent (sampling, recovery) seeds for one point."""
    tag = zlib.crc32(f"{cfg.label!r}|{cfg.sector[0]}|{cfg.sector[1]}|{cfg.spin!r}".encode())
    a, b = np.random.SeedSequence([cfg.seed, tag]).generate_state(2)
    return int(a), int(b)


def _solver(cfg: PointConfig) -> SolverConfig:
    return SolverConfig(target_spin_s=cfg.spin, **cfg.solver.model_dump())


def _samples(cfg: PointConfig, ham: MolecularHamiltonian, seed: int, timing) -> SampleSet:
    if cfg.samples is not None:
        with _stage("samples", timing):
            samples = read_samples(cfg.samples)
            if samples.n_orb != ham.n_orb:
                raise ConfigError(f"sample strings cover {samples.n_orb} orbitals, integrals have {ham.n_orb}")
        return samples
    with _stage("amplitudes", timing):
        if cfg.amplitudes == "mp2":
            amps = mp2_amplitudes(ham)
        else:
            amps = load_amplitudes(cfg.amplitudes)
            if (amps.n_orb, amps.n_alpha, amps.n_beta) != (ham.n_orb, ham.n_alpha, ham.n_beta):
                raise ConfigError(
                    f"amplitudes are for {(amps.n_orb, amps.n_alpha, amps.n_beta)}, "
                    f"point needs {(ham.n_orb, ham.n_alpha, ham.n_beta)}"
                )
    with _stage("ansatz", timing):
        params = build_lucj(amps, cfg.n_layers, cfg.connectivity)
    with _stage("simulate", timing):
        state = simulate_lucj_state(params, ham.n_orb, ham.n_alpha, ham.n_beta)
    with _stage("sample", timing):
        return sample(state, cfg.shots, NoiseModel(cfg.noise.bit_flip_prob, seed))


def run_point(
    cfg: PointConfig,
    warm_start: OrbitalRotation | None = None,
    threads: int = 1,
    warm_label: float | None = None,
) -> PointResult:
    """Run the full pipeline for one point.

    Args:
        cfg: Point configuration.
        warm_start: Orbital rotation to start the optimizer from. If the
            optimum reached from it lies above the recovery energy, the
            optimizer is rerun from the input orbitals.
        threads: Worker threads for the batch solves.
        warm_label: Label of the point ``warm_start`` came from, for the record.

    Raises:
        PipelineError: Any stage failed; ``stage`` names it.
    """
    timing: dict[str, float] = {}
    with _stage("integrals", timing):
        ham = load_hamiltonian(cfg)
    sample_seed, recovery_seed = point_seeds(cfg)
    samples = _samples(cfg, ham, sample_seed, timing)
    solver = _solver(cfg)

    with _stage("recovery", timing):
        rcfg = RecoveryConfig(
            seed=recovery_seed, solver=solver, n_workers=threads, **cfg.recovery.model_dump()
        )
        rec = run_recovery(ham, samples, rcfg)

    kappa = np.zeros((ham.n_orb, ham.n_orb))
    e_opt, trajectory, used_warm = rec.energy, [], False
    if cfg.orbopt.enabled:
        with _stage("orbopt", timing):
            settings = cfg.orbopt.model_dump(exclude={"enabled"})
            ocfg = OrbOptConfig(**settings)
            opt = None
            if warm_start is not None:
                if warm_start.n_orb != ham.n_orb:
                    raise ConfigError("warm-start rotation has the wrong number of orbitals")
                opt = optimize_orbitals(ham, rec.basis, ocfg, init=warm_start, solver=solver)
                used_warm = True
            if opt is None or opt.energy > rec.energy:
                opt = optimize_orbitals(ham, rec.basis, ocfg, solver=solver)
                used_warm = False
            if opt.energy <= rec.energy:
                e_opt, kappa = opt.energy, opt.rotation.kappa
            trajectory = opt.trajectory

    e_oracle = s2_oracle = None
    rows: list[AmplitudeRow] = []
    if cfg.oracle:
        with _stage("oracle", timing):
            ref = fci_ground_state(ham, target_spin=cfg.spin)
            e_oracle, s2_oracle = ref.energy, ref.s2
            rows = amplitude_report(rec.state, ref, REPORT_ROWS)

    return PointResult(
        label=cfg.label,
        n_alpha=ham.n_alpha,
        n_beta=ham.n_beta,
        target_spin=cfg.spin,
        n_orb=ham.n_orb,
        e_sqd=rec.energy,
        e_sqd_orbopt=e_opt,
        s2=rec.s2,
        dimension=rec.basis.dimension,
        history=rec.history,
        batches=rec.batches,
        kappa=np.asarray(kappa).tolist(),
        orbopt_trajectory=trajectory,
        warm_start=warm_label if warm_start is not None else None,
        warm_start_used=used_warm,
        e_oracle=e_oracle,
        s2_oracle=s2_oracle,
        amplitudes=rows,
        timing=timing,
        state=rec.state,
    )


def _dependencies(points: Sequence[PointConfig], chaining: str) -> dict[tuple, tuple | None]:
    keys = [p.key for p in points]
    if len(set(keys)) != len(keys):
        raise ConfigError("duplicate (spin, label) pairs in scan")
    deps: dict[tuple, tuple | None] = {}
    by_spin: dict[float, list[PointConfig]] = {}
    for p in points:
        by_spin.setdefault(p.spin, []).append(p)
    for spin, group in by_spin.items():
        labels = sorted(p.label for p in group)
        for p in group:
            if p.warm_start is not None:
                if p.warm_start == p.label:
                    raise ConfigError(f"point {p.label} warm-starts from itself (cycle)")
                if p.warm_start not in labels:
                    raise ConfigError(
                        f"point {p.label} ({spin_name(spin)}) warm-starts from missing label {p.warm_start}"
                    )
                deps[p.key] = (spin, p.warm_start)
                continue
            i = labels.index(p.label)
            if chaining == "ascending" and i > 0:
                deps[p.key] = (spin, labels[i - 1])
            elif chaining == "descending" and i < len(labels) - 1:
                deps[p.key] = (spin, labels[i + 1])
            else:
                deps[p.key] = None
    graph = {k: ({d} if d is not None else set()) for k, d in deps.items()}
    try:
        tuple(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        raise ConfigError(f"warm-start chain has a cycle: {exc.args[1]}") from exc
    return deps


def gap_series(series: dict[float, list[PointResult]]) -> list[GapRow]:
    """Pointwise singlet-minus-triplet energies for labels present in both series."""
    singlets = {r.label: r for r in series.get(0.0, [])}
    triplets = {r.label: r for r in series.get(1.0, [])}
    rows = []
    for label in sorted(set(singlets) & set(triplets)):
        s, t = singlets[label], triplets[label]
        if s.n_orb != t.n_orb or s.n_alpha + s.n_beta != t.n_alpha + t.n_beta:
            raise SectorMismatchError(f"label {label}: singlet and triplet runs use different active spaces")
        oracle = s.e_oracle is not None and t.e_oracle is not None
        rows.append(GapRow(
            label=label,
            e_triplet=t.energy,
            e_singlet=s.energy,
            gap=s.energy - t.energy,
            e_triplet_oracle=t.e_oracle,
            e_singlet_oracle=s.e_oracle,
            err_triplet=None if t.e_oracle is None else t.energy - t.e_oracle,
            err_singlet=None if s.e_oracle is None else s.energy - s.e_oracle,
            gap_oracle=s.e_oracle - t.e_oracle if oracle else None,
        ))
    return rows


def run_scan(
    points: Sequence[PointConfig] | ScanConfig,
    chaining: Literal["ascending", "descending", "none"] = "ascending",
    threads: int = 1,
) -> ScanResult:
    """Run every point, honouring warm-start dependencies.

    Points whose dependencies are finished run concurrently on ``threads``
    workers; each point's numbers depend only on its config and its warm
    start, so the schedule does not change any output.
    """
    if isinstance(points, ScanConfig):
        points, chaining = points.points, points.chaining
    if not points:
        raise ConfigError("scan has no points")
    deps = _dependencies(points, chaining)
    by_key = {p.key: p for p in points}
    graph = {k: ({d} if d is not None else set()) for k, d in deps.items()}
    sorter = TopologicalSorter(graph)
    sorter.prepare()
    results: dict[tuple, PointResult] = {}
    inner = 1 if threads > 1 else threads

    with ThreadPoolExecutor(max_workers=threads) as pool:
        running = {}
        while sorter.is_active():
            for key in sorter.get_ready():
                dep = deps[key]
                warm = results[dep].rotation if dep is not None else None
                running[pool.submit(run_point, by_key[key], warm, inner, dep and dep[1])] = key
            done, _ = wait(running, return_when=FIRST_COMPLETED)
            for fut in done:
                key = running.pop(fut)
                results[key] = fut.result()
                sorter.done(key)

    series: dict[float, list[PointResult]] = {}
    for key in sorted(results):
        series.setdefault(key[0], []).append(results[key])
    return ScanResult({spin_name(s): v for s, v in series.items()}, gap_series(series))


# ---------------------------------------------------------------------------
# output files


def point_filename(result: PointResult) -> str:
    return f"point_{spin_name(result.target_spin)}_{result.label:g}.json"


def _history_records(result: PointResult) -> list[dict[str, Any]]:
    base = {"label": result.label, "spin": result.target_spin}
    return [{**base, **asdict(b)} for b in result.batches]


def write_point(result: PointResult, directory: Path | str) -> Path:
    """Write the point record and append its batch history to ``history.jsonl``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / point_filename(result)
    path.write_text(json.dumps(result.to_dict(), indent=1) + "\n")
    with open(directory / "history.jsonl", "a") as fh:
        for record in _history_records(result):
            fh.write(json.dumps(record) + "\n")
    return path


def write_scan(scan: ScanResult, directory: Path | str) -> Path:
    """Point files, ``history.jsonl``, ``scan.csv`` and ``timing.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "history.jsonl").unlink(missing_ok=True)
    timing = {}
    for results in scan.series.values():
        for result in results:
            write_point(result, directory)
            timing[point_filename(result)] = result.timing
    (directory / "timing.json").write_text(json.dumps(timing, indent=1) + "\n")
    path = directory / "scan.csv"
    path.write_text(scan.to_csv())
    return path


def read_point(path: Path | str) -> dict[str, Any]:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read point result {path}: {exc}") from exc
