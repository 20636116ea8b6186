"""Experiment configuration and the file-based pipeline stages.

Every stage reads its inputs from ``output_dir``, writes its artifacts
there and records a ``<stage>.manifest.json`` holding the config hash and
the SHA-256 of each artifact. Downstream stages refuse to run when an
upstream manifest is missing or was produced under another config.
"""

from __future__ import annotations

import hashlib
import json
import platform
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .assess import AssessmentReport, compare, default_x0, monte_carlo, run_policy, simulate, timing_report
from .calibration import (
    DEMAND_SCALE,
    LAMBDA_SCAN,
    calibrate_reference,
    default_model,
    reference_metrics,
    select_lambda,
)
from .integrator import ContinuousInputs, validate_discretization
from .model import StationModel, reference_policy
from .mpc import ForecastPath, LogAR1Forecaster, MpcConfig, build_milp, export_mps, mpc_controller
from .scenarios import (
    ASSESSMENT,
    OPTIMIZATION,
    BrakingProfile,
    DeterministicProfiles,
    LogAR1Conditional,
    LogAR1Model,
    ProfileConfig,
    QuantizedMarginal,
    ResidualAtoms,
    fit_log_ar1,
    generate_braking,
    load_scenarios,
    quantize_marginals,
    residual_atoms,
    save_scenarios,
)
from .sdp import (
    ControlMesh,
    StateGrid,
    ValueTable,
    backward_induction_sdpa,
    backward_induction_sdpo,
    braking_axis,
    sdpa_policy,
    sdpo_policy,
)

SCALES = {"desk": (500, 1000), "full": (5000, 10000)}


class StaleArtifact(RuntimeError):
    """An upstream artifact is missing or belongs to another configuration."""


@dataclass(frozen=True)
class GridConfig:
    n_soc: int = 51
    n_pm10: int = 51
    n_braking: int = 21
    pm10_top: float | None = None  # None: twice the reference-case maximum
    n_levels: int = 21
    online_refine: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    model: StationModel = field(default_factory=default_model)
    braking: BrakingProfile = field(default_factory=lambda: BrakingProfile(profile=_default_profile()))
    n_optimization: int = 500
    n_assessment: int = 1000
    seed_optimization: int = 1
    seed_assessment: int = 2
    grid: GridConfig = GridConfig()
    k_offline: int = 10
    k_residual: int = 10
    k_online: int = 20
    kmeans_seed: int = 0
    mpc: MpcConfig = MpcConfig()
    lambda_scan: tuple = LAMBDA_SCAN
    lambda_scan_scenarios: int = 100
    output_dir: str = "runs/desk"

    def __post_init__(self):
        if self.seed_optimization == self.seed_assessment:
            raise ValueError("optimization and assessment seeds must differ")
        if min(self.n_optimization, self.n_assessment) < 1:
            raise ValueError("scenario counts must be positive")
        if len(self.braking.profile.demand) == 0:
            raise ValueError("empty demand schedule")

    def with_scale(self, scale: str) -> "ExperimentConfig":
        n_opt, n_ass = SCALES[scale]
        return replace(self, n_optimization=n_opt, n_assessment=n_ass)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "braking": self.braking.to_dict(),
            "n_optimization": self.n_optimization,
            "n_assessment": self.n_assessment,
            "seed_optimization": self.seed_optimization,
            "seed_assessment": self.seed_assessment,
            "grid": asdict(self.grid),
            "k_offline": self.k_offline,
            "k_residual": self.k_residual,
            "k_online": self.k_online,
            "kmeans_seed": self.kmeans_seed,
            "mpc": asdict(self.mpc),
            "lambda_scan": list(self.lambda_scan),
            "lambda_scan_scenarios": self.lambda_scan_scenarios,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        kw = {}
        if "model" in data:
            kw["model"] = StationModel.from_dict(data.pop("model"))
        if "braking" in data:
            kw["braking"] = BrakingProfile.from_dict(data.pop("braking"))
        if "grid" in data:
            kw["grid"] = GridConfig(**data.pop("grid"))
        if "mpc" in data:
            kw["mpc"] = MpcConfig(**data.pop("mpc"))
        if "lambda_scan" in data:
            kw["lambda_scan"] = tuple(data.pop("lambda_scan"))
        return cls(**kw, **data)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _default_profile() -> ProfileConfig:
    return ProfileConfig(demand_scale=DEMAND_SCALE)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Pipeline:
    """Stage runner bound to one config and output directory."""

    def __init__(self, cfg: ExperimentConfig, threads: int = 1, out: str | Path | None = None):
        self.cfg = cfg
        self.threads = threads
        self.out = Path(out or cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.hash = cfg.config_hash()

    # -- manifests --------------------------------------------------------------

    def _path(self, name: str) -> Path:
        return self.out / name

    def write_manifest(self, stage: str, outputs: list, extra: dict | None = None) -> Path:
        manifest = {
            "stage": stage,
            "config_hash": self.hash,
            "seeds": {"optimization": self.cfg.seed_optimization, "assessment": self.cfg.seed_assessment},
            "versions": {
                "subway_ems": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
            "outputs": {str(Path(p).name): file_sha256(p) for p in outputs},
        }
        if extra:
            manifest.update(extra)
        path = self._path(f"{stage}.manifest.json")
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return path

    def require(self, stage: str) -> dict:
        path = self._path(f"{stage}.manifest.json")
        if not path.exists():
            raise StaleArtifact(f"run `{stage}` first: {path} not found")
        manifest = json.loads(path.read_text())
        if manifest["config_hash"] != self.hash:
            raise StaleArtifact(
                f"`{stage}` artifacts were built with config {manifest['config_hash']}, current config is {self.hash}"
            )
        for name, digest in manifest["outputs"].items():
            p = self._path(name)
            if not p.exists() or file_sha256(p) != digest:
                raise StaleArtifact(f"artifact {p} changed since `{stage}` wrote it")
        return manifest

    # -- shared objects -------------------------------------------------------------

    @property
    def model(self) -> StationModel:
        return self.cfg.model

    def optimization_set(self):
        self.require("gen-scenarios")
        return load_scenarios(self._path("optimization"))

    def assessment_set(self):
        self.require("gen-scenarios")
        return load_scenarios(self._path("assessment"))

    def pm10_top(self) -> float:
        if self.cfg.grid.pm10_top is not None:
            return self.cfg.grid.pm10_top
        ref = reference_metrics(self.model, self.cfg_profiles())
        return 2.0 * ref.pm10_max

    def cfg_profiles(self) -> DeterministicProfiles:
        return DeterministicProfiles.build(self.model.time, self.cfg.braking.profile)

    def grid(self) -> StateGrid:
        g = self.cfg.grid
        return StateGrid.default(self.model, g.n_soc, g.n_pm10, self.pm10_top())

    def mesh(self) -> ControlMesh:
        return ControlMesh.build(self.model.battery, self.model.ventilation, self.cfg.grid.n_levels)

    def online_mesh(self) -> ControlMesh:
        mesh = self.mesh()
        return mesh if self.cfg.grid.online_refine <= 1 else mesh.refined(self.cfg.grid.online_refine)

    def noise_model(self) -> LogAR1Model:
        self.require("fit-noise")
        return LogAR1Model.load(self._path("noise_model"))

    def marginals(self) -> QuantizedMarginal:
        self.require("fit-noise")
        z = np.load(self._path("marginals.npy"))
        return QuantizedMarginal(z[0], z[1], self.noise_model().profiles)

    def atoms(self) -> ResidualAtoms:
        self.require("fit-noise")
        z = np.load(self._path("residual_atoms.npy"))
        return ResidualAtoms(z[0], z[1])

    def policy(self, name: str):
        m = self.model
        if name == "reference":
            return reference_policy(m)
        if name == "sdpo":
            self.require("offline-sdpo")
            table = ValueTable.load(self._path("sdpo_values"))
            cond = LogAR1Conditional(self.noise_model(), self.cfg.k_online, self.cfg.kmeans_seed)
            return sdpo_policy(m, table, self.online_mesh(), cond)
        if name == "sdpa":
            self.require("offline-sdpa")
            table = ValueTable.load(self._path("sdpa_values"))
            return sdpa_policy(m, table, self.online_mesh(), self.noise_model(), self.atoms())
        if name == "mpc":
            self.require("fit-noise")
            return mpc_controller(m, self.cfg.mpc, LogAR1Forecaster(self.noise_model()), self.grid(), self.mesh())
        raise ValueError(f"unknown policy {name!r}")

    # -- stages -------------------------------------------------------------------

    def gen_scenarios(self) -> list[Path]:
        c = self.cfg
        g = self.model.time
        opt = generate_braking(c.braking, g, c.seed_optimization, c.n_optimization, OPTIMIZATION, self.threads)
        ass = generate_braking(c.braking, g, c.seed_assessment, c.n_assessment, ASSESSMENT, self.threads)
        outs = []
        for name, s in (("optimization", opt), ("assessment", ass)):
            outs += [save_scenarios(s, self._path(name)), self._path(name).with_suffix(".json")]
        self.write_manifest("gen-scenarios", outs)
        return outs

    def fit_noise(self) -> list[Path]:
        c = self.cfg
        s = self.optimization_set()
        model = fit_log_ar1(s)
        model.save(self._path("noise_model"))
        q = quantize_marginals(s, c.k_offline, c.kmeans_seed)
        np.save(self._path("marginals.npy"), np.stack([q.support, q.probs]))
        at = residual_atoms(model, c.k_residual, c.kmeans_seed)
        np.save(self._path("residual_atoms.npy"), np.stack([at.z, at.probs]))
        outs = [self._path(n) for n in ("noise_model.npy", "noise_model.json", "marginals.npy", "residual_atoms.npy")]
        self.write_manifest("fit-noise", outs, {"a": model.a, "braking_max": float(s.b.max())})
        return outs

    def calibrate(self) -> dict:
        """Reference-case matching and the λ scan on held-out optimization scenarios."""
        c = self.cfg
        m = self.model
        cal = calibrate_reference(replace(m, economics=m.economics))
        current = reference_metrics(m, self.cfg_profiles())
        held = generate_braking(
            c.braking, m.time, c.seed_optimization + 7919, c.lambda_scan_scenarios, OPTIMIZATION, self.threads
        )
        marg = self.marginals()
        cond = LogAR1Conditional(self.noise_model(), c.k_online, c.kmeans_seed)
        grid, mesh = self.grid(), self.mesh()
        x0 = default_x0(m, held)

        def pm10_of(lam):
            ml = m.with_lambda(lam)
            table = backward_induction_sdpo(ml, grid, mesh, marg)
            return float(np.mean(run_policy(ml, sdpo_policy(ml, table, mesh, cond), held, x0)["pm10_mean"]))

        lam, tried = select_lambda(c.lambda_scan, pm10_of, current.pm10_mean)
        result = {
            "calibrated": cal,
            "current": asdict(current),
            "lambda_selected": lam,
            "lambda_scan": [{"lambda": l_, "pm10_mean": p} for l_, p in tried],
            "lambda_configured": m.economics.lambda_comfort,
        }
        path = self._path("calibration.json")
        path.write_text(json.dumps(result, indent=2))
        self.write_manifest("calibrate", [path])
        return result

    def offline_sdpo(self) -> float:
        t = time.perf_counter()
        table = backward_induction_sdpo(self.model, self.grid(), self.mesh(), self.marginals())
        seconds = time.perf_counter() - t
        table.save(self._path("sdpo_values"))
        outs = [self._path("sdpo_values.npy"), self._path("sdpo_values.json")]
        self.write_manifest("offline-sdpo", outs)
        self._record_time("sdpo", seconds)
        return seconds

    def offline_sdpa(self) -> float:
        manifest = self.require("fit-noise")
        grid = self.grid().augmented(braking_axis(manifest["braking_max"], self.cfg.grid.n_braking))
        t = time.perf_counter()
        table = backward_induction_sdpa(self.model, grid, self.mesh(), self.noise_model(), self.atoms())
        seconds = time.perf_counter() - t
        table.save(self._path("sdpa_values"))
        outs = [self._path("sdpa_values.npy"), self._path("sdpa_values.json")]
        self.write_manifest("offline-sdpa", outs)
        self._record_time("sdpa", seconds)
        return seconds

    def _record_time(self, name: str, seconds: float) -> None:
        path = self._path("timing.json")
        data = json.loads(path.read_text()) if path.exists() else {}
        data.setdefault("offline_s", {})[name] = seconds
        path.write_text(json.dumps(data, indent=2))

    def simulate_one(self, policy: str, scenario: int) -> Path:
        s = self.assessment_set()
        if not 0 <= scenario < s.count:
            raise ValueError(f"scenario index {scenario} out of range")
        m = self.model
        tr = simulate(m, self.policy(policy), s.scenario(scenario), default_x0(m, s))
        path = self._path(f"trace_{policy}_{scenario}.csv")
        with open(path, "w") as fh:
            fh.write("t,soc,pm10,u_b,u_v,import,stage_cost\n")
            cols = [np.asarray(a, float)[: m.time.T].tolist() for a in (tr.soc, tr.pm10, tr.u_b, tr.u_v, tr.imports, tr.stage_costs)]
            for t, vals in enumerate(zip(*cols)):
                fh.write(f"{t}," + ",".join(repr(v) for v in vals) + "\n")
        return path

    def assess(self, policies) -> dict:
        m = self.model
        s = self.assessment_set()
        x0 = default_x0(m, s)
        ref = run_policy(m, reference_policy(m), s, x0, self.threads)
        out, files = {}, []
        for name in policies:
            rep = monte_carlo(m, self.policy(name), s, x0, name=name, threads=self.threads, reference_metrics=ref)
            rep.save(self._path(f"report_{name}"))
            files += [self._path(f"report_{name}.npy"), self._path(f"report_{name}.json")]
            files += list(rep.write(self.out, name))
            out[name] = rep.summary()
            path = self._path("timing.json")
            data = json.loads(path.read_text()) if path.exists() else {}
            data.setdefault("assessment_s", {})[name] = rep.seconds
            path.write_text(json.dumps(data, indent=2))
        self.write_manifest(f"assess-{'-'.join(policies)}", files)
        for name in policies:
            self._path(f"report_{name}.stage").write_text(f"assess-{'-'.join(policies)}")
        return out

    def report_of(self, name: str) -> AssessmentReport:
        stage_file = self._path(f"report_{name}.stage")
        if not stage_file.exists():
            raise StaleArtifact(f"no assessment for {name!r}; run `assess --policies {name}` first")
        self.require(stage_file.read_text().strip())
        return AssessmentReport.load(self._path(f"report_{name}"))

    def compare(self, a: str, b: str, bins: int = 30) -> dict:
        cmp = compare(self.report_of(a), self.report_of(b), bins=bins)
        hist = cmp.write_histogram(self._path(f"gap_{a}_vs_{b}.csv"))
        path = self._path(f"compare_{a}_vs_{b}.json")
        path.write_text(json.dumps(cmp.summary(), indent=2))
        self.write_manifest(f"compare-{a}-{b}", [hist, path])
        return cmp.summary()

    def export_milp(self, t0: int, horizon: int, scenario: int) -> Path:
        m = self.model
        s = self.assessment_set()
        if t0 < 0 or t0 + horizon > m.time.T:
            raise ValueError("t0 + horizon must lie within the day")
        fc = LogAR1Forecaster(self.noise_model())
        sl = slice(t0 + 1, t0 + 1 + horizon)
        b_hat = fc(t0, s.b[scenario, t0], horizon)
        p = s.profiles
        path = ForecastPath(p.d[sl], np.asarray(b_hat), p.n[sl], p.c_o[sl])
        x0 = default_x0(m, s)
        art = build_milp(m, t0, x0, path, horizon, self.pm10_top())
        out = export_mps(art, self._path(f"subproblem_t{t0}_h{horizon}_s{scenario}.mps"))
        self.write_manifest(f"export-milp-t{t0}-h{horizon}-s{scenario}", [out])
        return out

    def validate_discretization(self, scenario: int = 0, stride: int = 15) -> dict:
        """Euler vs adaptive under the reference policy on one nominal path."""
        m = self.model
        profiles = self.cfg_profiles()
        T = m.time.T

        nominal = SimpleNamespace(profiles=profiles, b=np.zeros(T + 1))
        inp = ContinuousInputs.from_run(np.zeros(T), np.full(T, m.ventilation.power_high), nominal)
        x0 = default_x0(m, nominal)
        fine = validate_discretization(m, inp, x0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            coarse = validate_discretization(m, inp, x0, stride=stride)
        result = {"delta_2min": fine.to_dict(), f"delta_x{stride}": coarse.to_dict()}
        path = self._path("discretization.json")
        path.write_text(json.dumps(result, indent=2))
        self.write_manifest("validate-discretization", [path])
        return result

    def report(self, policies=("sdpo", "sdpa", "mpc")) -> dict:
        """Per-policy savings with offline and online timing."""
        rows = {}
        for name in policies:
            rows[name] = self.report_of(name).summary()
        timing_path = self._path("timing.json")
        timing = json.loads(timing_path.read_text()) if timing_path.exists() else {}
        s = self.assessment_set()
        pols = {name: self.policy(name) for name in policies}
        timing["online"] = timing_report(pols, self.model, s, offline_seconds=timing.get("offline_s", {}))
        table = {
            "config_hash": self.hash,
            "policies": {
                name: {
                    "money_savings": [r["bill_savings_mean"], r["bill_savings_std"]],
                    "objective_savings": [r["cost_savings_mean"], r["cost_savings_std"]],
                    "pm10_mean": [r["pm10_mean_mean"], r["pm10_mean_std"]],
                    "grid_energy_savings_kwh": [r["energy_savings_mean"], r["energy_savings_std"]],
                    "load_energy_savings_kwh": [r["load_savings_mean"], r["load_savings_std"]],
                    "offline_s": timing["online"][name]["offline_s"],
                    "online_ms": timing["online"][name]["online_mean_ms"],
                }
                for name, r in rows.items()
            },
            "reference_pm10_mean": next(iter(rows.values()))["reference_pm10_mean"] if rows else None,
        }
        self._path("summary.json").write_text(json.dumps(table, indent=2))
        timing_path.write_text(json.dumps(timing, indent=2))
        return table
