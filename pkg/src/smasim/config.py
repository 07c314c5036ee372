"""YAML scenario files: validation, normalization, round-tripping.

A scenario file is a plain mapping with a schema_version and optional
sections for grid, material, loading, time, solver and certificates.
Loading normalizes it to the fully explicit form (every default written
out), so a saved configuration documents exactly what will run.  All
structural violations are collected before raising, and the semantic
pass afterwards does the same, so a broken file reports every problem
in one go instead of one per edit-and-retry cycle.
"""

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from .energy import FACE_NAMES, LoadingProgram, PiecewiseLinearProfile
from .errors import ConfigError
from .evolution import CertificateOptions, Scenario, TimeGrid
from .fields import Grid
from .material import MaterialSpec, default_wells
from .solver import SolverParams

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "label", "seed", "grid", "material",
             "loading", "time", "solver", "certificates", "relax_initial",
             "output_dir", "dump_stride"}
_GRID_KEYS = {"shape", "origin", "extents"}
_MATERIAL_KEYS = {"martensite_depth", "p", "q", "r", "s", "eps_reg", "rho",
                  "dissipation_weight"}
_LOADING_KEYS = {"body_force", "body_profile", "dirichlet_faces",
                 "dirichlet_matrix", "dirichlet_shift", "dirichlet_profile"}
_TIME_KEYS = {"horizon", "steps"}
_SOLVER_KEYS = {"gradient_tolerance", "max_iterations", "memory",
                "backtrack", "sufficient_decrease", "max_backtracks",
                "smoothing_schedule", "restarts", "restart_amplitude",
                "stage_factor", "value_tolerance", "stall_window"}
_CERT_KEYS = {"stability", "injectivity_stride", "voxels_per_cell",
              "distortion_exponent", "work_tolerance"}
_PROFILE_KINDS = ("constant", "ramp", "knots")


class _Collector:
    """Accumulates violation messages and typed field reads."""

    def __init__(self):
        self.violations = []

    def err(self, msg):
        self.violations.append(msg)

    def section(self, data, name, allowed):
        raw = data.get(name)
        if raw is None:
            return {}
        if not isinstance(raw, dict):
            self.err(f"{name}: must be a mapping")
            return {}
        for key in sorted(set(raw) - allowed):
            self.err(f"{name}: unknown key {key!r}")
        return raw

    def number(self, sec, raw, key, default, integer=False, allow_none=False):
        if key not in raw:
            return default
        v = raw[key]
        if v is None and allow_none:
            return None
        kinds = (int,) if integer else (int, float)
        if isinstance(v, bool) or not isinstance(v, kinds):
            want = "an integer" if integer else "a number"
            self.err(f"{sec}.{key}: must be {want}, got {v!r}")
            return default
        return int(v) if integer else float(v)

    def flag(self, sec, raw, key, default):
        v = raw.get(key, default)
        if not isinstance(v, bool):
            self.err(f"{sec}.{key}: must be true or false, got {v!r}")
            return default
        return v

    def vector(self, sec, raw, key, default, length):
        if key not in raw:
            return list(default)
        v = raw[key]
        ok = (isinstance(v, list) and len(v) == length
              and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                      for x in v))
        if not ok:
            self.err(f"{sec}.{key}: must be a list of {length} numbers")
            return list(default)
        return [float(x) for x in v]

    def profile(self, sec, raw, key, default):
        if key not in raw:
            return dict(default)
        v = raw[key]
        if not isinstance(v, dict) or v.get("kind") not in _PROFILE_KINDS:
            self.err(f"{sec}.{key}: must be a mapping with kind one of "
                     f"{_PROFILE_KINDS}")
            return dict(default)
        kind = v["kind"]
        out = {"kind": kind}
        sub = f"{sec}.{key}"
        if kind == "constant":
            extra = set(v) - {"kind", "value"}
            out["value"] = self.number(sub, v, "value", 1.0)
        elif kind == "ramp":
            extra = set(v) - {"kind", "horizon", "start", "end"}
            out["horizon"] = self.number(sub, v, "horizon", 1.0)
            out["start"] = self.number(sub, v, "start", 0.0)
            out["end"] = self.number(sub, v, "end", 1.0)
        else:
            extra = set(v) - {"kind", "times", "values"}
            for part in ("times", "values"):
                seq = v.get(part)
                if (not isinstance(seq, list) or not seq or
                        any(isinstance(x, bool) or
                            not isinstance(x, (int, float)) for x in seq)):
                    self.err(f"{sub}.{part}: must be a nonempty number list")
                    seq = [0.0]
                out[part] = [float(x) for x in seq]
        for key2 in sorted(extra):
            self.err(f"{sub}: unknown key {key2!r}")
        return out


def _build_profile(spec):
    if spec["kind"] == "constant":
        return PiecewiseLinearProfile.constant(spec["value"])
    if spec["kind"] == "ramp":
        return PiecewiseLinearProfile.ramp(spec["horizon"], spec["start"],
                                           spec["end"])
    return PiecewiseLinearProfile(tuple(spec["times"]), tuple(spec["values"]))


@dataclass(frozen=True)
class ScenarioConfig:
    """Normalized scenario description with builders for every component.

    Instances always hold the fully explicit form; two configs are equal
    exactly when they describe the same run.
    """

    label: str
    seed: int
    relax_initial: bool
    grid: dict
    material: dict
    loading: dict
    time: dict
    solver: dict
    certificates: dict

    # ---- construction ---------------------------------------------------

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError(["top level must be a mapping"])
        c = _Collector()
        for key in sorted(set(data) - _TOP_KEYS):
            c.err(f"unknown top-level key {key!r}")
        if data.get("schema_version") != SCHEMA_VERSION:
            c.err(f"schema_version: must be {SCHEMA_VERSION}, got "
                  f"{data.get('schema_version')!r}")

        label = data.get("label", "")
        if not isinstance(label, str):
            c.err(f"label: must be a string, got {label!r}")
            label = ""
        seed = c.number("", {"seed": data.get("seed", 0)}, "seed", 0,
                        integer=True)
        relax = c.flag("", {"relax_initial": data.get("relax_initial", True)},
                       "relax_initial", True)

        raw = c.section(data, "grid", _GRID_KEYS)
        shape = raw.get("shape")
        if (not isinstance(shape, list) or len(shape) != 3 or
                any(isinstance(n, bool) or not isinstance(n, int)
                    for n in shape)):
            c.err("grid.shape: must be a list of 3 integers")
            shape = [3, 3, 3]
        grid = {"shape": list(shape),
                "origin": c.vector("grid", raw, "origin", (0.0,) * 3, 3),
                "extents": c.vector("grid", raw, "extents", (1.0,) * 3, 3)}

        raw = c.section(data, "material", _MATERIAL_KEYS)
        material = {
            "martensite_depth": c.number("material", raw,
                                         "martensite_depth", 0.02),
            "p": c.number("material", raw, "p", 8.0),
            "q": c.number("material", raw, "q", 2.0),
            "r": c.number("material", raw, "r", 2.0),
            "s": c.number("material", raw, "s", 8.5),
            "eps_reg": c.number("material", raw, "eps_reg", 1e-3),
            "rho": c.number("material", raw, "rho", None, allow_none=True),
            "dissipation_weight": c.number("material", raw,
                                           "dissipation_weight", 0.05),
        }

        raw = c.section(data, "loading", _LOADING_KEYS)
        faces = raw.get("dirichlet_faces", [])
        if (not isinstance(faces, list)
                or any(not isinstance(f, str) for f in faces)):
            c.err("loading.dirichlet_faces: must be a list of face names")
            faces = []
        for f in faces:
            if f not in FACE_NAMES:
                c.err(f"loading.dirichlet_faces: unknown face {f!r}; "
                      f"use one of {FACE_NAMES}")
        matrix = raw.get("dirichlet_matrix", [[0.0] * 3] * 3)
        ok = (isinstance(matrix, list) and len(matrix) == 3 and
              all(isinstance(row, list) and len(row) == 3 and
                  all(isinstance(x, (int, float)) and not isinstance(x, bool)
                      for x in row) for row in matrix))
        if not ok:
            c.err("loading.dirichlet_matrix: must be a 3x3 number matrix")
            matrix = [[0.0] * 3] * 3
        loading = {
            "body_force": c.vector("loading", raw, "body_force",
                                   (0.0,) * 3, 3),
            "body_profile": c.profile("loading", raw, "body_profile",
                                      {"kind": "constant", "value": 1.0}),
            "dirichlet_faces": [str(f) for f in faces],
            "dirichlet_matrix": [[float(x) for x in row] for row in matrix],
            "dirichlet_shift": c.vector("loading", raw, "dirichlet_shift",
                                        (0.0,) * 3, 3),
            "dirichlet_profile": c.profile("loading", raw,
                                           "dirichlet_profile",
                                           {"kind": "constant",
                                            "value": 0.0}),
        }

        raw = c.section(data, "time", _TIME_KEYS)
        time = {"horizon": c.number("time", raw, "horizon", 1.0),
                "steps": c.number("time", raw, "steps", 16, integer=True)}

        raw = c.section(data, "solver", _SOLVER_KEYS)
        defaults = SolverParams()
        solver = {}
        for key in sorted(_SOLVER_KEYS - {"smoothing_schedule"}):
            integer = key in ("max_iterations", "memory", "max_backtracks",
                              "restarts", "stall_window")
            solver[key] = c.number("solver", raw, key,
                                   getattr(defaults, key), integer=integer)
        sched = raw.get("smoothing_schedule")
        if sched is None:
            sched = [list(pair) for pair in defaults.smoothing_schedule]
        elif (not isinstance(sched, list) or not sched or
              any(not isinstance(pair, list) or len(pair) != 2 or
                  any(isinstance(x, bool) or not isinstance(x, (int, float))
                      for x in pair) for pair in sched)):
            c.err("solver.smoothing_schedule: must be a nonempty list of "
                  "[tau, eta] pairs")
            sched = [list(pair) for pair in defaults.smoothing_schedule]
        solver["smoothing_schedule"] = [[float(a), float(b)]
                                        for a, b in sched]

        raw = c.section(data, "certificates", _CERT_KEYS)
        cdef = CertificateOptions()
        certificates = {
            "stability": c.flag("certificates", raw, "stability",
                                cdef.stability),
            "injectivity_stride": c.number("certificates", raw,
                                           "injectivity_stride",
                                           cdef.injectivity_stride,
                                           integer=True),
            "voxels_per_cell": c.number("certificates", raw,
                                        "voxels_per_cell",
                                        cdef.voxels_per_cell, integer=True),
            "distortion_exponent": c.number("certificates", raw,
                                            "distortion_exponent",
                                            cdef.distortion_exponent),
            "work_tolerance": c.number("certificates", raw, "work_tolerance",
                                       cdef.work_tolerance),
        }

        if c.violations:
            raise ConfigError(c.violations)
        cfg = cls(label=label, seed=seed, relax_initial=relax, grid=grid,
                  material=material, loading=loading, time=time,
                  solver=solver, certificates=certificates)
        cfg._check_semantics()
        return cfg

    def _check_semantics(self):
        """Build every component once, collecting all constructor errors."""
        problems = []
        mat = None
        for name, build in (("grid", self.build_grid),
                            ("material", self.build_material),
                            ("loading", self.build_program),
                            ("time", self.build_time_grid),
                            ("solver", self.build_solver),
                            ("certificates", self.build_certificates)):
            try:
                built = build()
            except (ValueError, ArithmeticError) as exc:
                problems.append(f"{name}: {exc}")
                continue
            if name == "material":
                mat = built
        if self.certificates["injectivity_stride"] > 0:
            if mat is not None:
                problems.extend(f"material: {v} (required by the "
                                "injectivity certificate)"
                                for v in mat.corollary_regime_violations())
            if not self.certificates["distortion_exponent"] > 2.0:
                problems.append(
                    "certificates: distortion_exponent must be > 2 for the "
                    "distortion bound to control local invertibility, got "
                    f"{self.certificates['distortion_exponent']}")
        if problems:
            raise ConfigError(problems)

    # ---- serialization --------------------------------------------------

    def to_dict(self):
        out = {"schema_version": SCHEMA_VERSION}
        out.update(asdict(self))
        return out

    @classmethod
    def load(cls, path):
        text = Path(path).read_text()
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError([f"not valid YAML: {exc}"]) from exc
        return cls.from_dict(data)

    def save(self, path):
        Path(path).write_text(
            yaml.safe_dump(self.to_dict(), sort_keys=True))

    # ---- builders --------------------------------------------------------

    def build_grid(self):
        return Grid(tuple(self.grid["shape"]), tuple(self.grid["origin"]),
                    tuple(self.grid["extents"]))

    def build_material(self):
        m = self.material
        wells = default_wells(martensite_depth=m["martensite_depth"])
        weights = np.full(len(wells), m["dissipation_weight"])
        return MaterialSpec(wells=wells, p=m["p"], q=m["q"], r=m["r"],
                            s=m["s"], eps_reg=m["eps_reg"], rho=m["rho"],
                            dissipation_weights=weights)

    def build_program(self):
        ld = self.loading
        return LoadingProgram(
            body_force=np.array(ld["body_force"]),
            body_profile=_build_profile(ld["body_profile"]),
            dirichlet_faces=tuple(ld["dirichlet_faces"]),
            dirichlet_matrix=np.array(ld["dirichlet_matrix"]),
            dirichlet_shift=np.array(ld["dirichlet_shift"]),
            dirichlet_profile=_build_profile(ld["dirichlet_profile"]))

    def build_time_grid(self):
        return TimeGrid(horizon=self.time["horizon"],
                        steps=self.time["steps"])

    def build_solver(self):
        kw = dict(self.solver)
        kw["smoothing_schedule"] = tuple(
            tuple(pair) for pair in kw["smoothing_schedule"])
        return SolverParams(**kw)

    def build_certificates(self):
        return CertificateOptions(**self.certificates)

    def to_scenario(self):
        return Scenario(grid=self.build_grid(),
                        material=self.build_material(),
                        program=self.build_program(),
                        time_grid=self.build_time_grid(),
                        solver=self.build_solver(),
                        certificates=self.build_certificates(),
                        relax_initial=self.relax_initial,
                        seed=self.seed,
                        label=self.label)

    def summary_lines(self):
        g = self.grid
        shape = "x".join(str(n) for n in g["shape"])
        faces = ",".join(self.loading["dirichlet_faces"]) or "none"
        m = self.material
        return [
            f"scenario {self.label or '(unlabeled)'}: grid {shape}, "
            f"{self.time['steps']} steps to t = {self.time['horizon']:g}, "
            f"seed {self.seed}",
            f"material: p={m['p']:g} q={m['q']:g} r={m['r']:g} s={m['s']:g} "
            f"eps_reg={m['eps_reg']:g}, martensite depth "
            f"{m['martensite_depth']:g}",
            f"loading: driven faces {faces}, body force "
            f"{tuple(self.loading['body_force'])}",
            f"certificates: stability {'on' if self.certificates['stability'] else 'off'}, "
            f"injectivity stride {self.certificates['injectivity_stride']}",
        ]
