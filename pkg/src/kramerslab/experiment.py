"""Experiment orchestration: configs, acceptance criteria, suite runner.

The runner evaluates a fixed battery of twelve numbered criteria, each
a computation with a measured value, a threshold, and a pass verdict.
Criteria are grouped into suites (measures, fp, recovery, gamma,
stochastic) so subsets can run alone. Every artifact a suite writes is
byte-deterministic for a fixed config and seeds; wall-clock data goes
to a sidecar file only.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IoError, KramersLabError, ViolationError
from .functionals import (
    DensityFluxPath,
    DiscreteMeasure,
    concentration_bound,
    energy,
    lsi_check,
    poincare_check,
    rate_dual,
    rate_primal,
    reconstruct_optimal_b,
)
from .limit import (
    TwoStatePath,
    first_order_test_function,
    optimal_u,
    rate_limit,
    rate_limit_dual,
    s_function,
    s_variational,
)
from .measures import build_context, certified_eps_floor, gamma_log_density, laplace_errors
from .pde import (
    SolverConfig,
    default_x_grid,
    default_y_grid,
    g_hat_masses,
    left_equilibrated_profile,
    solve_fp_x,
)
from .potential import polynomial_potential, reference_potential, validate
from .quadrature import gauss_legendre_rule
from .recovery import build_initial_data, recovery_pair, verify_boundary_traces
from .stochastic import mfpt_monte_carlo, mfpt_quadrature, simulate_jump, simulate_sde, stable_dt
from .transform import build_transform, invert_y, phi_eval, y_eval
from . import __version__ as CODE_VERSION

SCHEMA_VERSION = 1
SUITES = ("measures", "fp", "recovery", "gamma", "stochastic")

DEFAULT_CONFIG = {
    "schema": SCHEMA_VERSION,
    "potential": {"name": "reference", "depth": 1.4, "tilt": 0.35},
    "eps_ladder": [0.5, 0.35, 0.25, 0.18, 0.125],
    "grids": {"x_cells": 1024, "y_cells": 512, "dt": 5e-3},
    "horizon": 1.0,
    "z_profile": {"kind": "exponential", "z0": 0.7, "decay": 1.0},
    "seeds": [7, 3, 11],
    "output_dir": "artifacts",
}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    potential: dict
    eps_ladder: tuple
    x_cells: int
    y_cells: int
    dt: float
    horizon: float
    z_profile: dict
    seeds: tuple
    output_dir: str

    def as_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "potential": dict(self.potential),
            "eps_ladder": list(self.eps_ladder),
            "grids": {"x_cells": self.x_cells, "y_cells": self.y_cells, "dt": self.dt},
            "horizon": self.horizon,
            "z_profile": dict(self.z_profile),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }


def build_potential(block: dict):
    """Potential spec from a config block, by name plus parameters."""
    if not isinstance(block, dict) or "name" not in block:
        raise ConfigError("potential: need a mapping with a 'name' entry")
    name = block["name"]
    if name == "reference":
        try:
            return reference_potential(float(block["depth"]), float(block["tilt"]))
        except KeyError as exc:
            raise ConfigError(f"potential: reference needs {exc.args[0]!r}") from None
    if name == "polynomial":
        coeffs = block.get("coefficients")
        if not isinstance(coeffs, (list, tuple)) or not coeffs:
            raise ConfigError("potential: polynomial needs a nonempty 'coefficients' list")
        domain = tuple(block.get("domain", (-3.5, 3.5)))
        return polynomial_potential([float(c) for c in coeffs], domain)
    raise ConfigError(f"potential: unknown name {name!r}")


def _power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def load_config(source) -> ExperimentConfig:
    """Validated config from a mapping, a JSON file path, or None.

    Every complaint names the offending field. The eps floor check needs
    the potential's barrier, so the potential block is validated first.
    """
    if source is None:
        raw = json.loads(json.dumps(DEFAULT_CONFIG))
    elif isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc})") from None
    if raw.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"schema: expected {SCHEMA_VERSION}, got {raw.get('schema')!r}")

    spec = build_potential(raw.get("potential"))
    try:
        report = validate(spec)
    except KramersLabError as exc:
        raise ConfigError(f"potential: {exc}") from None
    floor = certified_eps_floor(report)

    ladder = raw.get("eps_ladder")
    if not isinstance(ladder, (list, tuple)) or len(ladder) < 1:
        raise ConfigError("eps_ladder: need a nonempty list")
    ladder = tuple(float(e) for e in ladder)
    for i, e in enumerate(ladder):
        if not e > floor:
            raise ConfigError(
                f"eps_ladder[{i}]={e} at or below the certified floor "
                f"barrier/745 = {floor:.6g}"
            )
    if any(a <= b for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("eps_ladder: must decrease strictly")

    grids = raw.get("grids")
    if not isinstance(grids, dict):
        raise ConfigError("grids: need a mapping with x_cells, y_cells, dt")
    for key in ("x_cells", "y_cells"):
        n = grids.get(key)
        if not isinstance(n, int) or not _power_of_two(n) or not 2**8 <= n <= 2**14:
            raise ConfigError(f"grids.{key}: need a power of two between 2^8 and 2^14, got {n!r}")
    dt = grids.get("dt")
    if not isinstance(dt, (int, float)) or not dt > 0:
        raise ConfigError(f"grids.dt: need a positive step, got {dt!r}")

    horizon = raw.get("horizon")
    if not isinstance(horizon, (int, float)) or not horizon > 0:
        raise ConfigError(f"horizon: need a positive number, got {horizon!r}")

    z_block = raw.get("z_profile")
    _check_z_profile(z_block, float(horizon))

    seeds = raw.get("seeds")
    if not isinstance(seeds, (list, tuple)) or not seeds:
        raise ConfigError("seeds: need a nonempty list of integers")
    if any(not isinstance(s, int) or s < 0 for s in seeds):
        raise ConfigError("seeds: entries must be nonnegative integers")

    out = raw.get("output_dir")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir: need a nonempty path string")

    return ExperimentConfig(
        potential=dict(raw["potential"]),
        eps_ladder=ladder,
        x_cells=grids["x_cells"],
        y_cells=grids["y_cells"],
        dt=float(dt),
        horizon=float(horizon),
        z_profile=dict(z_block),
        seeds=tuple(int(s) for s in seeds),
        output_dir=out,
    )


def _check_z_profile(block, horizon: float) -> None:
    if not isinstance(block, dict) or "kind" not in block:
        raise ConfigError("z_profile: need a mapping with a 'kind' entry")
    kind = block["kind"]
    if kind == "exponential":
        z0, decay = block.get("z0"), block.get("decay")
        if not (isinstance(z0, (int, float)) and 0 < z0 < 1):
            raise ConfigError(f"z_profile.z0: need a value in (0, 1), got {z0!r}")
        if not (isinstance(decay, (int, float)) and decay > 0):
            raise ConfigError(f"z_profile.decay: need a positive rate, got {decay!r}")
    elif kind == "linear":
        z0, slope = block.get("z0"), block.get("slope")
        if not (isinstance(z0, (int, float)) and 0 < z0 < 1):
            raise ConfigError(f"z_profile.z0: need a value in (0, 1), got {z0!r}")
        if not (isinstance(slope, (int, float)) and slope > 0):
            raise ConfigError(f"z_profile.slope: need a positive slope, got {slope!r}")
        if z0 - slope * horizon <= 0:
            raise ConfigError("z_profile: linear profile hits zero inside the horizon")
    elif kind == "inline":
        t, z = block.get("t"), block.get("z")
        if not (isinstance(t, (list, tuple)) and isinstance(z, (list, tuple)) and len(t) == len(z) >= 2):
            raise ConfigError("z_profile: inline profile needs matching 't' and 'z' lists")
    elif kind == "file":
        p = block.get("path")
        if not isinstance(p, str) or not Path(p).is_file():
            raise ConfigError(f"z_profile.path: no such file {p!r}")
    else:
        raise ConfigError(f"z_profile.kind: unknown kind {kind!r}")


def build_z_path(block: dict, horizon: float, nodes: int = 201) -> TwoStatePath:
    """Materialize the configured slow profile on its time grid."""
    kind = block["kind"]
    if kind == "inline":
        return TwoStatePath.from_z(np.asarray(block["t"], float), np.asarray(block["z"], float))
    if kind == "file":
        t, z = read_z_profile(block["path"])
        return TwoStatePath.from_z(t, z)
    t = np.linspace(0.0, horizon, nodes)
    if kind == "exponential":
        return TwoStatePath.from_z(t, block["z0"] * np.exp(-block["decay"] * t))
    return TwoStatePath.from_z(t, block["z0"] - block["slope"] * t)


def read_z_profile(path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column CSV (t, z) with a header row."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"t", "z"} <= set(reader.fieldnames):
                raise IoError(f"{path}: need columns 't' and 'z'")
            rows = [(float(r["t"]), float(r["z"])) for r in reader]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    if len(rows) < 2:
        raise IoError(f"{path}: need at least two profile rows")
    t, z = zip(*rows)
    return np.asarray(t), np.asarray(z)


def config_hash(config: ExperimentConfig) -> str:
    payload = json.dumps(config.as_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# report containers


@dataclass(frozen=True)
class Verdict:
    criterion: str
    suite: str
    passed: bool
    measured: float
    threshold: float
    relation: str
    detail: str

    def line(self) -> str:
        word = "PASS" if self.passed else "FAIL"
        return (
            f"[{self.criterion}] {word}: measured {self.measured:.6g} "
            f"{self.relation} {self.threshold:.6g} ({self.detail})"
        )


@dataclass
class ExperimentReport:
    config_hash: str
    code_version: str
    suites: tuple
    rows: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    runtimes: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(not v.passed for v in self.verdicts)


class Workspace:
    """Shared per-run state: potential, contexts, tables, profiles."""

    def __init__(self, config: ExperimentConfig, threads: int = 1):
        self.config = config
        self.threads = max(1, int(threads))
        self.spec = build_potential(config.potential)
        self.report = validate(self.spec)
        self._ctxs: dict = {}
        self._tables: dict = {}

    def ctx(self, eps: float):
        if eps not in self._ctxs:
            self._ctxs[eps] = build_context(self.spec, self.report, eps)
        return self._ctxs[eps]

    def table(self, eps: float):
        if eps not in self._tables:
            self._tables[eps] = build_transform(self.ctx(eps))
        return self._tables[eps]

    @property
    def ladder(self) -> tuple:
        return self.config.eps_ladder

    def anchor(self) -> float:
        """The rung criteria quote as eps = 0.25, or the nearest one."""
        return min(self.ladder, key=lambda e: abs(e - 0.25))

    def z_path(self) -> TwoStatePath:
        return build_z_path(self.config.z_profile, self.config.horizon)

    def pmap(self, fn, items):
        if self.threads == 1 or len(items) <= 1:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))


def corpus_paths(nodes: int = 201) -> dict:
    """The frozen slow-profile corpus shared by the trend criteria.

    All five decrease strictly with flux bounded away from zero, and
    their time scales are resolved by the default (y_cells, dt) solver
    discretization, so the eps trend is not masked by the time-stepping
    floor at the last rung.
    """
    t = np.linspace(0.0, 1.0, nodes)
    return {
        "exp_unit": TwoStatePath.from_z(t, 0.7 * np.exp(-t)),
        "linear": TwoStatePath.from_z(t, 0.7 - 0.3 * t),
        "exp_brisk": TwoStatePath.from_z(t, 0.85 * np.exp(-1.2 * t)),
        "linear_slow": TwoStatePath.from_z(t, 0.5 - 0.2 * t),
        "eased": TwoStatePath.from_z(t, 0.8 - 0.35 * t + 0.03 * np.sin(2 * np.pi * t)),
    }


def _annotate(exc: KramersLabError, suite: str, eps) -> KramersLabError:
    return type(exc)(f"[suite={suite} eps={eps}] {exc}")


def _nonincreasing(seq, slack: float = 0.0) -> bool:
    return all(a >= b - slack for a, b in zip(seq, seq[1:]))


def _decreasing(seq) -> bool:
    return all(a > b for a, b in zip(seq, seq[1:]))


# ---------------------------------------------------------------------------
# the twelve criteria


def criterion_partition(ws: Workspace):
    """Laplace references for both partition integrals down the ladder."""
    rows, full, left = [], [], []
    for eps in ws.ladder:
        ctx = ws.ctx(eps)
        lf, ll = laplace_errors(ctx)
        ef, el = abs(float(np.expm1(lf))), abs(float(np.expm1(ll)))
        full.append(ef)
        left.append(el)
        rows.append(
            {
                "eps": eps,
                "log_z": ctx.log_z,
                "log_z_left": ctx.log_z_left,
                "log_tau": ctx.log_tau,
                "laplace_err_full": ef,
                "laplace_err_left": el,
            }
        )
    top = max(full[0], left[0])
    ok = top <= 0.25 and _decreasing(full) and _decreasing(left)
    detail = (
        f"top-rung errors full={full[0]:.4f} left={left[0]:.4f}, "
        f"both sequences strictly decreasing={_decreasing(full) and _decreasing(left)}"
    )
    return rows, Verdict("c01_partition", "measures", ok, top, 0.25, "<=", detail)


def criterion_kramers_time(ws: Workspace):
    """Escape-time quadrature against the exponential clock and Monte Carlo."""
    rep = ws.report
    rows, ratios = [], []
    for eps in ws.ladder:
        ctx = ws.ctx(eps)
        quad = mfpt_quadrature(ws.spec, eps, rep.x_a, rep.x_b)
        ratio = quad / float(np.exp(ctx.log_tau))
        ratios.append(ratio)
        rows.append({"eps": eps, "mfpt_quadrature": quad, "ratio_to_tau": ratio})
    trend = all(r > 1.0 for r in ratios) and _decreasing(ratios)

    eps_mc = ws.anchor()
    mean, se = mfpt_monte_carlo(ws.spec, rep, eps_mc, 2000, ws.config.seeds[0])
    quad_mc = mfpt_quadrature(ws.spec, eps_mc, rep.x_a, rep.x_b)
    dev_se = abs(mean - quad_mc) / se
    rows.append(
        {
            "eps": eps_mc,
            "mfpt_quadrature": quad_mc,
            "mc_mean": mean,
            "mc_stderr": se,
            "mc_dev_se": dev_se,
        }
    )
    ok = trend and dev_se <= 3.0
    detail = (
        f"ratio trend to 1 from above={trend}, MC at eps={eps_mc} n=2000 "
        f"within {dev_se:.2f} standard errors"
    )
    return rows, Verdict("c02_kramers_time", "stochastic", ok, dev_se, 3.0, "<=", detail)


REFINEMENT_RUNGS = ((256, 4e-3), (512, 1e-3), (1024, 2.5e-4))


def _refinement_paths(ws: Workspace, eps: float, rungs=REFINEMENT_RUNGS):
    """Burned-in data restricted to nested (dx, dt) resolutions."""
    ctx = ws.ctx(eps)
    x_fine = default_x_grid(ctx, 1024)
    burn = solve_fp_x(
        ctx,
        left_equilibrated_profile(ctx, x_fine),
        SolverConfig(grid=x_fine, dt=2.5e-3),
        0.05,
    )
    m_fine = burn.rho[-1] * np.diff(x_fine)
    out = []
    for n_cells, dt in rungs:
        g = default_x_grid(ctx, n_cells)
        m0 = m_fine.reshape(n_cells, 1024 // n_cells).sum(axis=1)
        out.append((n_cells, dt, solve_fp_x(ctx, m0 / np.diff(g), SolverConfig(grid=g, dt=dt), 0.5)))
    return out


def criterion_solver_consistency(ws: Workspace):
    """Vanishing defect, exact mass bookkeeping, monotone entropy."""
    eps = ws.anchor()
    ctx = ws.ctx(eps)
    triples = _refinement_paths(ws, eps)
    rows, vals, mass_devs = [], [], []
    entropy_ok = True
    for n_cells, dt, path in triples:
        val = rate_primal(ctx, path)
        vals.append(val)
        mass_devs.append(float(np.max(np.abs(path.masses.sum(axis=1) - 1.0))))
        ent = np.array(
            [energy(ctx, path.slice_measure(k)) for k in range(0, path.t_nodes.size, 20)]
        )
        entropy_ok = entropy_ok and bool(np.all(np.diff(ent) <= 1e-10))
        rows.append(
            {
                "eps": eps,
                "x_cells": n_cells,
                "dt": dt,
                "rate_primal": val,
                "mass_dev": mass_devs[-1],
            }
        )
    shrink = min(vals[0] / vals[1], vals[1] / vals[2])
    ok = shrink >= 3.0 and max(mass_devs) <= 1e-10 and entropy_ok
    detail = (
        f"defect ratios {vals[0] / vals[1]:.2f} and {vals[1] / vals[2]:.2f} per 4x "
        f"refinement, mass dev {max(mass_devs):.2e}, entropy monotone={entropy_ok}"
    )
    return rows, Verdict("c03_solver_consistency", "fp", ok, shrink, 3.0, ">=", detail)


def criterion_limit_dynamics(ws: Workspace):
    """Left-basin mass of the slow flow against the exponential decay law."""

    def one(eps):
        try:
            ctx = ws.ctx(eps)
            x = default_x_grid(ctx, 1024)
            path = solve_fp_x(
                ctx, left_equilibrated_profile(ctx, x), SolverConfig(grid=x, dt=1e-2), 3.0
            )
        except KramersLabError as exc:
            raise _annotate(exc, "fp", eps) from None
        left = path.masses[:, path.centers < ctx.landmarks.x_0].sum(axis=1)
        return float(np.max(np.abs(left - np.exp(-path.t_nodes))))

    for eps in ws.ladder:
        ws.ctx(eps)
    devs = ws.pmap(one, list(ws.ladder))
    rows = [{"eps": e, "sup_dev_from_decay": d} for e, d in zip(ws.ladder, devs)]
    anchor_dev = devs[list(ws.ladder).index(ws.anchor())]
    ok = anchor_dev <= 0.15 and _decreasing(devs)
    detail = (
        f"sup deviations {', '.join(f'{d:.4f}' for d in devs)} down the ladder, "
        f"anchor eps={ws.anchor()}"
    )
    return rows, Verdict("c04_limit_dynamics", "fp", ok, anchor_dev, 0.15, "<=", detail)


def _plugin_cost(j: float, z: float, order: int = 32) -> float:
    """Kinetic integrand evaluated on the closed-form optimal profile."""
    nodes, weights = gauss_legendre_rule(order)
    y = 0.5 * nodes
    u = optimal_u(j, z, y)
    a = j * (y + 0.5) + z * (0.5 - y)
    du = -a + (0.5 - y) * (j - z)
    return float(0.5 * np.sum(weights * (j + du) ** 2 / (4.0 * u)))


def criterion_jump_cost(ws: Workspace):
    """Variational jump cost against its closed form on a value grid."""
    vals = np.linspace(0.3, 3.0, 10)
    rows = []
    worst_var, worst_plug = 0.0, 0.0
    for j in vals:
        for z in vals:
            ref = s_function(j, z)
            var, _ = s_variational(float(j), float(z))
            plug = _plugin_cost(float(j), float(z))
            # the grid diagonal has ref = 0, where only the absolute
            # scale of the deviation is meaningful
            dev_var = abs(var - ref) / max(abs(ref), 1e-3)
            worst_var = max(worst_var, dev_var)
            worst_plug = max(worst_plug, abs(plug - ref))
            rows.append(
                {"j": float(j), "z": float(z), "s_closed_form": ref,
                 "s_variational": var, "s_plugin": plug}
            )
    ok = worst_var <= 1e-3 and worst_plug <= 1e-6
    detail = (
        f"worst variational rel dev {worst_var:.2e} on the 10x10 grid, "
        f"worst plug-in abs dev {worst_plug:.2e}"
    )
    return rows, Verdict("c05_jump_cost", "gamma", ok, worst_var, 1e-3, "<=", detail)


def criterion_limit_duality(ws: Workspace):
    """First-order dual family attains the limit rate on the corpus."""
    rows, worst = [], 0.0
    for name, path in corpus_paths().items():
        primal = rate_limit(path)
        dual = rate_limit_dual(path, [first_order_test_function(path)])
        rel = abs(primal - dual) / max(primal, 1e-300)
        worst = max(worst, rel)
        rows.append({"profile": name, "rate_limit": primal, "dual_bound": dual, "rel_gap": rel})
    ok = worst <= 1e-3
    detail = f"worst relative gap {worst:.2e} over {len(rows)} corpus profiles"
    return rows, Verdict("c06_limit_duality", "gamma", ok, worst, 1e-3, "<=", detail)


def _recovery_case(ws: Workspace, name: str, zp: TwoStatePath, eps: float):
    cfg = SolverConfig(grid=default_y_grid(ws.config.y_cells), dt=ws.config.dt)
    try:
        bundle = recovery_pair(ws.ctx(eps), ws.table(eps), zp, cfg)
        tr = verify_boundary_traces(bundle)
    except KramersLabError as exc:
        raise _annotate(exc, "recovery", eps) from None
    return {
        "profile": name,
        "eps": eps,
        "rate_value": bundle.rate_value,
        "rate_limit": rate_limit(zp),
        "gap": abs(bundle.rate_value - rate_limit(zp)),
        "initial_energy": bundle.initial_energy,
        "a_eps": bundle.a_eps,
        "left_trace_err": tr.left,
        "right_trace_err": tr.right,
    }


def criterion_recovery_trend(ws: Workspace):
    """Competitor rates close on the jump cost; boundary traces collapse."""
    corpus = corpus_paths()
    for eps in ws.ladder:
        ws.table(eps)
    cases = [(name, zp, eps) for name, zp in corpus.items() for eps in ws.ladder]
    rows = ws.pmap(lambda c: _recovery_case(ws, *c), cases)

    worst_rel, trend_ok, notes = 0.0, True, []
    for name in corpus:
        sub = [r for r in rows if r["profile"] == name]
        gaps = [r["gap"] for r in sub]
        lefts = [r["left_trace_err"] for r in sub]
        rights = [r["right_trace_err"] for r in sub]
        rel = gaps[-1] / max(sub[-1]["rate_limit"], 1e-300)
        worst_rel = max(worst_rel, rel)
        trend_ok = trend_ok and _nonincreasing(gaps[-3:]) and _nonincreasing(lefts) and _nonincreasing(rights)
        notes.append(f"{name}:{rel:.4f}")
    ok = worst_rel <= 0.10 and trend_ok
    detail = (
        "rel gap at the last rung per profile " + ", ".join(notes)
        + f"; gap tails and traces nonincreasing on every profile={trend_ok}"
    )
    return rows, Verdict("c07_recovery_trend", "recovery", ok, worst_rel, 0.10, "<=", detail)


def criterion_initial_energy(ws: Workspace):
    """Scaled entropy of the tuned initial data stays under the well depth."""
    z0 = float(ws.z_path().z0)
    bound = abs(float(ws.spec.v(np.asarray([ws.report.x_b]))[0])) + 1.0
    y = default_y_grid(ws.config.y_cells)
    rows, worst = [], -np.inf
    for eps in ws.ladder:
        ctx, table = ws.ctx(eps), ws.table(eps)
        u0, a_eps = build_initial_data(ctx, table, z0, y)
        ent = float(np.sum(g_hat_masses(table, y) * u0 * np.log(u0)))
        e0 = ctx.eps * (ent + (ctx.log_z - ctx.log_z_left))
        worst = max(worst, e0)
        rows.append({"eps": eps, "initial_energy": e0, "a_eps": a_eps, "bound": bound})
    ok = worst <= bound
    detail = f"max scaled entropy {worst:.4f} against bound {bound:.4f}, z0={z0}"
    return rows, Verdict("c08_initial_energy", "recovery", ok, worst, bound, "<=", detail)


def _edges(lo, hi, n):
    return np.linspace(lo, hi, n + 1)


def _gaussian_weights(edges, center, width):
    c = 0.5 * (edges[:-1] + edges[1:])
    w = np.exp(-0.5 * ((c - center) / width) ** 2) * np.diff(edges)
    return w / w.sum()


def criterion_inequalities(ws: Workspace):
    """Randomized battery for the three discrete functional inequalities."""
    rng = np.random.default_rng(ws.config.seeds[0])
    violations, total = 0, 0

    for _ in range(100):
        total += 1
        q = rng.uniform(0.8, 2.5)
        edges = _edges(-5.0, 5.0, 2048)
        parts = [
            _gaussian_weights(edges, rng.uniform(-1.5, 1.5), rng.uniform(0.5, 1.3))
            for _ in range(rng.integers(2, 4))
        ]
        mu = DiscreteMeasure(edges, np.sum(parts, axis=0))
        try:
            # W'' = q - 0.2 cos x >= q - 0.2 on the whole line
            lsi_check(mu, lambda x, q=q: 0.5 * q * x * x + 0.2 * np.cos(x), (-5.0, 5.0), q - 0.2)
        except ViolationError:
            violations += 1

    edges = _edges(-3.0, 3.0, 120)
    for _ in range(100):
        total += 1
        mu = DiscreteMeasure(edges, rng.uniform(0, 1, 120))
        nu = DiscreteMeasure(edges, rng.uniform(0.05, 1, 120))
        lo, hi = rng.uniform(-2.5, 0.0), rng.uniform(0.5, 2.5)
        inner = (lo + rng.uniform(0.05, 0.4), hi - rng.uniform(0.05, 0.4))
        try:
            concentration_bound(mu, nu, inner, (lo, hi))
        except ViolationError:
            violations += 1

    for _ in range(100):
        total += 1
        n = int(rng.integers(5, 60))
        x = np.sort(rng.uniform(-4, 4, n)) + 1e-5 * np.arange(n)
        w = rng.uniform(0, 1, n)
        w[rng.integers(0, n)] += 0.1
        try:
            poincare_check(rng.normal(0, 2, n), x, w, (x[0] - 0.01, x[-1] + 0.01))
        except ViolationError:
            violations += 1

    rows = [{"instances": total, "violations": violations, "seed": ws.config.seeds[0]}]
    detail = f"{violations} violations over {total} randomized instances"
    return rows, Verdict(
        "c09_inequalities", "measures", violations == 0, float(violations), 0.0, "==", detail
    )


def criterion_transform(ws: Workspace):
    """Monotone slow variable, collapsing committor gap, exact inversion."""
    rows, supdevs, worst_rt = [], [], 0.0
    monotone = True
    rep = ws.report
    rng = np.random.default_rng(7)
    probes = rng.uniform(rep.x_a - 1.0, rep.x_bplus + 1.0, 40)
    for eps in ws.ladder:
        tab = ws.table(eps)
        y = tab.y_values
        finite = np.isfinite(y)
        mono = bool(np.all(np.diff(y[finite]) > 0))
        monotone = monotone and mono
        xs = np.linspace(tab.coverage[0], tab.coverage[1], 4001)
        supdev = float(np.max(np.abs(phi_eval(tab, xs) - np.clip(y_eval(tab, xs), -0.5, 0.5))))
        rt = float(np.max(np.abs(invert_y(tab, y_eval(tab, probes)) - probes)))
        supdevs.append(supdev)
        worst_rt = max(worst_rt, rt)
        rows.append({"eps": eps, "monotone": int(mono), "sup_dev": supdev, "roundtrip_err": rt})
    ok = monotone and _nonincreasing(supdevs) and worst_rt <= 1e-9
    detail = (
        f"monotone={monotone}, committor gaps {', '.join(f'{d:.4f}' for d in supdevs)}, "
        f"worst roundtrip {worst_rt:.2e}"
    )
    return rows, Verdict("c10_transform", "measures", ok, worst_rt, 1e-9, "<=", detail)


def _perturbation_path(ctx, delta, n_cells=240, n_windows=20, dt=0.01) -> DensityFluxPath:
    """Closed-boundary path with a prescribed bump flux, exact by construction."""
    rep = ctx.landmarks
    edges = _edges(rep.x_a - 1.2, rep.x_bplus + 1.2, n_cells)
    h = np.diff(edges)
    c = 0.5 * (edges[:-1] + edges[1:])
    w = np.exp(gamma_log_density(ctx, c, "full")) * h
    t_nodes = dt * np.arange(n_windows + 1)
    s = (edges - rep.x_a) / (rep.x_b - rep.x_a)
    shape = np.where((s > 0) & (s < 1), np.sin(np.pi * np.clip(s, 0, 1)) ** 2, 0.0)
    flux = np.empty((n_windows, n_cells + 1))
    masses = np.empty((n_windows + 1, n_cells))
    masses[0] = w / w.sum()
    for k in range(n_windows):
        flux[k] = delta * shape * (1.0 + 0.3 * np.cos(t_nodes[k]))
        masses[k + 1] = masses[k] - dt * np.diff(flux[k])
    return DensityFluxPath(t_nodes, edges, masses / h[None, :], flux, ce_tol=1e-12)


def criterion_duality_sandwich(ws: Workspace):
    """Dual never exceeds primal; the reconstructed drift closes the gap."""
    eps_a = ws.anchor()
    corpus = [
        ("bump", ws.ladder[0], _perturbation_path(ws.ctx(ws.ladder[0]), 1e-3)),
        ("bump", eps_a, _perturbation_path(ws.ctx(eps_a), 1e-3)),
        ("bump_strong", eps_a, _perturbation_path(ws.ctx(eps_a), 5e-3)),
        ("bump", ws.ladder[-1], _perturbation_path(ws.ctx(ws.ladder[-1]), 1e-3)),
        ("solver", eps_a, _refinement_paths(ws, eps_a, rungs=REFINEMENT_RUNGS[:1])[0][2]),
    ]
    smooth = [
        lambda t, x: np.zeros_like(x),
        lambda t, x: 0.5 * np.sin(x),
        lambda t, x: 0.1 * x * np.exp(-t),
    ]
    rows, worst_gap, sandwich = [], 0.0, True
    for name, eps, path in corpus:
        ctx = ws.ctx(eps)
        primal = rate_primal(ctx, path)
        dual_smooth = rate_dual(ctx, path, smooth)
        sandwich = sandwich and dual_smooth <= primal + 1e-8
        dual_best = rate_dual(ctx, path, smooth + [reconstruct_optimal_b(ctx, path)])
        sandwich = sandwich and dual_best <= primal + 1e-8
        gap = abs(primal - dual_best) / max(primal, 1e-300)
        worst_gap = max(worst_gap, gap)
        rows.append(
            {"path": name, "eps": eps, "rate_primal": primal,
             "rate_dual": dual_best, "rel_gap": gap}
        )
    ok = sandwich and worst_gap <= 1e-4
    detail = f"sandwich held on all {len(corpus)} paths={sandwich}, worst closed gap {worst_gap:.2e}"
    return rows, Verdict("c11_duality_sandwich", "fp", ok, worst_gap, 1e-4, "<=", detail)


def criterion_lln(ws: Workspace):
    """Both particle systems track the exponential decay law."""
    checkpoints = (0.5, 1.0, 2.0)
    eps = ws.ladder[-1]
    ctx = ws.ctx(eps)
    n_sde = 600
    res = simulate_sde(ctx, ctx.landmarks.x_a, stable_dt(ctx), 2.0, n_sde, ws.config.seeds[1])
    rows, worst = [], 0.0
    t = res.pair.t_nodes
    for target in checkpoints:
        k = int(np.argmin(np.abs(t - target)))
        pure = float(np.exp(-t[k]))
        band = 3.0 * np.sqrt(pure * (1.0 - pure) / n_sde)
        score = abs(float(res.basin_fraction[k]) - pure) / band
        worst = max(worst, score)
        rows.append(
            {"system": "sde", "eps": eps, "t": float(t[k]),
             "empirical_z": float(res.basin_fraction[k]), "law_z": pure, "band": band}
        )

    z0, n_jump = 0.7, 100_000
    jump = simulate_jump(z0, n_jump, 2.0, ws.config.seeds[2])
    for target in checkpoints:
        k = int(np.argmin(np.abs(jump.t_nodes - target)))
        tk = float(jump.t_nodes[k])
        pure = z0 * float(np.exp(-tk))
        band = 3.0 * np.sqrt(pure * (1.0 - pure) / n_jump)
        score = abs(float(jump.z[k]) - pure) / band
        worst = max(worst, score)
        rows.append(
            {"system": "jump", "eps": 0.0, "t": tk,
             "empirical_z": float(jump.z[k]), "law_z": pure, "band": band}
        )
    ok = worst <= 1.0
    detail = (
        f"worst deviation {worst:.2f} of its statistical band, sde at eps={eps} "
        f"n={n_sde}, jump n={n_jump}"
    )
    return rows, Verdict("c12_lln", "stochastic", ok, worst, 1.0, "<=", detail)


CRITERIA = (
    ("c01_partition", "measures", criterion_partition),
    ("c02_kramers_time", "stochastic", criterion_kramers_time),
    ("c03_solver_consistency", "fp", criterion_solver_consistency),
    ("c04_limit_dynamics", "fp", criterion_limit_dynamics),
    ("c05_jump_cost", "gamma", criterion_jump_cost),
    ("c06_limit_duality", "gamma", criterion_limit_duality),
    ("c07_recovery_trend", "recovery", criterion_recovery_trend),
    ("c08_initial_energy", "recovery", criterion_initial_energy),
    ("c09_inequalities", "measures", criterion_inequalities),
    ("c10_transform", "measures", criterion_transform),
    ("c11_duality_sandwich", "fp", criterion_duality_sandwich),
    ("c12_lln", "stochastic", criterion_lln),
)


def gamma_ladder_rows(ws: Workspace):
    """Per-eps recovery ladder for the configured profile, for plot data."""
    zp = ws.z_path()
    target = rate_limit(zp)

    def one(eps):
        row = _recovery_case(ws, "configured", zp, eps)
        return {"eps": eps, "rate_eps": row["rate_value"], "rate_limit": target,
                "gap": row["gap"]}

    return ws.pmap(one, list(ws.ladder))


# ---------------------------------------------------------------------------
# runner and artifacts


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, rows, columns=None) -> None:
    """Deterministic delimited dump: first-seen column order, repr floats."""
    path = Path(path)
    if columns is None:
        columns = list(dict.fromkeys(key for row in rows for key in row))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(row.get(c, "")) for c in columns])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def resolve_suites(suite: str) -> tuple:
    if suite == "all":
        return SUITES
    if suite not in SUITES:
        raise ConfigError(f"suite: expected one of {', '.join(SUITES + ('all',))}, got {suite!r}")
    return (suite,)


def run(config: ExperimentConfig, suite: str = "all", out_dir=None, threads: int = 1) -> ExperimentReport:
    """Evaluate the selected criteria and persist rows plus verdicts.

    Artifacts: one CSV per criterion, a gamma ladder CSV when that suite
    runs, report.json with rows and verdicts, verdicts.json with the
    verdicts alone, and meta.json as the only file carrying wall-clock
    information.
    """
    wanted = resolve_suites(suite)
    ws = Workspace(config, threads=threads)
    out = Path(out_dir) if out_dir is not None else Path(config.output_dir)
    digest = config_hash(config)
    report = ExperimentReport(config_hash=digest, code_version=CODE_VERSION, suites=wanted)

    stamp = {"config_hash": digest, "code_version": CODE_VERSION}
    for name, owner, fn in CRITERIA:
        if owner not in wanted:
            continue
        t0 = time.perf_counter()
        rows, verdict = fn(ws)
        report.runtimes[name] = time.perf_counter() - t0
        rows = [{**row, **stamp} for row in rows]
        write_csv(out / f"{name}.csv", rows)
        report.rows.extend({"criterion": name, "suite": owner, **row} for row in rows)
        report.verdicts.append(verdict)

    if "gamma" in wanted:
        t0 = time.perf_counter()
        rows = [{**row, **stamp} for row in gamma_ladder_rows(ws)]
        report.runtimes["gamma_ladder"] = time.perf_counter() - t0
        write_csv(out / "gamma_ladder.csv", rows)
        report.rows.extend({"criterion": "gamma_ladder", "suite": "gamma", **row} for row in rows)

    _write_json(out / "verdicts.json", {
        "schema": SCHEMA_VERSION,
        "config_hash": digest,
        "code_version": CODE_VERSION,
        "suites": list(wanted),
        "verdicts": [vars(v) for v in report.verdicts],
    })
    _write_json(out / "report.json", {
        "schema": SCHEMA_VERSION,
        "config_hash": digest,
        "code_version": CODE_VERSION,
        "suites": list(wanted),
        "rows": report.rows,
        "verdicts": [vars(v) for v in report.verdicts],
    })
    _write_json(out / "meta.json", {
        "written_at_unix": time.time(),
        "runtimes_s": report.runtimes,
    })
    return report


def _write_json(path, payload) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def load_report(path) -> ExperimentReport:
    """Rehydrate a report.json written by run."""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no report at {path}")
    payload = json.loads(path.read_text())
    report = ExperimentReport(
        config_hash=payload["config_hash"],
        code_version=payload["code_version"],
        suites=tuple(payload["suites"]),
        rows=payload["rows"],
    )
    report.verdicts.extend(Verdict(**v) for v in payload["verdicts"])
    return report


_SKIP_PLOT_KEYS = {"criterion", "suite", "profile", "path", "system", "config_hash", "code_version"}


def emit_plotdata(report: ExperimentReport, out_path) -> Path:
    """Long-format CSV (experiment, eps, quantity, value) for plotting.

    Every numeric row field becomes one line; an empty report leaves the
    header row alone. The payload carries no timestamps, so identical
    reports produce identical bytes.
    """
    lines = []
    for row in report.rows:
        tag = row.get("criterion", "rows")
        for part_key in ("profile", "path", "system"):
            if row.get(part_key):
                tag = f"{tag}/{row[part_key]}"
        eps = row.get("eps", "")
        for key, value in row.items():
            if key in _SKIP_PLOT_KEYS or key == "eps":
                continue
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                continue
            lines.append({"experiment": tag, "eps": eps, "quantity": key, "value": value})
    write_csv(out_path, lines, columns=["experiment", "eps", "quantity", "value"])
    return Path(out_path)
