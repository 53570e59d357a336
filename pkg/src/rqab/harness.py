"""Parameter-grid experiments: signed relative errors of every method against a truth.

``run_grid`` writes one CSV row per (lambda, alpha, method).  The CSV holds
no timing so that reruns are byte-identical; per-row runtimes go to a
``.runtime.csv`` sidecar.  ``emit_heatmap_data`` pivots a grid CSV into one
alpha-by-lambda matrix per method and renders each as a small SVG.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import csvio
from .config import model_from_config
from .exactbench import exact_mm1_gi, hazard_rate_approx, hg_approx, wg_approx
from .exceptions import InapplicableError, ParameterError, RQError
from .rqcore import SQRT2, Algorithm, QueueModel, solve
from .sim import SimConfig, simulate_queue
from .wck import WckSurface, load_or_build_surface

__all__ = ["GridSpec", "Truth", "GRID_METHODS", "run_grid", "emit_heatmap_data", "read_grid"]

GRID_SCHEMA = "rqab.grid/1"
RUNTIME_SCHEMA = "rqab.grid-runtime/1"
HEATMAP_SCHEMA = "rqab.heatmap/1"
GAPS_SCHEMA = "rqab.heatmap-gaps/1"

GRID_METHODS = ("RQFirst", "RQRefined", "WG", "HazardRate", "HG", "HGModified")
COLUMNS = ["lambda", "alpha", "method", "applicable", "value", "truth", "truth_source",
           "rel_err", "rel_err_clipped", "b_used", "note"]

DESK_LAMBDAS = (0.75, 0.9, 1.0, 1.1, 1.25, 2.0)
DESK_ALPHAS = (1.0, 1 / 8, 1 / 32, 1 / 128, 1 / 1024)


class Truth(str, Enum):
    AUTO = "auto"
    EXACT = "ExactMM1GI"
    SIMULATION = "Simulation"


@dataclass(frozen=True)
class GridSpec:
    """Grid of (lambda, alpha) cells over one model template.

    ``model`` is a queue config without ``lambda``/``alpha``.  Simulation
    truth doubles the run length from ``sim_run_time`` until the CI
    half-width is below ``sim_rel_ci`` of the estimate or ``sim_run_cap`` is
    reached; both are in simulated time so results stay reproducible.
    """

    lambda_values: tuple = DESK_LAMBDAS
    alpha_values: tuple = DESK_ALPHAS
    model: dict = field(default_factory=dict)
    truth: Truth = Truth.AUTO
    methods: tuple = GRID_METHODS
    clip: float = 0.30
    b: float | str = SQRT2
    seed: int = 0
    substitute_hazard: bool = False
    sim_run_time: float = 2e5
    sim_run_cap: float = 3.2e6
    sim_rel_ci: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "lambda_values", tuple(float(v) for v in self.lambda_values))
        object.__setattr__(self, "alpha_values", tuple(float(v) for v in self.alpha_values))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "truth", Truth(self.truth))
        if not self.lambda_values or not self.alpha_values:
            raise ParameterError("grid needs at least one lambda and one alpha")
        if any(not (v > 0 and math.isfinite(v)) for v in self.lambda_values + self.alpha_values):
            raise ParameterError("grid values must be positive and finite")
        if not self.clip > 0:
            raise ParameterError(f"clip must be positive, got {self.clip}")
        bad = [m for m in self.methods if m not in GRID_METHODS]
        if bad or not self.methods:
            raise ParameterError(f"methods must be a nonempty subset of {GRID_METHODS}, got {bad}")
        if {"lambda", "alpha"} & set(self.model):
            raise ParameterError("the model template must not fix lambda or alpha")
        if isinstance(self.b, str) and self.b != "calibrated":
            raise ParameterError(f"b must be a number or 'calibrated', got {self.b!r}")
        if not (0 < self.sim_run_time <= self.sim_run_cap and 0 < self.sim_rel_ci):
            raise ParameterError("need 0 < sim_run_time <= sim_run_cap and sim_rel_ci > 0")

    @classmethod
    def full(cls, **kw) -> "GridSpec":
        """The 23 x 14 grid: lambda = 1 -+ 2^-k around one, alpha = 2^-k for k = 0..13."""
        lams = sorted({1 - 2.0**-k for k in range(1, 11)} | {1 + 2.0**-k for k in range(-2, 11)})
        return cls(lambda_values=lams, alpha_values=[2.0**-k for k in range(14)], **kw)

    @classmethod
    def from_config(cls, cfg: dict) -> "GridSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(cfg) - known
        if unknown:
            raise ParameterError(f"unknown grid config fields {sorted(unknown)}")
        return cls(**cfg)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["truth"] = self.truth.value
        d["lambda_values"] = list(self.lambda_values)
        d["alpha_values"] = list(self.alpha_values)
        d["methods"] = list(self.methods)
        return d


# -- truth ------------------------------------------------------------------------------


def _cell_seed(seed: int, i: int, j: int) -> int:
    return int(np.random.SeedSequence([seed, i, j]).generate_state(1, np.uint64)[0])


def _truth(grid: GridSpec, model: QueueModel, seed: int) -> tuple[float, str]:
    exact_ok = model.is_poisson and model.has_exponential_service
    if grid.truth is Truth.EXACT or (grid.truth is Truth.AUTO and exact_ok):
        return exact_mm1_gi(model), "formula"
    run = grid.sim_run_time
    while True:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est = simulate_queue(SimConfig(model, run, seed=seed))
        if est.ci_halfwidth <= grid.sim_rel_ci * est.mean_virtual_wait or run >= grid.sim_run_cap:
            break
        run = min(2 * run, grid.sim_run_cap)
    return est.mean_virtual_wait, f"simulation:seed={seed};run={run:g};halfwidth={est.ci_halfwidth:.6g}"


# -- methods ----------------------------------------------------------------------------


def _evaluate(method: str, model: QueueModel, grid: GridSpec, wck: WckSurface | None):
    """``(value, applicable, b_used, note)`` for one method in one cell."""
    if method in ("RQFirst", "RQRefined"):
        algo = Algorithm.FIRST if method == "RQFirst" else Algorithm.REFINED
        sol = solve(model, algo, grid.b, wck)
        note = "c clamped to surface" if sol.diagnostics.get("clamped") else ""
        return sol.z, True, sol.b_used, note
    if method == "WG":
        res = wg_approx(model)
        if not res.applicable and grid.substitute_hazard:
            sub = hazard_rate_approx(model)
            return sub.value, False, None, "HazardRate substituted"
        return res.value, res.applicable, None, res.note
    if method == "HazardRate":
        res = hazard_rate_approx(model)
    else:
        res = hg_approx(model, modified_for_gi=method == "HGModified")
    return res.value, res.applicable, None, res.note


def _run_cell(grid: GridSpec, template: QueueModel, wck, i: int, j: int):
    lam, alpha = grid.lambda_values[i], grid.alpha_values[j]
    model = template.with_lam(lam).with_alpha(alpha)
    seed = _cell_seed(grid.seed, i, j)
    t0 = time.perf_counter()
    truth, source = _truth(grid, model, seed)
    t_truth = time.perf_counter() - t0
    rows, times = [], []
    for method in grid.methods:
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                value, ok, b_used, note = _evaluate(method, model, grid, wck)
            except (RQError, InapplicableError) as exc:
                value, ok, b_used, note = math.nan, False, None, f"failed: {exc}"
        has_value = math.isfinite(value) and (ok or note == "HazardRate substituted")
        err = (value - truth) / truth if has_value and truth != 0 else math.nan
        clipped = float(np.clip(err, -grid.clip, grid.clip)) if math.isfinite(err) else math.nan
        rows.append([lam, alpha, method, ok, value, truth, source, err, clipped, b_used, note])
        times.append([lam, alpha, method, time.perf_counter() - t0 + t_truth / len(grid.methods)])
    return (j, i), rows, times


def run_grid(grid: GridSpec, out_path, n_jobs: int = 1, wck: WckSurface | None = None,
             cache_dir=None) -> Path:
    """Evaluate every cell and write the grid CSV; returns its path.

    Cells are independent and may run in a process pool; rows are written
    in (alpha, lambda, method) grid order whatever the completion order.
    """
    template = model_from_config({**grid.model, "lambda": 1.0, "alpha": 1.0})
    if "RQRefined" in grid.methods and wck is None:
        wck = load_or_build_surface(template.zero_exp.k, cache_dir=cache_dir)
    cells = [(i, j) for j in range(len(grid.alpha_values)) for i in range(len(grid.lambda_values))]
    t0 = time.perf_counter()
    if n_jobs == 1:
        results = [_run_cell(grid, template, wck, i, j) for i, j in cells]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(_run_cell)(grid, template, wck, i, j) for i, j in cells)
    results.sort(key=lambda r: r[0])
    out_path = Path(out_path)
    meta = {"grid": grid.to_dict()}
    csvio.write(out_path, GRID_SCHEMA, COLUMNS, [row for _, rows, _ in results for row in rows], meta)
    runtime_rows = [row for _, _, times in results for row in times]
    csvio.write(runtime_path(out_path), RUNTIME_SCHEMA, ["lambda", "alpha", "method", "seconds"], runtime_rows,
                {"total_seconds": round(time.perf_counter() - t0, 3), "n_jobs": n_jobs})
    return out_path


def runtime_path(out_path) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.stem + ".runtime.csv")


def _float(s: str) -> float:
    return float(s) if s not in ("", None) else math.nan


def read_grid(csv_path) -> tuple[dict, list[dict]]:
    """Grid CSV rows with numeric fields parsed."""
    meta, rows = csvio.read(csv_path, GRID_SCHEMA)
    for r in rows:
        for key in ("lambda", "alpha", "value", "truth", "rel_err", "rel_err_clipped", "b_used"):
            r[key] = _float(r[key])
        r["applicable"] = r["applicable"] == "true"
    return meta, rows


# -- heat maps ----------------------------------------------------------------------------

_NEUTRAL = np.array([247, 247, 247])
_OVER = np.array([33, 102, 172])  # blue: approximation too high
_UNDER = np.array([178, 24, 43])  # red: approximation too low


def diverging_color(err: float, clip: float) -> str:
    if not math.isfinite(err):
        return "#%02x%02x%02x" % tuple(_NEUTRAL)
    x = float(np.clip(err / clip, -1.0, 1.0))
    end = _OVER if x > 0 else _UNDER
    rgb = np.rint(_NEUTRAL + abs(x) * (end - _NEUTRAL)).astype(int)
    return "#%02x%02x%02x" % tuple(rgb)


def _svg(method: str, alphas, lambdas, mat: np.ndarray, clip: float) -> str:
    cw, ch, left, top = 56, 28, 90, 40
    width = left + cw * len(lambdas) + 20
    height = top + ch * len(alphas) + 60
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<text x="{left}" y="20" font-size="13">{method}: signed relative error (clip {clip:g})</text>']
    for r, a in enumerate(alphas):
        y = top + r * ch
        out.append(f'<text x="{left - 6}" y="{y + ch / 2 + 4}" text-anchor="end">{a:.4g}</text>')
        for c, _ in enumerate(lambdas):
            e = mat[r, c]
            x = left + c * cw
            label = f"{e:+.1%}" if math.isfinite(e) else "n/a"
            out.append(f'<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{diverging_color(e, clip)}" '
                       f'stroke="#ffffff"/>')
            out.append(f'<text x="{x + cw / 2}" y="{y + ch / 2 + 4}" text-anchor="middle" font-size="9">'
                       f'{label}</text>')
    yb = top + ch * len(alphas) + 16
    for c, lam in enumerate(lambdas):
        out.append(f'<text x="{left + c * cw + cw / 2}" y="{yb}" text-anchor="middle">{lam:.4g}</text>')
    out.append(f'<text x="{left - 6}" y="{yb}" text-anchor="end">alpha \\ lambda</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_heatmap_data(csv_path, out_path, svg: bool = True) -> dict:
    """Write ``heatmap_<method>.csv`` (and ``.svg``) plus ``gaps.csv`` into ``out_path``.

    Matrices hold raw signed errors (rows alpha, columns lambda); the
    rendering saturates at the grid's clip.  Missing or inapplicable cells
    are blank in the matrix, neutral in the picture, and listed in the gaps
    file.
    """
    meta, rows = read_grid(csv_path)
    clip = float(meta.get("grid", {}).get("clip", 0.30))
    lambdas = list(dict.fromkeys(r["lambda"] for r in rows))
    alphas = list(dict.fromkeys(r["alpha"] for r in rows))
    if "grid" in meta:
        lambdas = [float(v) for v in meta["grid"]["lambda_values"]]
        alphas = [float(v) for v in meta["grid"]["alpha_values"]]
    methods = list(dict.fromkeys(r["method"] for r in rows))
    if "grid" in meta:
        methods = list(meta["grid"]["methods"])
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    index = {(r["method"], r["lambda"], r["alpha"]): r for r in rows}
    written, gaps = {}, []
    for m in methods:
        mat = np.full((len(alphas), len(lambdas)), math.nan)
        for a_i, a in enumerate(alphas):
            for l_i, lam in enumerate(lambdas):
                r = index.get((m, lam, a))
                if r is None:
                    gaps.append([m, lam, a, "missing"])
                elif not math.isfinite(r["rel_err"]):
                    gaps.append([m, lam, a, r["note"] or "no value"])
                else:
                    mat[a_i, l_i] = r["rel_err"]
        cols = ["alpha"] + [f"lambda={csvio.format_float(v)}" for v in lambdas]
        body = [[a] + [None if math.isnan(v) else v for v in mat[a_i]] for a_i, a in enumerate(alphas)]
        path = csvio.write(out / f"heatmap_{m}.csv", HEATMAP_SCHEMA, cols, body, {"method": m, "clip": clip})
        written[m] = {"matrix": path}
        if svg:
            svg_path = out / f"heatmap_{m}.svg"
            svg_path.write_text(_svg(m, alphas, lambdas, mat, clip))
            written[m]["svg"] = svg_path
    gaps_path = csvio.write(out / "gaps.csv", GAPS_SCHEMA, ["method", "lambda", "alpha", "reason"], gaps)
    return {"methods": written, "gaps": gaps_path, "n_gaps": len(gaps)}
