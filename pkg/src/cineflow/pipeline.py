"""Experiment stages: simulate, reconstruct, evaluate, sweep.

Every stage reads and writes files in one output directory; all binary
artifacts use the formats of :mod:`cineflow.grid` and are written atomically.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, grid, metrics, mri, simdata, solver
from .config import MODELS, ExperimentConfig
from .grid import KSpaceData

log = logging.getLogger(__name__)

FILES = {
    "gt": "gt.cxseq",
    "gt_velocity": "gt_velocity.cxvel",
    "coils": "coils.cxseq",
    "kspace_full": "kspace_full.cxksp",
    "kspace": "kspace.cxksp",
    "mask": "mask.cxmask",
    "dynamic_mask": "dynamic_mask.cxseq",
}

SWEEP_KEYS = {
    "fw": ("alpha1", "eps1"),
    "dt": ("alpha1", "alpha3", "eps1", "eps3"),
    "cheat-of": ("alpha1", "alpha3", "eps1", "eps3"),
    "of": ("alpha1", "alpha2", "alpha3", "eps1", "eps2", "eps3", "sigma"),
}


class MissingArtifactError(FileNotFoundError):
    pass


def recon_file(model):
    return f"recon_{model}.cxseq"


def velocity_file(model):
    return f"velocity_{model}.cxvel"


def trace_file(model):
    return f"trace_{model}.csv"


def metrics_file(model):
    return f"metrics_{model}.csv"


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_text_atomic(path, text):
    grid._atomic_write(path, text.encode("utf-8"))


def write_provenance(out, stage, cfg: ExperimentConfig, files, extra=None):
    """JSON sidecar with the config, package version and file digests (no timestamps)."""
    doc = {
        "stage": stage,
        "version": __version__,
        "config": cfgmod.to_dict(cfg),
        "files": {name: _sha256(Path(out) / name) for name in sorted(files)},
    }
    if extra:
        doc.update(extra)
    write_text_atomic(Path(out) / f"provenance_{stage}.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# simulate


def simulate_arrays(cfg: ExperimentConfig):
    """In-memory simulation: returns a dict of arrays and system objects."""
    ph = cfg.phantom
    frame0 = simdata.make_phantom_frame0(ph)
    _, (cx, cy, ax, _ay) = simdata.phantom_layout(ph)
    vs = cfg.velocity
    v = simdata.make_velocity_field(ph.dims, vs.pattern, vs.rng_seed, speed=vs.speed,
                                    phase=simdata.phase_map(ph), center=(cx, cy), radius=ax)
    gt = simdata.advect(frame0, v, vs.substeps)
    coils = simdata.make_coil_maps(cfg.coils.nc, ph.dims, cfg.coils.rng_seed, cfg.coils.width)
    mask = mri.make_mask(ph.nt, ph.nx, cfg.mask.accel, cfg.mask.central_frac, cfg.mask.rng_seed)
    system = mri.MriSystem(coils, mask)
    full = system.with_mask(grid.SamplingMask.full(ph.nt, ph.nx))
    y_full = simdata.synthesize_measurements(gt, full, cfg.noise)
    # the undersampled data are the sampled rows of the same noisy acquisition
    y = KSpaceData(y_full.samples * system._rows, mask)
    dm = simdata.dynamic_mask(gt, cfg.dynamic_mask.tau, cfg.dynamic_mask.dilate_px)
    return {"gt": gt, "gt_velocity": v, "coils": coils, "mask": mask, "system": system,
            "kspace_full": y_full, "kspace": y, "dynamic_mask": dm}


def simulate(cfg: ExperimentConfig, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    s = simulate_arrays(cfg)
    grid.save_sequence(s["gt"], out / FILES["gt"])
    grid.save_velocity(s["gt_velocity"], out / FILES["gt_velocity"])
    grid.save_coils(s["coils"], out / FILES["coils"])
    grid.save_kspace(s["kspace_full"], out / FILES["kspace_full"])
    grid.save_kspace(s["kspace"], out / FILES["kspace"])
    grid.save_mask(s["mask"], out / FILES["mask"])
    grid.save_sequence(s["dynamic_mask"][None].astype(np.complex128), out / FILES["dynamic_mask"])
    write_provenance(out, "simulate", cfg, FILES.values())
    return s


def _need(out, name):
    p = Path(out) / name
    if not p.exists():
        raise MissingArtifactError(f"missing artifact {name} in {out}")
    return p


def load_dynamic_mask(out):
    m = grid.load_sequence(_need(out, FILES["dynamic_mask"])).data[0]
    return m.real > 0.5


def load_inputs(out):
    """Coils, undersampled k-space and the assembled system from a simulate run."""
    coils = grid.load_coils(_need(out, FILES["coils"]))
    y = grid.load_kspace(_need(out, FILES["kspace"]))
    return mri.MriSystem(coils, y.mask), y


# ---------------------------------------------------------------------------
# reconstruct


def run_model(y, system, model, cfg: ExperimentConfig, v_gt=None, mp=None, sp=None):
    mp = cfg.model_params(model) if mp is None else mp
    sp = cfg.solver if sp is None else sp
    return solver.reconstruct(y, system, model, mp, sp, v_gt=v_gt)


def reconstruct(cfg: ExperimentConfig, out, model):
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}, expected one of {MODELS}")
    out = Path(out)
    system, y = load_inputs(out)
    v_gt = None
    if model == "cheat-of":
        v_gt = grid.load_velocity(_need(out, FILES["gt_velocity"])).data
    rho, v, trace = run_model(y, system, model, cfg, v_gt=v_gt)
    files = [recon_file(model), trace_file(model)]
    grid.save_sequence(rho, out / recon_file(model))
    if model in ("of", "cheat-of"):
        grid.save_velocity(v, out / velocity_file(model))
        files.append(velocity_file(model))
    buf = io.StringIO(newline="")
    trace.write_csv(buf)
    write_text_atomic(out / trace_file(model), buf.getvalue())
    write_provenance(out, f"reconstruct_{model}", cfg, files)
    return rho, v, trace


# ---------------------------------------------------------------------------
# evaluate


def summary_rows(reports):
    """Table rows ``(model, metric, mean, std)``: models x {PSNR, SSIM}."""
    rows = []
    for model in MODELS:
        if model not in reports:
            continue
        r = reports[model]
        rows.append((model, "psnr_db", r.mean_psnr, r.std_psnr))
        rows.append((model, "ssim", r.mean_ssim, r.std_ssim))
    return rows


def _csv_text(header, rows):
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else repr(float(x))


def evaluate(cfg: ExperimentConfig, out, figures=True):
    """Metrics per model, the summary table and figures. Returns the reports found."""
    out = Path(out)
    gt = grid.load_sequence(_need(out, FILES["gt"])).data
    dm = load_dynamic_mask(out)
    reports, recons, vels = {}, {}, {}
    for model in MODELS:
        p = out / recon_file(model)
        if not p.exists():
            log.warning("no reconstruction for %s, skipping", model)
            continue
        recons[model] = grid.load_sequence(p).data
        reports[model] = metrics.evaluate(gt, recons[model], dm)
        buf = io.StringIO(newline="")
        reports[model].write_csv(buf)
        write_text_atomic(out / metrics_file(model), buf.getvalue())
        vp = out / velocity_file(model)
        if vp.exists():
            vels[model] = grid.load_velocity(vp).data
    if not reports:
        raise MissingArtifactError(f"no reconstructions found in {out}")
    rows = [(m, k, _fmt(a), _fmt(b)) for m, k, a, b in summary_rows(reports)]
    write_text_atomic(out / "summary.csv", _csv_text(("model", "metric", "mean", "std"), rows))
    if figures:
        from . import plotting

        v_gt = grid.load_velocity(out / FILES["gt_velocity"]).data if (out / FILES["gt_velocity"]).exists() else None
        plotting.write_figures(out / "figures", gt, recons, dm, vels, v_gt,
                               cfg.evaluate.frames, cfg.evaluate.profile_row)
    return reports


# ---------------------------------------------------------------------------
# sweep


def sample_point(rng, keys, ranges):
    point = {}
    for k in keys:
        r = ranges[k]
        if r.log:
            point[k] = float(math.exp(rng.uniform(math.log(r.low), math.log(r.high))))
        else:
            point[k] = float(rng.uniform(r.low, r.high))
    return point


def _split_point(point, mp, sp):
    mkw = {k: v for k, v in point.items() if k != "sigma"}
    mp = mp.replace(**mkw)
    if "sigma" in point:
        sp = dataclasses.replace(sp, sigma=point["sigma"])
    return mp, sp


def sweep_points(cfg: ExperimentConfig, model, budget=None):
    """The configured point first, then log-uniform random draws; deterministic per seed."""
    budget = cfg.sweep.budget if budget is None else budget
    if budget < 1:
        raise ValueError("sweep budget must be ≥ 1")
    keys = SWEEP_KEYS[model]
    mp, sp = cfg.model_params(model), cfg.solver
    first = {k: (sp.sigma if k == "sigma" else getattr(mp, k)) for k in keys}
    rng = np.random.default_rng([cfg.sweep.rng_seed, MODELS.index(model)])
    pts = [first]
    while len(pts) < budget:
        pts.append(sample_point(rng, keys, cfg.sweep.ranges))
    return pts


def sweep_model(cfg: ExperimentConfig, model, data, budget=None, progress=None):
    """Evaluate ``budget`` points for one model on in-memory data.

    ``data`` is the dict produced by :func:`simulate_arrays`. Returns the
    leaderboard (list of dicts, best first).
    """
    board = []
    v_gt = data["gt_velocity"] if model == "cheat-of" else None
    for i, point in enumerate(sweep_points(cfg, model, budget)):
        mp, sp = _split_point(point, cfg.model_params(model), cfg.solver)
        try:
            rho, _, _ = solver.reconstruct(data["kspace"], data["system"], model, mp, sp, v_gt=v_gt)
            rep = metrics.evaluate(data["gt"], rho, data["dynamic_mask"])
            psnr, ssim = rep.mean_psnr, rep.mean_ssim
        except solver.DivergenceError:
            psnr, ssim = -math.inf, -math.inf
        board.append({"index": i, **point, "psnr_db": psnr, "ssim": ssim})
        if progress:
            progress(model, i, board[-1])
    # stable sort keeps the earlier point on ties
    board.sort(key=lambda r: -r["psnr_db"])
    return board


def best_params(cfg: ExperimentConfig, model, board):
    point = {k: board[0][k] for k in SWEEP_KEYS[model]}
    return _split_point(point, cfg.model_params(model), cfg.solver)


def sweep(cfg: ExperimentConfig, out, models=MODELS, budget=None, progress=None):
    """Sweep each model, write leaderboards and a config with the best parameters."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data = simulate_arrays(cfg)
    boards = {}
    best = dict(cfg.models)
    best_sigma = cfg.solver.sigma
    files = []
    for model in models:
        board = sweep_model(cfg, model, data, budget, progress)
        boards[model] = board
        keys = ["index", *SWEEP_KEYS[model], "psnr_db", "ssim"]
        rows = [[r["index"]] + [_fmt(r[k]) for k in keys[1:]] for r in board]
        name = f"leaderboard_{model}.csv"
        write_text_atomic(out / name, _csv_text(keys, rows))
        files.append(name)
        mp, sp = best_params(cfg, model, board)
        best[model] = mp
        if model == "of":
            best_sigma = sp.sigma
    best_cfg = dataclasses.replace(cfg, models=best, solver=dataclasses.replace(cfg.solver, sigma=best_sigma))
    write_text_atomic(out / "best_config.yaml", cfgmod.dumps(best_cfg))
    files.append("best_config.yaml")
    write_provenance(out, "sweep", cfg, files)
    return boards, best_cfg
