"""Experiment grids: configuration, execution and result files.

A configuration is a YAML document. Every (N, C, proposal, seed) cell of the
grid runs one chain and writes

``chain_<cell>.csv``
    one row per kept sweep: ``sweep``, parameter values, recorded states,
    ``loglik`` and one ``acc_<block>`` flag column per accept/reject move.
``summary_<cell>.json``
    cell description, per-quantity summaries and acceptance rates.
``timing_<cell>.json``
    wall-clock time (kept apart so the other files are reproducible byte for byte).

After all cells finish, ``table.csv`` (one row per cell, max IACT) and
``timing.csv`` (wall time relative to the bootstrap proposal) are written.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .diagnostics import BATCH_SIZES, summarize
from .errors import ConfigurationError, InputError
from .model import ParamBlocks, RandomWalkBlock, as_observations, simulate
from .models import get_model
from .models.sv import load_returns
from .proposals import ProposalSpec
from .rng import DATA_STREAM, chain_key, make_generator
from .samplers import SamplerConfig, run_chain

SMOOTH_SCHEMES = ("pimh", "pg-smooth", "bsi")
INFER_SCHEMES = ("general", "bsi")
DEFAULT_BATCH_SIZE = 100


def fmt(v) -> str:
    """Float formatting used in every CSV: 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class DataConfig:
    path: str | None = None
    T: int = 100
    seed: int = 0


@dataclass
class PmmhBlockConfig:
    keys: list
    step: Any = 0.1
    transform: Any = "identity"
    name: str | None = None


@dataclass
class ExperimentConfig:
    """Parsed experiment configuration; see the README for the YAML schema."""

    model: str
    model_options: dict = field(default_factory=dict)
    theta: dict | None = None
    data: DataConfig = field(default_factory=DataConfig)
    scheme: str = "pg-smooth"
    n_particles: list = field(default_factory=lambda: [20])
    n_mcmc: list = field(default_factory=lambda: [5])
    proposals: list = field(default_factory=lambda: ["bootstrap"])
    sweeps: int = 1000
    warmup: int = 0
    thin: int = 1
    seeds: list = field(default_factory=lambda: [1])
    seed: int = 0
    pmmh: list = field(default_factory=list)
    refresh_states: bool = True
    record_states: list | None = None
    batch_size: int | None = None
    engine: str = "auto"
    workers: int = 1
    out: str = "results"

    def build_model(self):
        return get_model(self.model, **self.model_options)

    def theta_values(self, model) -> dict:
        th = dict(model.default_theta())
        if self.theta:
            unknown = set(self.theta) - set(model.param_names)
            if unknown:
                raise ConfigurationError(f"theta: unknown parameter(s) {sorted(unknown)} for model {self.model!r}")
            th.update(self.theta)
        return {k: float(v) for k, v in th.items()}

    def proposal_specs(self) -> list[tuple[str, ProposalSpec]]:
        out = []
        for i, p in enumerate(self.proposals):
            if isinstance(p, str):
                spec, label = ProposalSpec(family=p), p
            elif isinstance(p, dict):
                opts = dict(p)
                label = opts.pop("label", None)
                try:
                    spec = ProposalSpec(**opts)
                except TypeError as exc:
                    raise ConfigurationError(f"proposals[{i}]: {exc}") from None
                if label is None:
                    label = spec.family if spec.moments == "backward" else f"{spec.family}-{spec.moments}"
            else:
                raise ConfigurationError(f"proposals[{i}]: expected a name or a mapping")
            out.append((str(label), spec))
        labels = [lab for lab, _ in out]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"proposal labels must be unique, got {labels}")
        return out

    def effective_batch_size(self) -> int:
        if self.batch_size is not None:
            return int(self.batch_size)
        return BATCH_SIZES.get(self.model, DEFAULT_BATCH_SIZE)


def _key_lines(text: str) -> dict[tuple[str, ...], int]:
    """Map each mapping key path in a YAML document to its 1-based line number."""
    lines: dict[tuple[str, ...], int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = path + (str(k.value),)
                lines[key] = k.start_mark.line + 1
                walk(v, key)

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return lines


def _check_fields(raw: dict, cls, where: str, lines, prefix=()) -> None:
    allowed = {f.name for f in fields(cls)}
    for k in raw:
        if k not in allowed:
            line = lines.get(prefix + (str(k),))
            at = f"line {line}, " if line else ""
            raise ConfigurationError(f"{where}: {at}unknown field {k!r} (allowed: {sorted(allowed)})")


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse a YAML experiment configuration, reporting the offending line and field."""
    try:
        raw = yaml.safe_load(text)
        lines = _key_lines(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{source}: YAML error: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{source}: top level must be a mapping")
    _check_fields(raw, ExperimentConfig, source, lines)
    if "model" not in raw:
        raise ConfigurationError(f"{source}: missing required field 'model'")
    raw = dict(raw)
    data = raw.pop("data", None) or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source}: line {lines.get(('data',))}, field 'data' must be a mapping")
    _check_fields(data, DataConfig, source, lines, ("data",))
    for key in ("n_particles", "n_mcmc", "proposals", "seeds", "pmmh"):
        if key in raw:
            raw[key] = _as_list(raw[key])
    try:
        cfg = ExperimentConfig(data=DataConfig(**data), **raw)
    except TypeError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    _validate(cfg, source, lines)
    return cfg


def _validate(cfg: ExperimentConfig, source: str, lines) -> None:
    def fail(key, msg):
        line = lines.get((key,))
        at = f"line {line}, " if line else ""
        raise ConfigurationError(f"{source}: {at}field {key!r}: {msg}")

    try:
        model = cfg.build_model()
    except (ConfigurationError, TypeError) as exc:
        fail("model", str(exc))
    try:
        cfg.theta_values(model)
    except ConfigurationError as exc:
        fail("theta", str(exc))
    for key in ("n_particles", "n_mcmc", "seeds"):
        vals = getattr(cfg, key)
        if not vals or not all(isinstance(v, int) and not isinstance(v, bool) for v in vals):
            fail(key, "expected a non-empty list of integers")
    try:
        cfg.proposal_specs()
    except ConfigurationError as exc:
        fail("proposals", str(exc))
    if cfg.workers < 1:
        fail("workers", "must be >= 1")
    blocks = None
    if cfg.scheme == "general" or cfg.pmmh:
        try:
            blocks = build_blocks(cfg, model)
        except ConfigurationError as exc:
            fail("pmmh", str(exc))
    for n, c in ((n, c) for n in cfg.n_particles for c in cfg.n_mcmc):
        try:
            SamplerConfig(scheme=cfg.scheme, n_particles=n, n_mcmc=c, sweeps=cfg.sweeps, warmup=cfg.warmup,
                          thin=cfg.thin, engine=cfg.engine, blocks=blocks if cfg.scheme == "general" else None)
        except ConfigurationError as exc:
            fail("scheme", str(exc))
    if cfg.data.T < 2:
        raise ConfigurationError(f"{source}: line {lines.get(('data', 'T'))}, field 'data.T': must be >= 2")


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p))


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def load_observations(path) -> np.ndarray:
    """``.csv`` files have a header row; anything else is read as one value per line."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"dataset file not found: {p}")
    if p.suffix.lower() != ".csv":
        return load_returns(p)
    try:
        arr = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise InputError(f"{p}: {exc}") from None
    return as_observations(arr)


def prepare_data(cfg: ExperimentConfig, model=None):
    """Return ``(x, y)``; ``x`` is None when observations come from a file."""
    model = model or cfg.build_model()
    if cfg.data.path:
        return None, load_observations(cfg.data.path)
    theta = cfg.theta_values(model)
    return simulate(model, theta, int(cfg.data.T), make_generator(int(cfg.data.seed), DATA_STREAM))


def write_states_observations(out: Path, x, y) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, arr, prefix in (("states.csv", x, "x"), ("observations.csv", y, "y")):
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        header = [f"{prefix}{j}" for j in range(arr.shape[1])]
        p = out / name
        _write_csv(p, header, ([fmt(v) for v in row] for row in arr))
        written.append(p)
    return written


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# grid execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    n_particles: int
    n_mcmc: int
    proposal: str
    seed: int

    @property
    def id(self) -> str:
        return f"N{self.n_particles}_C{self.n_mcmc}_{self.proposal}_s{self.seed}"


def grid(cfg: ExperimentConfig) -> list[Cell]:
    return [
        Cell(n, c, label, s)
        for n in cfg.n_particles
        for c in cfg.n_mcmc
        for label, _ in cfg.proposal_specs()
        for s in cfg.seeds
    ]


def build_blocks(cfg: ExperimentConfig, model) -> ParamBlocks:
    """PMMH blocks from the config first, then the model's Gibbs blocks for the remaining parameters."""
    pm = []
    for i, spec in enumerate(cfg.pmmh):
        if not isinstance(spec, dict):
            raise ConfigurationError(f"pmmh[{i}]: expected a mapping")
        try:
            b = PmmhBlockConfig(**spec)
        except TypeError as exc:
            raise ConfigurationError(f"pmmh[{i}]: {exc}") from None
        keys = tuple(_as_list(b.keys))
        bad = set(keys) - set(model.param_names)
        if bad:
            raise ConfigurationError(f"pmmh[{i}]: unknown parameter(s) {sorted(bad)}")
        pm.append(RandomWalkBlock(b.name or "+".join(keys), keys, step=b.step, transform=b.transform))
    taken = {k for b in pm for k in b.keys}
    gibbs = [b for b in model.gibbs_blocks() if not taken.intersection(b.keys)]
    covered = taken.union(k for b in gibbs for k in b.keys)
    missing = set(model.param_names) - covered
    if missing:
        raise ConfigurationError(
            f"parameter(s) {sorted(missing)} share a Gibbs block with a PMMH parameter; list the whole block in pmmh"
        )
    return ParamBlocks(pm + gibbs, p1=len(pm), log_prior=model.log_prior)


def sampler_config(cfg: ExperimentConfig, cell: Cell, model, infer: bool) -> SamplerConfig:
    spec = dict(cfg.proposal_specs())[cell.proposal]
    return SamplerConfig(
        scheme=cfg.scheme,
        n_particles=cell.n_particles,
        n_mcmc=cell.n_mcmc,
        proposal=spec,
        blocks=build_blocks(cfg, model) if infer else None,
        sweeps=cfg.sweeps,
        warmup=cfg.warmup,
        thin=cfg.thin,
        refresh_states=cfg.refresh_states,
        record_trajectory=True,
        engine=cfg.engine,
    )


def _record_times(cfg: ExperimentConfig, T: int) -> list[int]:
    ts = cfg.record_states if cfg.record_states is not None else [0, T // 2, T - 1]
    out = []
    for t in ts:
        t = int(t)
        if not -T <= t < T:
            raise ConfigurationError(f"record_states: time {t} outside [0, {T})")
        out.append(t % T)
    return out


def run_cell(cfg: ExperimentConfig, cell: Cell, y: np.ndarray, infer: bool, out: Path) -> dict:
    """Run one chain and write its chain CSV, summary JSON and timing JSON; return the summary."""
    model = cfg.build_model()
    theta0 = cfg.theta_values(model)
    sc = sampler_config(cfg, cell, model, infer)
    key = chain_key(cfg.seed, cell.seed)
    res = run_chain(model, y, theta0, sc, key)
    times = _record_times(cfg, y.shape[0])
    d = model.state_dim
    state_names = [f"x{t}" if d == 1 else f"x{t}_{j}" for t in times for j in range(d)]
    states = res.trajectories[:, times, :].reshape(len(res.sweeps), -1)
    header = ["sweep", *res.param_names, *state_names, "loglik", *[f"acc_{a}" for a in res.accept_names]]
    rows = (
        [str(int(s)), *map(fmt, th), *map(fmt, xs), fmt(ll), *map(fmt, fl)]
        for s, th, xs, ll, fl in zip(res.sweeps, res.theta, states, res.loglik, res.accept_flags)
    )
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / f"chain_{cell.id}.csv", header, rows)

    quantities = list(res.param_names) if infer else state_names
    values = res.theta if infer else states
    summary = {
        "cell": {"id": cell.id, "model": cfg.model, "scheme": cfg.scheme, **asdict(cell)},
        "n_kept": int(len(res.sweeps)),
        "summaries": summarize_safe(values, quantities, cfg.effective_batch_size()),
        "acceptance_rates": {k: float(v) for k, v in sorted(res.acceptance_rates.items())},
        "state_acceptance_rate": None if math.isnan(res.state_acceptance_rate) else res.state_acceptance_rate,
    }
    iacts = [s["iact"] for s in summary["summaries"] if s["iact"] is not None]
    summary["max_iact"] = max(iacts) if iacts else None
    (out / f"summary_{cell.id}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / f"timing_{cell.id}.json").write_text(json.dumps({"id": cell.id, "wall_time": res.wall_time}) + "\n")
    return summary


def summarize_safe(values: np.ndarray, names, batch_size: int) -> list[dict]:
    """Per-column summaries; quantities whose IACT is undefined get ``iact: null`` and a reason."""
    out = []
    for j, name in enumerate(names):
        col = np.asarray(values, dtype=float)[:, j]
        try:
            out.append(asdict(summarize(col[:, None], [name], batch_size)[0]))
        except InputError as exc:
            out.append({
                "quantity": str(name),
                "mean": float(col.mean()) if col.size else None,
                "sd": float(col.std(ddof=1)) if col.size > 1 else None,
                "iact": None,
                "ess": None,
                "batch_size": int(batch_size),
                "error": str(exc),
            })
    return out


def _cell_job(args):
    cfg, cell, y, infer, out = args
    return run_cell(cfg, cell, y, infer, Path(out))


def run_experiment(cfg: ExperimentConfig, infer: bool, out: Path | None = None, workers: int | None = None) -> list[dict]:
    """Run every grid cell (concurrently up to ``workers``) and write the table files."""
    allowed = INFER_SCHEMES if infer else SMOOTH_SCHEMES
    if cfg.scheme not in allowed:
        what = "infer" if infer else "smooth"
        raise ConfigurationError(f"{what} needs scheme in {allowed}, got {cfg.scheme!r}")
    out = Path(out or cfg.out)
    workers = int(workers or cfg.workers)
    model = cfg.build_model()
    if infer:
        build_blocks(cfg, model)  # fail early on block errors
    _, y = prepare_data(cfg, model)
    _record_times(cfg, y.shape[0])
    cells = grid(cfg)
    jobs = [(cfg, c, y, infer, str(out)) for c in cells]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            summaries = list(ex.map(_cell_job, jobs))
    else:
        summaries = [_cell_job(j) for j in jobs]
    write_tables(out)
    return summaries


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


def _sort_key(s: dict):
    c = s["cell"]
    return (c["n_particles"], c["n_mcmc"], c["proposal"], c["seed"])


def write_tables(out: Path) -> tuple[Path, Path]:
    """Collect every ``summary_*.json`` under ``out`` into ``table.csv`` and ``timing.csv``."""
    out = Path(out)
    summaries = [json.loads(p.read_text()) for p in sorted(out.glob("summary_*.json"))]
    if not summaries:
        raise InputError(f"no summary_*.json files in {out}")
    summaries.sort(key=_sort_key)
    quantities: list[str] = []
    for s in summaries:
        for q in s["summaries"]:
            if q["quantity"] not in quantities:
                quantities.append(q["quantity"])
    header = ["model", "scheme", "N", "C", "proposal", "seed", "n_kept", "max_iact",
              *[f"iact_{q}" for q in quantities], "state_acceptance_rate"]
    rows = []
    for s in summaries:
        c = s["cell"]
        iact = {q["quantity"]: q["iact"] for q in s["summaries"]}
        rows.append([
            c["model"], c["scheme"], str(c["n_particles"]), str(c["n_mcmc"]), c["proposal"], str(c["seed"]),
            str(s["n_kept"]), _fmt_opt(s["max_iact"]), *[_fmt_opt(iact.get(q)) for q in quantities],
            _fmt_opt(s["state_acceptance_rate"]),
        ])
    table = out / "table.csv"
    _write_csv(table, header, rows)

    wall = {}
    for s in summaries:
        p = out / f"timing_{s['cell']['id']}.json"
        wall[s["cell"]["id"]] = json.loads(p.read_text())["wall_time"] if p.is_file() else None
    trows = []
    for s in summaries:
        c = s["cell"]
        base_id = f"N{c['n_particles']}_C{c['n_mcmc']}_bootstrap_s{c['seed']}"
        w, wb = wall[c["id"]], wall.get(base_id)
        rel = w / wb if w is not None and wb else None
        trows.append([c["id"], c["proposal"], _fmt_opt(w), _fmt_opt(rel)])
    timing = out / "timing.csv"
    _write_csv(timing, ["id", "proposal", "wall_time", "relative_time"], trows)
    return table, timing


def _fmt_opt(v) -> str:
    return "" if v is None else fmt(v)


def diagnose_csv(path, batch_size: int, warmup: int = 0) -> dict:
    """Summaries for every value column of a chain CSV (``sweep`` and ``acc_*`` columns skipped)."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"chain file not found: {p}")
    with p.open() as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise InputError(f"{p}: empty file")
    data = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
    data = data[warmup:]
    cols = [(j, h) for j, h in enumerate(header) if h != "sweep" and not h.startswith("acc_")]
    vals = data[:, [j for j, _ in cols]] if data.size else np.empty((0, len(cols)))
    return {
        "file": p.name,
        "n": int(vals.shape[0]),
        "summaries": summarize_safe(vals, [h for _, h in cols], batch_size),
        "acceptance_rates": {
            h[4:]: float(data[:, j].mean()) for j, h in enumerate(header) if h.startswith("acc_") and data.size
        },
    }

