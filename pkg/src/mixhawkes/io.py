"""File formats: diary CSVs, JSON run configuration, long-format draws and
run manifests."""
from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, StructureError, ValidationError
from .gibbs import FitConfig, PosteriorDraws
from .model import (
    BIN_WIDTH,
    CovariateKind,
    Dataset,
    ModelParams,
    ModelStructure,
    Parameterization,
    Priors,
    SubjectData,
)
from .simulate import TRUTH, VARIANCE_LEVELS, SimConfig, TrackingConfig

EVENTS_HEADER = ("subject_id", "day", "tracked", "count")
DRAWS_HEADER = ("chain", "iter", "name", "value")
CONFIG_SECTIONS = ("model", "priors", "mcmc", "simulate")


def fmt(v):
    """Shortest round-trip text for a number."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# datasets


def _parse_int(text, what, path, row):
    try:
        return int(text)
    except ValueError:
        raise ValidationError(f"{what} must be an integer, got {text!r}", row=row,
                              path=path) from None


def _read_rows(path, header):
    path = str(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            got = next(reader)
        except StopIteration:
            raise ValidationError("empty file", row=1, path=path) from None
        got = [h.strip() for h in got]
        if header is not None and tuple(got) != header:
            raise ValidationError(f"expected header {','.join(header)}", row=1, path=path)
        for row, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(got):
                raise ValidationError(f"expected {len(got)} fields, got {len(rec)}",
                                      row=row, path=path)
            yield row, got, [c.strip() for c in rec]


def read_covariates(path):
    """``(names, {subject_id: {name: value}})`` from a covariate CSV."""
    names, table = None, OrderedDict()
    for row, header, rec in _read_rows(path, None):
        if names is None:
            if header[0] != "subject_id" or len(set(header)) != len(header):
                raise ValidationError("header must be subject_id followed by unique names",
                                      row=1, path=str(path))
            names = tuple(header[1:])
        sid = rec[0]
        if sid in table:
            raise ValidationError(f"duplicate covariate row for subject {sid}", row=row,
                                  path=str(path))
        vals = {}
        for n, v in zip(names, rec[1:]):
            try:
                vals[n] = float(v)
            except ValueError:
                raise ValidationError(f"covariate {n} is not numeric: {v!r}", row=row,
                                      path=str(path)) from None
            if not math.isfinite(vals[n]):
                raise ValidationError(f"covariate {n} is not finite", row=row, path=str(path))
        table[sid] = vals
    if names is None:
        # header only
        with open(path, newline="") as f:
            header = [h.strip() for h in next(csv.reader(f))]
        names = tuple(header[1:])
    return names, table


def _events_fast(path):
    """Vectorized read of a clean events file.

    Returns ``(counts_by_subject, first_row)`` or ``None`` whenever anything
    looks irregular, in which case the row-by-row reader reports the error.
    """
    with open(path, newline="") as f:
        text = f.read()
    if any(ch in text for ch in ' \t"\r'):
        return None
    lines = text.split("\n")
    if lines[-1] == "":
        lines.pop()
    if len(lines) < 2 or lines[0] != ",".join(EVENTS_HEADER):
        return None
    body = lines[1:]
    if any(ln.count(",") != 3 for ln in body):
        return None
    parts = ",".join(body).split(",")
    sids, tracked, raw = parts[0::4], parts[2::4], parts[3::4]
    if "" in sids or not set(tracked) <= {"0", "1"}:
        return None
    try:
        day = np.array([int(x) for x in parts[1::4]], dtype=np.int64)
        c = np.array([int(x) if x else -1 for x in raw], dtype=np.int64)
    except ValueError:
        return None
    on = np.array([t == "1" for t in tracked])
    empty = np.array([x == "" for x in raw])
    if (day < 1).any() or (empty == on).any() or (c[on] < 0).any():
        return None
    sid = np.array(sids)
    names, first, code = np.unique(sid, return_index=True, return_inverse=True)
    order = np.lexsort((day, code))
    sc, sd = code[order], day[order]
    if ((sc[1:] == sc[:-1]) & (sd[1:] == sd[:-1])).any():
        return None
    counts = {}
    for idx in np.split(order, np.flatnonzero(np.diff(sc)) + 1):
        d = day[idx]
        arr = np.full(d.max(), -1, dtype=np.int64)
        arr[d - 1] = c[idx]
        counts[sids[idx[0]]] = arr
    seq = np.argsort(first, kind="stable")
    keys = [str(names[k]) for k in seq]
    return {k: counts[k] for k in keys}, {k: int(first[j]) + 2 for k, j in zip(keys, seq)}


def ingest(events_path, covariates_path=None, bin_width=BIN_WIDTH):
    """Validated :class:`Dataset` from an events CSV and optional covariates CSV.

    Days absent from the events file count as untracked. A subject's
    follow-up ends at its largest listed day, so trailing untracked days
    must appear as ``tracked=0`` rows.
    """
    path = str(events_path)
    fast = _events_fast(path)
    if fast is None:
        by_subject, first_row = _events_slow(path)
    else:
        by_subject, first_row = fast

    names, covs = (), {}
    if covariates_path is not None:
        names, covs = read_covariates(covariates_path)
        for row, sid in enumerate(covs, start=2):
            if sid not in by_subject:
                raise ValidationError(f"covariates given for unknown subject {sid}", row=row,
                                      path=str(covariates_path))
    subjects = []
    for sid, counts in by_subject.items():
        if covariates_path is not None and sid not in covs:
            raise ValidationError(f"covariate row missing for subject {sid}",
                                  row=first_row[sid], path=path)
        subjects.append(SubjectData(sid, counts.size * bin_width, counts >= 0, counts,
                                    covariates=covs.get(sid, {}), bin_width=bin_width))
    return Dataset(subjects, names)


def _events_slow(path):
    seen, first_row = OrderedDict(), {}
    for row, _, (sid, day, tracked, count) in _read_rows(path, EVENTS_HEADER):
        if not sid:
            raise ValidationError("empty subject_id", row=row, path=path)
        first_row.setdefault(sid, row)
        d = _parse_int(day, "day", path, row)
        if d < 1:
            raise ValidationError(f"day must be >= 1, got {d}", row=row, path=path)
        if tracked not in ("0", "1"):
            raise ValidationError(f"tracked must be 0 or 1, got {tracked!r}", row=row, path=path)
        days = seen.setdefault(sid, {})
        if d in days:
            raise ValidationError(f"duplicate day {d} for subject {sid}", row=row, path=path)
        if tracked == "1":
            c = _parse_int(count, "count", path, row)
            if c < 0:
                raise ValidationError(f"negative count {c}", row=row, path=path)
        else:
            if count != "":
                raise ValidationError(f"count given on untracked day {d}", row=row, path=path)
            c = -1
        days[d] = c
    if not seen:
        raise ValidationError("events file has no rows", row=1, path=path)
    by_subject = OrderedDict()
    for sid, days in seen.items():
        counts = np.full(max(days), -1, dtype=np.int64)
        for d, c in days.items():
            counts[d - 1] = c
        by_subject[sid] = counts
    return by_subject, first_row


def emit_events(dataset: Dataset, path):
    """Write every day of every subject; untracked days have an empty count."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(EVENTS_HEADER)
        for s in dataset:
            for k in range(s.n_bins):
                t = bool(s.tracked[k])
                w.writerow((s.subject_id, k + 1, int(t), int(s.counts[k]) if t else ""))


def emit_covariates(dataset: Dataset, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("subject_id",) + dataset.covariate_names)
        for s in dataset:
            w.writerow([s.subject_id] + [fmt(s.covariates[n]) for n in dataset.covariate_names])


# ---------------------------------------------------------------------------
# configuration

_MODEL_KEYS = {"re_background", "re_offspring", "parameterization", "background_covariates",
               "offspring_covariates", "covariate_kinds"}
_MCMC_KEYS = {"chains", "iters", "burnin", "thin", "seed", "threads", "init_policy",
              "init_fraction", "imputation_cap"}
_SIM_KEYS = {"m", "pi0", "variance", "replicates", "br_max", "seed", "truth", "tracking",
             "n_covariates", "covariate_prob", "shared_covariates", "re_background",
             "re_offspring"}


def _check_keys(section, got, allowed):
    extra = set(got) - allowed
    if extra:
        raise ConfigurationError(f"unknown keys in {section}: {sorted(extra)}")


def load_config(path=None):
    """JSON configuration with optional sections ``model``, ``priors``,
    ``mcmc`` and ``simulate``."""
    if path is None:
        return {k: {} for k in CONFIG_SECTIONS}
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    if not isinstance(cfg, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    _check_keys("config", cfg, set(CONFIG_SECTIONS))
    for k in CONFIG_SECTIONS:
        cfg.setdefault(k, {})
        if not isinstance(cfg[k], dict):
            raise ConfigurationError(f"section {k} must be an object")
    _check_keys("model", cfg["model"], _MODEL_KEYS)
    _check_keys("mcmc", cfg["mcmc"], _MCMC_KEYS)
    _check_keys("simulate", cfg["simulate"], _SIM_KEYS)
    _check_keys("priors", cfg["priors"], set(Priors.__dataclass_fields__))
    return cfg


def structure_from(section):
    s = dict(section)
    return ModelStructure(
        re_background=bool(s.get("re_background", True)),
        re_offspring=bool(s.get("re_offspring", True)),
        parameterization=Parameterization(s.get("parameterization", "non_centered")),
        background_covariates=tuple(s.get("background_covariates", ())),
        offspring_covariates=tuple(s.get("offspring_covariates", ())),
        covariate_kinds={k: CovariateKind(v) for k, v in s.get("covariate_kinds", {}).items()},
    )


def structure_to(structure: ModelStructure):
    return {
        "re_background": structure.re_background,
        "re_offspring": structure.re_offspring,
        "parameterization": structure.parameterization.value,
        "background_covariates": list(structure.background_covariates),
        "offspring_covariates": list(structure.offspring_covariates),
        "covariate_kinds": {k: v.value for k, v in sorted(structure.covariate_kinds.items())},
    }


def priors_from(section):
    return Priors(**{k: tuple(v) if isinstance(v, list) else v for k, v in section.items()})


def priors_to(priors: Priors):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in priors.__dict__.items()}


def fit_config_from(cfg, seed=None, chains=None, iters=None, burnin=None, threads=None):
    """:class:`FitConfig` from a loaded config; explicit arguments win."""
    mc = cfg["mcmc"]
    pick = lambda arg, key, default: arg if arg is not None else mc.get(key, default)
    return FitConfig(
        structure=structure_from(cfg["model"]),
        priors=priors_from(cfg["priors"]),
        n_chains=int(pick(chains, "chains", 4)),
        n_burnin=int(pick(burnin, "burnin", 2000)),
        n_iter=int(pick(iters, "iters", 10000)),
        thin=int(mc.get("thin", 1)),
        seed=int(pick(seed, "seed", 0)),
        threads=int(pick(threads, "threads", 1)),
        init_policy=mc.get("init_policy", "paper_uniform"),
        init_fraction=float(mc.get("init_fraction", 0.1)),
        imputation_cap=float(mc.get("imputation_cap", 0.99)),
    )


def params_from(d):
    return ModelParams(d["alpha"], d["delta"], d["beta"], d["zeta"], d.get("phi", 1.0),
                       d.get("xi", 1.0))


def sim_config_from(section):
    s = dict(section)
    variance = s.get("variance", "low")
    if variance not in VARIANCE_LEVELS:
        raise ConfigurationError(f"variance must be one of {sorted(VARIANCE_LEVELS)}")
    if "truth" in s:
        params = params_from(s["truth"])
    else:
        params = TRUTH.copy()
        params.phi, params.xi = VARIANCE_LEVELS[variance]
    tracking = dict(s.get("tracking", {}))
    tracking.setdefault("pi0", s.get("pi0", 0.25))
    try:
        tracking = TrackingConfig(**tracking)
    except TypeError as exc:
        raise ConfigurationError(f"tracking: {exc}") from None
    return SimConfig(
        m=int(s.get("m", 100)), params=params, tracking=tracking,
        br_max=float(s.get("br_max", 0.90)), n_covariates=int(s.get("n_covariates", 2)),
        covariate_prob=float(s.get("covariate_prob", 0.5)),
        shared_covariates=bool(s.get("shared_covariates", False)),
        re_background=bool(s.get("re_background", True)),
        re_offspring=bool(s.get("re_offspring", True)),
    )


def effective_fit_config(config: FitConfig):
    """JSON-ready record of every setting that shapes a fit."""
    return {
        "model": structure_to(config.structure),
        "priors": priors_to(config.priors),
        "mcmc": {"chains": config.n_chains, "iters": config.n_iter, "burnin": config.n_burnin,
                 "thin": config.thin, "seed": config.seed, "init_policy": config.init_policy,
                 "init_fraction": config.init_fraction,
                 "imputation_cap": config.imputation_cap},
    }


def config_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


# ---------------------------------------------------------------------------
# draws


def _open_text(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        if "w" in mode:
            raw = open(path, "wb")
            gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)
            return _Closing(io.TextIOWrapper(gz, newline="", encoding="utf-8"), raw)
        return io.TextIOWrapper(gzip.open(path, "rb"), newline="", encoding="utf-8")
    return open(path, mode, newline="", encoding="utf-8")


class _Closing:
    """Text wrapper that also closes the underlying raw file."""

    def __init__(self, wrapper, raw):
        self.wrapper, self.raw = wrapper, raw

    def __enter__(self):
        return self.wrapper

    def __exit__(self, *exc):
        self.wrapper.close()
        self.raw.close()


def draw_columns(post: PosteriorDraws):
    """``(names, values)`` with values of shape (chains, draws, columns)."""
    ids = post.subject_ids
    names = list(post.param_names)
    names += [f"nu[{s}]" for s in ids] + [f"omega[{s}]" for s in ids]
    names += [f"loglik[{s}]" for s in ids] + [f"n_missing[{s}]" for s in ids]
    values = np.concatenate([post.params, post.nu, post.omega, post.loglik,
                             post.n_missing.astype(float)], axis=2)
    return names, values


def write_draws(post: PosteriorDraws, path):
    """Long-format ``chain,iter,name,value`` CSV; gzip when ``path`` ends in .gz."""
    names, values = draw_columns(post)
    n_missing_from = len(names) - len(post.subject_ids)
    with _open_text(path, "w") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(DRAWS_HEADER)
        for c in range(values.shape[0]):
            for s in range(values.shape[1]):
                row = values[c, s]
                for j, name in enumerate(names):
                    v = int(row[j]) if j >= n_missing_from else row[j]
                    w.writerow((c, s, name, fmt(v)))


def read_draws(path, structure: ModelStructure, subject_ids):
    """Inverse of :func:`write_draws`."""
    names = structure.parameter_names()
    ids = list(subject_ids)
    col = {n: j for j, n in enumerate(names)}
    base = len(names)
    m = len(ids)
    for k, prefix in enumerate(("nu", "omega", "loglik", "n_missing")):
        for i, s in enumerate(ids):
            col[f"{prefix}[{s}]"] = base + k * m + i
    records = {}
    with _open_text(path, "r") as f:
        reader = csv.reader(f)
        if tuple(next(reader, ())) != DRAWS_HEADER:
            raise ValidationError(f"expected header {','.join(DRAWS_HEADER)}", row=1,
                                  path=str(path))
        for row, rec in enumerate(reader, start=2):
            try:
                c, s, name, v = int(rec[0]), int(rec[1]), rec[2], float(rec[3])
            except (ValueError, IndexError):
                raise ValidationError("malformed draw record", row=row, path=str(path)) from None
            if name not in col:
                raise StructureError(f"draw name {name!r} not in the model structure")
            records.setdefault((c, s), np.full(base + 4 * m, np.nan))[col[name]] = v
    if not records:
        raise ValidationError("no draws", path=str(path))
    n_c = max(k[0] for k in records) + 1
    n_s = max(k[1] for k in records) + 1
    if len(records) != n_c * n_s:
        raise StructureError("draws do not form a full chain-by-iteration grid")
    arr = np.stack([np.stack([records[(c, s)] for s in range(n_s)]) for c in range(n_c)])
    if np.isnan(arr).any():
        raise StructureError("draw records are incomplete")
    sl = lambda k: arr[:, :, base + k * m: base + (k + 1) * m]
    return PosteriorDraws(names, arr[:, :, :base], sl(0), sl(1), sl(2),
                          sl(3).astype(np.int64), ids, structure)


# ---------------------------------------------------------------------------
# manifest


def build_manifest(command, version, config, seed, scheme, inputs, outputs, seconds,
                   counters=None, extra=None, root=None):
    """Run record.

    Inputs are keyed by file name and outputs by their path relative to
    ``root``, so manifests do not depend on where a run happened.
    """
    rel = (lambda p: Path(p).relative_to(root).as_posix()) if root else (lambda p: Path(p).name)
    out = {
        "tool": "mixhawkes",
        "version": version,
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "rng_scheme": scheme,
        "inputs": {Path(p).name: sha256_file(p) for p in inputs},
        "outputs": {rel(p): sha256_file(p) for p in sorted(outputs, key=str)},
        "timing": {"seconds": seconds},
    }
    if counters is not None:
        out["counters"] = counters
    if extra:
        out.update(extra)
    return out
