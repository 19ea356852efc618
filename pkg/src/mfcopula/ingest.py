"""Reading observation panels, marginal standardization and detrending."""
from __future__ import annotations

import csv
import datetime as _dt
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .dataset import Dataset
from .exceptions import ConfigError, IngestError
from .spatial import SiteSet, project_local_km

__all__ = [
    "Panel",
    "read_sites",
    "ingest_csv",
    "rank_transform",
    "as_dataset",
    "harmonic_detrend",
    "write_panel_csv",
    "write_sites_csv",
]


@dataclass(eq=False)
class Panel:
    """Dense ``p x d x n`` array of raw observations with labels."""

    values: np.ndarray
    sites: SiteSet
    field_names: tuple
    site_names: tuple
    replicate_labels: tuple
    report: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape


def _open_rows(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"{path}: cannot read ({exc.strerror})") from exc
    reader = csv.reader(text.splitlines())
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestError(f"{path}: file is empty") from None
    # data rows are numbered as in a text editor: the header is line 1
    return header, ((k, row) for k, row in enumerate(reader, start=2) if row)


def _number(text, path, line, column):
    try:
        val = float(text)
    except ValueError:
        raise IngestError(f"{path}: line {line}: non-numeric {column} {text!r}") from None
    if not math.isfinite(val):
        raise IngestError(f"{path}: line {line}: non-finite {column} {text!r}")
    return val


def read_sites(path, project=None):
    """Read ``site,x,y`` or ``site,lon,lat``; the latter needs ``project='local-km'``."""
    header, rows = _open_rows(path)
    if header == ["site", "x", "y"]:
        geographic = False
    elif header == ["site", "lon", "lat"]:
        geographic = True
        if project != "local-km":
            raise IngestError(f"{path}: lon/lat coordinates need --project local-km")
    else:
        raise IngestError(f"{path}: header must be 'site,x,y' or 'site,lon,lat', got {','.join(header)!r}")
    names, coords, seen = [], [], {}
    for line, row in rows:
        if len(row) != 3:
            raise IngestError(f"{path}: line {line}: expected 3 columns, got {len(row)}")
        name = row[0].strip()
        if name in seen:
            raise IngestError(f"{path}: lines {seen[name]} and {line}: duplicate site {name!r}")
        seen[name] = line
        names.append(name)
        coords.append([_number(row[1], path, line, header[1]), _number(row[2], path, line, header[2])])
    if not names:
        raise IngestError(f"{path}: no sites")
    coords = np.asarray(coords)
    if geographic:
        coords = project_local_km(coords[:, 0], coords[:, 1])
    return tuple(names), SiteSet.from_coords(coords)


def ingest_csv(obs_path, sites_path, *, project=None, require_complete=False) -> Panel:
    """Build a dense panel from long-format observations.

    Fields and replicates keep their order of first appearance; sites follow
    the sites file.  Replicates with any missing cell are dropped (and
    counted in ``report``) unless ``require_complete`` is set, in which case
    the first missing cell is an error.
    """
    site_names, sites = read_sites(sites_path, project)
    site_index = {s: j for j, s in enumerate(site_names)}
    header, rows = _open_rows(obs_path)
    if header != ["field", "site", "replicate", "value"]:
        raise IngestError(f"{obs_path}: header must be 'field,site,replicate,value', got {','.join(header)!r}")
    fields, reps, cells = {}, {}, {}
    for line, row in rows:
        if len(row) != 4:
            raise IngestError(f"{obs_path}: line {line}: expected 4 columns, got {len(row)}")
        f, s, r, v = (c.strip() for c in row)
        if s not in site_index:
            raise IngestError(f"{obs_path}: line {line}: unknown site {s!r}")
        val = _number(v, obs_path, line, "value")
        key = (fields.setdefault(f, len(fields)), site_index[s], reps.setdefault(r, len(reps)))
        if key in cells:
            raise IngestError(f"{obs_path}: lines {cells[key][0]} and {line}: duplicate cell "
                              f"(field={f!r}, site={s!r}, replicate={r!r})")
        cells[key] = (line, val)
    if not cells:
        raise IngestError(f"{obs_path}: no observations")
    p, d, n = len(fields), len(site_names), len(reps)
    values = np.full((p, d, n), np.nan)
    for (i, j, k), (_, val) in cells.items():
        values[i, j, k] = val
    missing = np.isnan(values)
    field_names, rep_labels = tuple(fields), tuple(reps)
    if missing.any() and require_complete:
        i, j, k = map(int, np.argwhere(missing)[0])
        raise IngestError(f"{obs_path}: missing cell (field={field_names[i]!r}, site={site_names[j]!r}, "
                          f"replicate={rep_labels[k]!r}) with --require-complete; {int(missing.sum())} missing in total")
    keep = ~missing.any(axis=(0, 1))
    if not keep.any():
        raise IngestError(f"{obs_path}: every replicate has a missing cell")
    report = {
        "n_replicates_read": n,
        "n_replicates_dropped": int(n - keep.sum()),
        "dropped_replicates": [rep_labels[k] for k in np.flatnonzero(~keep)],
    }
    return Panel(values[:, :, keep], sites, field_names, site_names,
                 tuple(np.asarray(rep_labels, dtype=object)[keep]), report)


def rank_transform(panel: Panel, per_site=False) -> Dataset:
    """Pseudo-uniform scores ``rank / (N + 1)`` with average ranks for ties.

    Ranks are pooled over all sites and replicates of a field (``N = nd``),
    or taken per site (``N = n``) when ``per_site`` is set.
    """
    p, d, n = panel.shape
    U = np.empty((p, d, n))
    for i in range(p):
        if per_site:
            U[i] = rankdata(panel.values[i], axis=1) / (n + 1)
        else:
            U[i] = (rankdata(panel.values[i].ravel()) / (n * d + 1)).reshape(d, n)
    meta = dict(panel.report, ranking="per-site" if per_site else "pooled")
    return Dataset(U, panel.sites, panel.field_names, panel.site_names, panel.replicate_labels,
                   "rank-transformed", meta)


def as_dataset(panel: Panel) -> Dataset:
    """Use panel values directly as scores (they must already lie in (0, 1))."""
    return Dataset(panel.values, panel.sites, panel.field_names, panel.site_names,
                   panel.replicate_labels, "externally standardized", dict(panel.report))


def _day_of_year(labels):
    out = np.empty(len(labels))
    for k, lab in enumerate(labels):
        try:
            out[k] = _dt.date.fromisoformat(str(lab)).timetuple().tm_yday
        except ValueError:
            raise IngestError(f"replicate label {lab!r} is not an ISO date") from None
    return out


def harmonic_detrend(panel: Panel, K=2) -> Panel:
    """Remove an annual cycle per (field, site) by least squares.

    The design is an intercept plus ``sin`` and ``cos`` of
    ``2 pi m doy / 365.25`` for ``m = 1..K``.
    """
    if int(K) != K or K < 1:
        raise ConfigError(f"harmonics K must be an integer >= 1, got {K}")
    K = int(K)
    n = panel.shape[2]
    if n < 2 * K + 1:
        raise IngestError(f"harmonic fit with K={K} needs at least {2 * K + 1} replicates, got {n}")
    phase = 2 * np.pi * _day_of_year(panel.replicate_labels) / 365.25
    cols = [np.ones(n)]
    for m in range(1, K + 1):
        cols += [np.sin(m * phase), np.cos(m * phase)]
    X = np.column_stack(cols)
    Y = panel.values.reshape(-1, n).T
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    resid = (Y - X @ coef).T.reshape(panel.shape)
    return Panel(resid, panel.sites, panel.field_names, panel.site_names, panel.replicate_labels,
                 dict(panel.report, detrend_harmonics=K))


def write_panel_csv(path, values, field_names, site_names, replicate_labels):
    """Long-format CSV ``field,site,replicate,value``; floats use ``repr``."""
    p, d, n = values.shape
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["field", "site", "replicate", "value"])
        for i in range(p):
            for j in range(d):
                for k in range(n):
                    w.writerow([field_names[i], site_names[j], replicate_labels[k], repr(float(values[i, j, k]))])


def write_sites_csv(path, site_names, coords):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site", "x", "y"])
        for name, (x, y) in zip(site_names, coords):
            w.writerow([name, repr(float(x)), repr(float(y))])
