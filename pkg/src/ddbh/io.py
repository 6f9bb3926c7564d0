"""File formats: config reader, trajectory/branch/correlator CSVs and JSON snapshots."""

from __future__ import annotations

import configparser
import csv
import json
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np

from .model import CorrelationState, GutzwillerState

_SECTION = "run"


def read_config(path) -> Dict[str, str]:
    """Flat ``key = value`` file (``#`` comments, optional ``[section]`` headers merged)."""
    path = Path(path)
    text = path.read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case (N, J, ...)
    if not text.lstrip().startswith("["):
        text = f"[{_SECTION}]\n" + text
    parser.read_string(text, source=str(path))
    out: Dict[str, str] = {}
    for section in parser.sections():
        out.update(parser[section])
    return out


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh)


def write_dnls_trajectory(path, t, fields) -> None:
    """Columns t, site, re, im."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["t", "site", "re", "im"])
        for ti, row in zip(t, fields):
            for n, z in enumerate(row):
                w.writerow([repr(float(ti)), n, repr(float(z.real)), repr(float(z.imag))])


def write_soe_trajectory(path, t, first, density) -> None:
    """Columns t, site, re_a, im_a, n."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["t", "site", "re_a", "im_a", "n"])
        for ti, row, dens in zip(t, first, density):
            for n, (z, d) in enumerate(zip(row, dens)):
                w.writerow([repr(float(ti)), n, repr(float(z.real)), repr(float(z.imag)), repr(float(np.real(d)))])


def write_gutzwiller_observables(path, run) -> None:
    """Columns t, site, n, re_a, im_a, top_population."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["t", "site", "n", "re_a", "im_a", "top_population"])
        for i, ti in enumerate(run.t):
            for n in range(run.density.shape[1]):
                z = run.mean_a[i, n]
                w.writerow([repr(float(ti)), n, repr(float(run.density[i, n])), repr(float(z.real)), repr(float(z.imag)), repr(float(run.top_population[i, n]))])


def write_branch(path, branch) -> None:
    """Columns J, stable, abscissa, then |phi_n| for every site."""
    fh, w = _writer(path)
    with fh:
        if not branch.points:
            w.writerow(["J", "stable", "abscissa"])
            return
        n = branch.points[0].field.size
        w.writerow(["J", "stable", "abscissa"] + [f"amp_{i}" for i in range(n)])
        for p in branch.points:
            w.writerow([repr(p.j), int(p.stable), repr(p.abscissa)] + [repr(float(abs(z))) for z in p.field])


def write_correlator(path, matrix: np.ndarray) -> None:
    """Grid with one row per k and interleaved Re/Im columns per k'."""
    m = np.asarray(matrix)
    fh, w = _writer(path)
    with fh:
        header = ["k"]
        for kp in range(m.shape[1]):
            header += [f"re_{kp}", f"im_{kp}"]
        w.writerow(header)
        for k, row in enumerate(m):
            cells = [k]
            for z in row:
                cells += [repr(float(z.real)), repr(float(z.imag))]
            w.writerow(cells)


def _matrix_json(m: np.ndarray):
    m = np.asarray(m)
    if m.ndim == 1:
        return [[float(z.real), float(z.imag)] for z in m]
    return [_matrix_json(row) for row in m]


def _matrix_from_json(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def state_to_json(state: CorrelationState, meta: Optional[dict] = None) -> dict:
    return {
        "n_sites": state.n_sites,
        "first": _matrix_json(state.first),
        "normal": _matrix_json(state.normal),
        "anomalous": _matrix_json(state.anomalous),
        "meta": meta or {},
    }


def state_from_json(data: dict) -> CorrelationState:
    return CorrelationState(
        _matrix_from_json(data["first"]),
        _matrix_from_json(data["normal"]),
        _matrix_from_json(data["anomalous"]),
    )


def gutzwiller_to_json(state: GutzwillerState, meta: Optional[dict] = None) -> dict:
    return {"n_sites": state.n_sites, "n_max": state.n_max, "rhos": _matrix_json(state.rhos), "meta": meta or {}}


def gutzwiller_from_json(data: dict) -> GutzwillerState:
    return GutzwillerState(_matrix_from_json(data["rhos"]))


class _Encoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, complex):
            return [o.real, o.imag]
        return super().default(o)


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, cls=_Encoder, allow_nan=True) + "\n")


def write_rows(path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(list(header))
        for row in rows:
            w.writerow(list(row))
