"""Problem files (JSON in) and result bundles (CSV/JSON out).

Problem file keys: ``n, m, T, N, delta``; paths ``A, B, C, D, G`` as
``{"constant": M}`` or ``{"samples": [M, ...]}`` (optionally with
``"interpolation": "piecewise-constant-left"``); weights ``Q, R`` as
``{"constant": M}``, ``{"separable": {"base": M, "t_weight": [...]}}`` or
``{"samples": [[M, ...], ...]}`` (row i holds s_i..s_N).  An optional
``"mollify": {"n_moll": k, "quad_points": q}`` block requests smoothing.

Result bundle:

``theta.csv``     node,t,theta_<r>_<c>...
``diagonal.csv``  node,t,p_<r>_<c>...,min_eig
``P_full.csv``    i,j,p_<r>_<c>...          (only with a full dump)
``report.json``   solve report fields

Numbers are written with 17 significant digits so they read back exactly.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (INTERPOLATION_MODES, LINEAR, DiagonalField, MatrixPath, ProblemSpec,
                   Strategy, TimeGrid, TwoTimeField, min_eig, validate_problem)
from .errors import EreError, ParseError, ValidationError
from .mollify import MollifierParams

THETA_FILE = "theta.csv"
DIAGONAL_FILE = "diagonal.csv"
FULL_FILE = "P_full.csv"
REPORT_FILE = "report.json"


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class ProblemFile:
    spec: ProblemSpec
    mollify: MollifierParams | None = None


@dataclass(frozen=True)
class ResultBundle:
    theta: Path
    diagonal: Path
    report: Path
    full: Path | None = None


# ------------------------------------------------------------------ parsing

def _matrix(obj, key: str, shape: tuple[int, int]) -> np.ndarray:
    if isinstance(obj, (int, float)) and shape == (1, 1):
        obj = [[obj]]
    try:
        a = np.array(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{key}: not a numeric matrix ({exc})") from None
    if a.shape != shape:
        raise ParseError(f"{key}: expected a {shape[0]}x{shape[1]} matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ParseError(f"{key}: contains non-finite numbers")
    return a


def _one_of(obj, key: str, forms: tuple[str, ...]) -> str:
    if not isinstance(obj, dict):
        raise ParseError(f"{key}: expected an object with one of {forms}")
    found = [f for f in forms if f in obj]
    if len(found) != 1:
        raise ParseError(f"{key}: expected exactly one of {forms}, got {sorted(obj)}")
    return found[0]


def _path(doc: dict, key: str, grid: TimeGrid, shape) -> MatrixPath:
    if key not in doc:
        raise ParseError(f"missing key {key!r}")
    obj = doc[key]
    form = _one_of(obj, key, ("constant", "samples"))
    mode = obj.get("interpolation", LINEAR)
    if mode not in INTERPOLATION_MODES:
        raise ParseError(f"{key}.interpolation: unknown mode {mode!r}")
    if form == "constant":
        return MatrixPath.constant(grid, _matrix(obj["constant"], f"{key}.constant", shape), mode)
    samples = obj["samples"]
    if not isinstance(samples, list) or len(samples) != grid.N + 1:
        raise ParseError(f"{key}.samples: expected {grid.N + 1} matrices")
    vals = [_matrix(m, f"{key}.samples[{i}]", shape) for i, m in enumerate(samples)]
    return MatrixPath(np.stack(vals), mode)


def _two_time(doc: dict, key: str, grid: TimeGrid, d: int) -> TwoTimeField:
    if key not in doc:
        raise ParseError(f"missing key {key!r}")
    obj = doc[key]
    form = _one_of(obj, key, ("constant", "separable", "samples"))
    if form == "constant":
        return TwoTimeField.constant(grid, _matrix(obj["constant"], f"{key}.constant", (d, d)))
    if form == "separable":
        sep = obj["separable"]
        if not isinstance(sep, dict) or "base" not in sep or "t_weight" not in sep:
            raise ParseError(f"{key}.separable: needs 'base' and 't_weight'")
        base = _matrix(sep["base"], f"{key}.separable.base", (d, d))
        w = sep["t_weight"]
        if not isinstance(w, list) or len(w) != grid.N + 1:
            raise ParseError(f"{key}.separable.t_weight: expected {grid.N + 1} numbers")
        w = np.array(w, dtype=float)
        if not np.all(np.isfinite(w)):
            raise ParseError(f"{key}.separable.t_weight: contains non-finite numbers")
        return TwoTimeField.separable(grid, base, w)
    rows = obj["samples"]
    if not isinstance(rows, list) or len(rows) != grid.N + 1:
        raise ParseError(f"{key}.samples: expected {grid.N + 1} rows")
    v = np.full((grid.N + 1, grid.N + 1, d, d), np.nan)
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != grid.N - i + 1:
            got = len(row) if isinstance(row, list) else type(row).__name__
            raise ParseError(f"{key}.samples row {i}: expected {grid.N - i + 1} matrices, "
                             f"got {got}")
        for k, m in enumerate(row):
            v[i, i + k] = _matrix(m, f"{key}.samples[{i}][{k}]", (d, d))
    return TwoTimeField.symmetric(v)


def parse_problem(doc: dict) -> ProblemFile:
    if not isinstance(doc, dict):
        raise ParseError("problem file must hold a JSON object")
    for key in ("n", "m", "T", "N", "delta"):
        if key not in doc:
            raise ParseError(f"missing key {key!r}")
    try:
        n, m, N = int(doc["n"]), int(doc["m"]), int(doc["N"])
        T, delta = float(doc["T"]), float(doc["delta"])
        grid = TimeGrid(T, N)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad header value: {exc}") from None
    if m < 1:
        raise ParseError("m must be >= 1 (uncontrolled problems are rejected)")
    try:
        spec = ProblemSpec(
            n=n, m=m, grid=grid,
            A=_path(doc, "A", grid, (n, n)), B=_path(doc, "B", grid, (n, m)),
            C=_path(doc, "C", grid, (n, n)), D=_path(doc, "D", grid, (n, m)),
            G=_path(doc, "G", grid, (n, n)),
            Q=_two_time(doc, "Q", grid, n), R=_two_time(doc, "R", grid, m),
            delta=delta,
        )
    except ParseError:
        raise
    except (EreError, ValueError) as exc:
        raise ParseError(str(exc)) from None
    moll = None
    if "mollify" in doc:
        mo = doc["mollify"]
        try:
            moll = MollifierParams(int(mo["n_moll"]), int(mo.get("quad_points", 64)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"mollify: {exc}") from None
    return ProblemFile(spec, moll)


def read_problem_file(path, validate: bool = True, tol: float = 1e-12) -> ProblemFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    pf = parse_problem(doc)
    if validate:
        report = validate_problem(pf.spec, tol)
        if not report.ok:
            raise ValidationError(f"{path}: assumptions violated\n{report.summary()}", report)
    return pf


def load_problem(path, tol: float = 1e-12) -> ProblemSpec:
    """Read, expand and validate a problem file."""
    return read_problem_file(path, True, tol).spec


def problem_to_dict(spec: ProblemSpec, mollify: MollifierParams | None = None) -> dict:
    """Sampled-form document that ``parse_problem`` reads back to the same spec."""
    def path(p: MatrixPath):
        d = {"samples": p.values.tolist()}
        if p.interpolation != LINEAR:
            d["interpolation"] = p.interpolation
        return d

    def two_time(f: TwoTimeField):
        return {"samples": [f.values[i, i:].tolist() for i in range(f.size)]}

    doc = {"n": spec.n, "m": spec.m, "T": spec.T, "N": spec.N, "delta": spec.delta,
           "A": path(spec.A), "B": path(spec.B), "C": path(spec.C), "D": path(spec.D),
           "G": path(spec.G), "Q": two_time(spec.Q), "R": two_time(spec.R)}
    if mollify is not None:
        doc["mollify"] = {"n_moll": mollify.n_moll, "quad_points": mollify.quad_points}
    return doc


def dump_problem(spec: ProblemSpec, path, mollify: MollifierParams | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(problem_to_dict(spec, mollify)), encoding="utf-8")
    return path


# ------------------------------------------------------------------ results

def _labels(prefix: str, rows: int, cols: int) -> list[str]:
    return [f"{prefix}_{r}_{c}" for r in range(rows) for c in range(cols)]


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_results(solution, out_dir, full_dump: bool = False) -> ResultBundle:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        gains = solution.theta.gains
        diag = solution.diagonal.values
        N = gains.shape[0] - 1
        t = solution.grid.nodes if solution.grid is not None else np.arange(N + 1) / N
        m, n = gains.shape[1:]
        theta_path = out / THETA_FILE
        _write_csv(theta_path, ["node", "t"] + _labels("theta", m, n),
                   ([i, fmt(t[i])] + [fmt(x) for x in gains[i].ravel()] for i in range(N + 1)))
        eigs = min_eig(diag)
        diag_path = out / DIAGONAL_FILE
        _write_csv(diag_path, ["node", "t"] + _labels("p", n, n) + ["min_eig"],
                   ([i, fmt(t[i])] + [fmt(x) for x in diag[i].ravel()] + [fmt(eigs[i])]
                    for i in range(N + 1)))
        full_path = out / FULL_FILE
        if full_dump:
            P = solution.P.values
            _write_csv(full_path, ["i", "j"] + _labels("p", n, n),
                       ([i, j] + [fmt(x) for x in P[i, j].ravel()]
                        for i in range(N + 1) for j in range(i, N + 1)))
        elif full_path.exists():
            full_path.unlink()
        report_path = out / REPORT_FILE
        report_path.write_text(json.dumps(solution.report.to_dict(), indent=2, sort_keys=True)
                               + "\n", encoding="utf-8")
    except OSError as exc:
        raise IOError(f"cannot write results to {out}: {exc}") from exc
    return ResultBundle(theta_path, diag_path, report_path, full_path if full_dump else None)


def _read_csv(path: Path):
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    return rows[0], rows[1:]


def read_results(out_dir):
    """Read ``(Strategy, DiagonalField, report dict)`` back from a bundle."""
    out = Path(out_dir)
    try:
        th_head, th_rows = _read_csv(out / THETA_FILE)
        d_head, d_rows = _read_csv(out / DIAGONAL_FILE)
        report = json.loads((out / REPORT_FILE).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read results from {out}: {exc}") from None
    try:
        m = 1 + max(int(h.split("_")[1]) for h in th_head[2:])
        n = 1 + max(int(h.split("_")[2]) for h in th_head[2:])
        gains = np.array([[float(x) for x in r[2:]] for r in th_rows]).reshape(-1, m, n)
        diag = np.array([[float(x) for x in r[2:-1]] for r in d_rows]).reshape(-1, n, n)
    except (IndexError, ValueError) as exc:
        raise ParseError(f"malformed result files in {out}: {exc}") from None
    return Strategy(gains), DiagonalField(diag), report
