"""CSV ingestion, model bundles and weight reports.

Tables are plain CSV with an ``id`` first column. A curves file carries the
observation grid in its header: every column after ``id`` is named by its
grid point.
"""

from __future__ import annotations

import csv
import json
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .averaging import REPORT_THRESHOLD, CriterionScores, FoldPlan, WeightVector
from .ensemble import EnsembleFit
from .fpca import FpcaFit
from .plfam import CandidateSpec, FittedCandidate, make_layout

BUNDLE_FORMAT = "plfam-bundle"
BUNDLE_VERSION = 1


class DataError(ValueError):
    """Input data could not be parsed or does not line up."""


@dataclass(frozen=True)
class Table:
    ids: list[str]
    columns: list[str]
    values: np.ndarray
    path: str

    def select(self, names) -> np.ndarray:
        missing = [c for c in names if c not in self.columns]
        if missing:
            raise DataError(f"{self.path}: missing columns {missing}")
        return self.values[:, [self.columns.index(c) for c in names]]

    def reorder(self, ids) -> "Table":
        """Rows rearranged to follow ``ids``; every id must be present exactly once."""
        pos = {k: i for i, k in enumerate(self.ids)}
        missing = [k for k in ids if k not in pos]
        extra = set(self.ids) - set(ids)
        if missing or extra:
            detail = []
            if missing:
                detail.append(f"missing ids {missing[:5]}")
            if extra:
                detail.append(f"unexpected ids {sorted(extra)[:5]}")
            raise DataError(f"{self.path}: rows do not match ({'; '.join(detail)})")
        return Table(list(ids), self.columns, self.values[[pos[k] for k in ids]], self.path)


def read_table(path) -> Table:
    """Read a numeric CSV with a header and an ``id`` first column.

    Raises
    ------
    DataError
        On a missing file, malformed header, ragged or non-numeric rows, or
        duplicate ids. Messages carry the file name and line number.
    """
    path = str(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0].lower() != "id":
            raise DataError(f"{path}:1: header must start with 'id' followed by at least one column")
        if len(set(header)) != len(header):
            raise DataError(f"{path}:1: duplicate column names")
        ids, rows, seen = [], [], set()
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
            rid = row[0].strip()
            if rid in seen:
                raise DataError(f"{path}:{line}: duplicate id {rid!r}")
            seen.add(rid)
            try:
                vals = [float(c) for c in row[1:]]
            except ValueError:
                bad = next(c for c in row[1:] if not _is_float(c))
                raise DataError(f"{path}:{line}: non-numeric value {bad!r}") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{path}:{line}: non-finite value")
            ids.append(rid)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Table(ids, header[1:], np.array(rows, dtype=float), path)


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def curve_grid(table: Table) -> np.ndarray:
    try:
        grid = np.array([float(c) for c in table.columns])
    except ValueError:
        raise DataError(f"{table.path}:1: curve column names must be grid points") from None
    if grid.size < 3 or np.any(np.diff(grid) <= 0):
        raise DataError(f"{table.path}:1: grid points must be strictly increasing (at least 3)")
    return grid


def response_vector(table: Table, column: str | None = None) -> np.ndarray:
    if column is not None:
        return table.select([column])[:, 0]
    if len(table.columns) != 1:
        raise DataError(f"{table.path}: expected one response column, found {len(table.columns)}")
    return table.values[:, 0]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_predictions(path, ids, pred) -> None:
    lines = ["id,prediction"] + [f"{i},{_fmt(p)}" for i, p in zip(ids, pred)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def weight_report(fit: EnsembleFit, threshold: float = REPORT_THRESHOLD) -> str:
    """CSV ``candidate_id,scalar_cols,score_cols,weight`` for weights above ``threshold``, largest first.

    ``candidate_id`` is the zero-based enumeration index; score columns are
    listed 1-based.
    """
    w = fit.weights.weights
    order = sorted((i for i in range(w.size) if w[i] > threshold), key=lambda i: (-w[i], i))
    lines = ["candidate_id,scalar_cols,score_cols,weight"]
    for i in order:
        xs, zs = fit.specs[i].describe(fit.scalar_names)
        lines.append(f"{i},{xs},{zs},{_fmt(w[i])}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- bundles


def _put(blobs: dict, name: str, arr) -> dict:
    arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    blobs[name] = arr
    return {"file": f"{name}.bin", "shape": list(arr.shape)}


def save_bundle(fit: EnsembleFit, out_dir, extra: dict | None = None) -> Path:
    """Write ``fit`` as a directory of ``manifest.json`` plus little-endian float64 blocks.

    The directory is assembled beside ``out_dir`` and renamed into place.
    """
    out_dir = Path(out_dir)
    blobs: dict[str, np.ndarray] = {}
    fp = fit.fpca
    manifest = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "scalar_names": list(fit.scalar_names) if fit.scalar_names is not None else None,
        "n_train": fit.n_train,
        "smoothing_selection": "gcv",
        "fpca": {
            "grid": _put(blobs, "fpca_grid", fp.grid),
            "mean": _put(blobs, "fpca_mean", fp.mean),
            "eigenvalues": _put(blobs, "fpca_eigenvalues", fp.eigenvalues),
            "eigenfunctions": _put(blobs, "fpca_eigenfunctions", fp.eigenfunctions),
            "quadrature_weights": _put(blobs, "fpca_quadrature_weights", fp.quadrature_weights),
            "scores": _put(blobs, "fpca_scores", fp.scores),
            "transformed_scores": _put(blobs, "fpca_transformed_scores", fp.transformed_scores),
        },
        "candidates": [],
        "fold_assignment": [int(a) for a in fit.plan.assignment],
        "Q": fit.plan.Q,
        "cv_matrix": _put(blobs, "cv_matrix", fit.cv_matrix),
        "cv_form": _put(blobs, "cv_form", fit.cv_form),
        "weights": {
            "values": _put(blobs, "weights", fit.weights.weights),
            "objective": float(fit.weights.objective),
            "iterations": int(fit.weights.iterations),
            "converged": bool(fit.weights.converged),
        },
        "criteria": {
            "aic": _put(blobs, "aic", fit.criteria.aic),
            "bic": _put(blobs, "bic", fit.criteria.bic),
            "aic_index": fit.criteria.aic_index,
            "bic_index": fit.criteria.bic_index,
            "saic_weights": _put(blobs, "saic_weights", fit.criteria.saic_weights),
            "sbic_weights": _put(blobs, "sbic_weights", fit.criteria.sbic_weights),
        },
        "extra": extra or {},
    }
    for m, (spec, f) in enumerate(zip(fit.specs, fit.fits)):
        manifest["candidates"].append(
            {
                "scalar_columns": list(spec.scalar_columns),
                "score_columns": list(spec.score_columns),
                "n_interior": f.layout.bases[0].n_interior if f.layout.bases else spec.n_interior,
                "order": spec.order,
                "include_intercept": spec.include_intercept,
                "tau": float(f.smoothing_tau),
                "edf": float(f.edf),
                "sigma2_hat": float(f.sigma2_hat),
                "coefficients": _put(blobs, f"coef_{m:04d}", f.coefficients),
                "fitted": _put(blobs, f"fitted_{m:04d}", f.fitted),
            }
        )
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out_dir.parent, prefix=f".{out_dir.name}.", suffix=".tmp"))
    try:
        for name, arr in blobs.items():
            (tmp / f"{name}.bin").write_bytes(arr.tobytes())
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        (tmp / "weights.csv").write_text(weight_report(fit))
        if out_dir.exists():
            old = out_dir.with_name(f".{out_dir.name}.old")
            if old.exists():
                shutil.rmtree(old)
            os.replace(out_dir, old)
            os.replace(tmp, out_dir)
            shutil.rmtree(old)
        else:
            os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out_dir


def _get(root: Path, ref: dict) -> np.ndarray:
    path = root / ref["file"]
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read bundle block ({exc.strerror})") from exc
    arr = np.frombuffer(raw, dtype="<f8").astype(float)
    shape = tuple(ref["shape"])
    if arr.size != int(np.prod(shape, dtype=int)):
        raise DataError(f"{path}: block has {arr.size} values, manifest expects shape {shape}")
    return arr.reshape(shape)


def load_bundle(path) -> EnsembleFit:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except OSError as exc:
        raise DataError(f"{root}: not a model bundle ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{root / 'manifest.json'}:{exc.lineno}: invalid JSON") from exc
    if manifest.get("format") != BUNDLE_FORMAT:
        raise DataError(f"{root}: not a model bundle")
    if manifest.get("version") != BUNDLE_VERSION:
        raise DataError(f"{root}: unsupported bundle version {manifest.get('version')}")
    f = manifest["fpca"]
    fp = FpcaFit(
        mean=_get(root, f["mean"]),
        eigenvalues=_get(root, f["eigenvalues"]),
        eigenfunctions=_get(root, f["eigenfunctions"]),
        scores=_get(root, f["scores"]),
        transformed_scores=_get(root, f["transformed_scores"]),
        quadrature_weights=_get(root, f["quadrature_weights"]),
        grid=_get(root, f["grid"]),
    )
    n = int(manifest["n_train"])
    specs, fits = [], []
    for c in manifest["candidates"]:
        spec = CandidateSpec(
            scalar_columns=tuple(c["scalar_columns"]),
            score_columns=tuple(c["score_columns"]),
            n_interior=c["n_interior"],
            order=c["order"],
            include_intercept=c["include_intercept"],
        )
        specs.append(spec)
        fits.append(
            FittedCandidate(
                spec=spec,
                layout=make_layout(spec, n),
                coefficients=_get(root, c["coefficients"]),
                smoothing_tau=c["tau"],
                edf=c["edf"],
                sigma2_hat=c["sigma2_hat"],
                fitted=_get(root, c["fitted"]),
            )
        )
    w = manifest["weights"]
    cr = manifest["criteria"]
    return EnsembleFit(
        fpca=fp,
        specs=specs,
        fits=fits,
        plan=FoldPlan(Q=int(manifest["Q"]), assignment=np.array(manifest["fold_assignment"], dtype=int)),
        cv_matrix=_get(root, manifest["cv_matrix"]),
        cv_form=_get(root, manifest["cv_form"]),
        weights=WeightVector(_get(root, w["values"]), w["objective"], w["iterations"], w["converged"]),
        criteria=CriterionScores(
            aic=_get(root, cr["aic"]),
            bic=_get(root, cr["bic"]),
            aic_index=cr["aic_index"],
            bic_index=cr["bic_index"],
            saic_weights=_get(root, cr["saic_weights"]),
            sbic_weights=_get(root, cr["sbic_weights"]),
        ),
        scalar_names=tuple(manifest["scalar_names"]) if manifest["scalar_names"] is not None else None,
        n_train=n,
    )
