"""CSV/JSON artefacts written by the pipeline, and their readers."""

import csv
import io
import json
from pathlib import Path

from dpcert.certify import ABSTAIN
from dpcert.checkpoint import atomic_write
from dpcert.errors import DataError
from dpcert.metrics import SampleMetrics

CERT_HEADER = ("index", "label", "predicted", "radius", "pA_lower", "abstain")
METRICS_HEADER = ("index", "label", "grad_norm", "hessian_spec_norm", "hessian_converged",
                  "local_lipschitz", "certified_radius", "certified_correct")
FGSM_HEADER = ("strength", "accuracy")


def _bool(v):
    return "true" if v else "false"


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_json(path, doc):
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_certification_csv(path, indices, labels, outcomes):
    rows = []
    for i, y, o in zip(indices, labels, outcomes):
        if o.abstained:
            rows.append((i, int(y), ABSTAIN, f"{0.0:.6f}", repr(float(o.pA_lower)), _bool(True)))
        else:
            rows.append((i, int(y), o.predicted, f"{o.radius:.6f}", repr(float(o.pA_lower)), _bool(False)))
    atomic_write(path, _csv_text(CERT_HEADER, rows))


def write_metrics_csv(path, samples):
    rows = [(s.index, s.label, repr(s.grad_norm), repr(s.hessian_spec_norm), _bool(s.hessian_converged),
             repr(s.local_lipschitz), f"{s.certified_radius:.6f}", _bool(s.certified_correct))
            for s in samples]
    atomic_write(path, _csv_text(METRICS_HEADER, rows))


def write_fgsm_csv(path, strengths, accuracies):
    atomic_write(path, _csv_text(FGSM_HEADER, [(repr(float(s)), repr(a)) for s, a in zip(strengths, accuracies)]))


def _read_rows(path, header):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    reader = csv.reader(io.StringIO(text))
    got = next(reader, None)
    if tuple(got or ()) != header:
        raise DataError(f"{path}: expected header {','.join(header)}, found {got}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: line {lineno}: expected {len(header)} fields, found {len(row)}")
        rows.append(dict(zip(header, row)))
    return rows


def _parse_bool(path, v):
    if v not in ("true", "false"):
        raise DataError(f"{path}: expected true/false, found {v!r}")
    return v == "true"


def read_certification_csv(path):
    try:
        return [
            {"index": int(r["index"]), "label": int(r["label"]), "predicted": int(r["predicted"]),
             "radius": float(r["radius"]), "pA_lower": float(r["pA_lower"]),
             "abstain": _parse_bool(path, r["abstain"])}
            for r in _read_rows(path, CERT_HEADER)
        ]
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def read_metrics_csv(path):
    try:
        return [
            SampleMetrics(int(r["index"]), int(r["label"]), float(r["grad_norm"]),
                          float(r["hessian_spec_norm"]), _parse_bool(path, r["hessian_converged"]),
                          float(r["local_lipschitz"]), float(r["certified_radius"]),
                          _parse_bool(path, r["certified_correct"]))
            for r in _read_rows(path, METRICS_HEADER)
        ]
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
