"""Experiment orchestration: train -> certify -> metrics -> analyze, plus FGSM sweeps.

Randomness comes from named streams derived from the training seed, so a
stage (or a single test point) can be rerun in isolation with identical draws.
"""

import json
import logging
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from dpcert import checkpoint as ckpt_io
from dpcert import config as config_io
from dpcert.certify import acr, certified_accuracy_at, certify
from dpcert.config import IdxData
from dpcert.data import load_idx, synth_blobs
from dpcert.errors import BudgetError, DataError, ValidationError
from dpcert.metrics import (
    METRIC_NAMES,
    SampleMetrics,
    fgsm_accuracy,
    group_by_radius,
    input_grad_norm,
    input_hessian_spectral_norm,
    local_lipschitz,
    radius_correlations,
    threshold_split,
)
from dpcert.nn import MlpModel
from dpcert.privacy import (
    AccountantState,
    PrivacySpec,
    calibrate_noise,
    epsilon_at,
    poisson_sample,
    private_step,
    rdp_accumulate,
)
from dpcert import reports

log = logging.getLogger(__name__)

_STREAMS = {"init": 1, "sampling": 2, "train": 3, "certify": 4, "metrics": 5}

CHECKPOINT = "checkpoint.json"
ACCOUNTANT_LOG = "accountant.jsonl"
CERT_CSV = "certification.csv"
CERT_SUMMARY = "certification_summary.json"
METRICS_CSV = "metrics.csv"
ANALYSIS_JSON = "analysis.json"
FGSM_CSV = "fgsm.csv"


def stream(seed, name, *extra):
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAMS[name], *extra]))


def load_data(cfg):
    """``(train, test)`` batches for the configured dataset."""
    ds = cfg.dataset
    if isinstance(ds, IdxData):
        return load_idx(ds.images, ds.labels, ds.limit), load_idx(ds.test_images, ds.test_labels, ds.test_limit)
    full = synth_blobs(ds.n + ds.test_n, ds.d, ds.classes, ds.cluster_spread, ds.seed)
    train = full.take(ds.n)
    test = type(full)(full.x[ds.n:], full.y[ds.n:])
    return train, test


def _class_count(cfg, train):
    ds = cfg.dataset
    return ds.classes if not isinstance(ds, IdxData) else int(train.y.max()) + 1


def init_model(cfg, input_dim, classes):
    return MlpModel.init(input_dim, cfg.model.hidden, classes, cfg.model.activation,
                         rng=stream(cfg.training.seed, "init"))


def resolve_noise(cfg, n_train):
    q = min(1.0, cfg.training.expected_batch / n_train)
    p = cfg.privacy
    if p.noise_multiplier is not None:
        return q, p.noise_multiplier
    return q, calibrate_noise(q, cfg.training.steps, p.delta, p.target_epsilon)


@dataclass
class TrainResult:
    checkpoint: ckpt_io.Checkpoint
    log: list


def _at_steps(inc, t):
    return AccountantState(inc.orders, tuple(t * r for r in inc.rdp), t)


def _log_entry(step, eps, order, delta):
    return {"step": step, "epsilon": eps if math.isfinite(eps) else None,
            "best_order": order, "delta": delta}


def run_train(cfg, out_dir=None):
    """DP training; writes the checkpoint and a JSONL accountant log when ``out_dir`` is set."""
    train, _ = load_data(cfg)
    n = len(train)
    if n == 0:
        raise ValidationError("empty training set")
    tc, pc = cfg.training, cfg.privacy
    q, rho = resolve_noise(cfg, n)
    spec = PrivacySpec(rho, q, pc.delta, pc.clip_rule())
    inc = rdp_accumulate(AccountantState(), q, rho)
    model = init_model(cfg, train.x.shape[1], _class_count(cfg, train))
    sampling, noise = stream(tc.seed, "sampling"), stream(tc.seed, "train")
    log_every = cfg.evaluation.log_every or max(1, round(1.0 / q))

    entries, done = [], 0
    for t in range(1, tc.steps + 1):
        if pc.epsilon_budget is not None and epsilon_at(_at_steps(inc, t), pc.delta)[0] > pc.epsilon_budget:
            if done == 0:
                raise BudgetError(f"epsilon budget {pc.epsilon_budget} is exceeded by a single step")
            log.warning("stopping at step %d: next step would exceed epsilon budget %s", done, pc.epsilon_budget)
            break
        idx = poisson_sample(n, q, sampling)
        model = private_step(model, idx, train.x, train.y, tc, spec, noise)
        done = t
        if t % log_every == 0:
            entries.append(_log_entry(t, *epsilon_at(_at_steps(inc, t), pc.delta), pc.delta))
    eps, order = epsilon_at(_at_steps(inc, done), pc.delta)
    if not entries or entries[-1]["step"] != done:
        entries.append(_log_entry(done, eps, order, pc.delta))

    ckpt = ckpt_io.Checkpoint(model=model, config=config_io.to_dict(cfg), epsilon=eps, delta=pc.delta,
                              noise_multiplier=rho, steps=done, seed=tc.seed, best_order=order)
    if out_dir is not None:
        out = Path(out_dir)
        ckpt_io.atomic_write(out / ACCOUNTANT_LOG, "".join(json.dumps(e, sort_keys=True) + "\n" for e in entries))
        ckpt_io.save(ckpt, out / CHECKPOINT)
    return TrainResult(ckpt, entries)


def _check_model(model, test, path="checkpoint"):
    if test.x.shape[1] != model.input_dim:
        raise ValidationError(f"{path}: model expects {model.input_dim} inputs, test data has {test.x.shape[1]}")


def certify_points(cfg, model, test, indices):
    seed = cfg.training.seed
    return [certify(model, test.x[i], cfg.smoothing, stream(seed, "certify", int(i)), model.class_count)
            for i in indices]


def run_certify(cfg, ckpt, out_dir=None):
    _, test = load_data(cfg)
    if len(test) == 0:
        raise ValidationError("empty test set")
    model = ckpt.model
    _check_model(model, test)
    if cfg.training.smoothing_sigma != cfg.smoothing.sigma:
        warnings.warn(f"certifying at sigma={cfg.smoothing.sigma} but training used "
                      f"sigma={cfg.training.smoothing_sigma}", stacklevel=2)
    count = min(len(test), cfg.evaluation.certify_count or len(test))
    indices = list(range(count))
    labels = test.y[:count]
    outcomes = certify_points(cfg, model, test, indices)
    grid = cfg.evaluation.radius_grid
    summary = {
        "count": count,
        "sigma": cfg.smoothing.sigma,
        "natural_acc": float(np.mean(model.predict(test.x[:count]) == labels)),
        "acr": acr(outcomes, labels),
        "certified_acc": {f"{r:g}": float(a) for r, a in zip(grid, certified_accuracy_at(outcomes, labels, grid))},
        "abstain_rate": float(np.mean([o.abstained for o in outcomes])),
    }
    if out_dir is not None:
        out = Path(out_dir)
        reports.write_certification_csv(out / CERT_CSV, indices, labels, outcomes)
        reports.write_json(out / CERT_SUMMARY, summary)
    return outcomes, summary


def run_metrics(cfg, ckpt, out_dir=None):
    """Per-sample diagnostics on the first ``metrics_count`` test points.

    Radii come from ``certification.csv`` in ``out_dir`` when present,
    otherwise the same points are certified here with the same streams.
    """
    _, test = load_data(cfg)
    model = ckpt.model
    _check_model(model, test)
    count = min(len(test), cfg.evaluation.metrics_count)
    if count == 0:
        raise ValidationError("empty test set")
    cert_path = Path(out_dir) / CERT_CSV if out_dir is not None else None
    if cert_path is not None and cert_path.exists():
        rows = {r["index"]: r for r in reports.read_certification_csv(cert_path)}
        missing = [i for i in range(count) if i not in rows]
        if missing:
            raise DataError(f"{cert_path} lacks indices {missing}")
        certs = [(rows[i]["predicted"], rows[i]["radius"]) for i in range(count)]
    else:
        certs = [(o.predicted, o.radius) for o in certify_points(cfg, model, test, range(count))]
    seed = cfg.training.seed
    samples = []
    for i in range(count):
        x, y = test.x[i], int(test.y[i])
        rng = stream(seed, "metrics", i)
        h, conv = input_hessian_spectral_norm(model, x, y, rng)
        lip = local_lipschitz(model, x, cfg.attack, rng)
        pred, radius = certs[i]
        correct = pred == y
        samples.append(SampleMetrics(i, y, input_grad_norm(model, x, y), h, conv, lip,
                                     radius if correct else 0.0, correct))
    if out_dir is not None:
        reports.write_metrics_csv(Path(out_dir) / METRICS_CSV, samples)
    return samples


def join_on_index(metrics, cert_rows):
    """Take radii from the certification rows; every metrics index must be certified.

    Certification may cover more points than the metrics run; extra rows are ignored.
    """
    by_m = {s.index: s for s in metrics}
    by_c = {r["index"]: r for r in cert_rows}
    missing = sorted(set(by_m) - set(by_c))
    if missing:
        raise DataError(f"index join mismatch: certification lacks indices {missing}")
    out = []
    for i in sorted(by_m):
        s, r = by_m[i], by_c[i]
        correct = (not r["abstain"]) and r["predicted"] == r["label"]
        out.append(replace(s, certified_radius=r["radius"] if correct else 0.0, certified_correct=correct))
    return out


def analyze(cfg, samples):
    ev = cfg.evaluation
    return {
        "count": len(samples),
        "radius_groups": group_by_radius(samples, ev.bin_width).to_dict(),
        "threshold_splits": [threshold_split(samples, tau, m, ev.histogram).to_dict()
                             for tau in ev.thresholds for m in METRIC_NAMES],
        "spearman": radius_correlations(samples),
    }


def run_analyze(cfg, out_dir, metrics_path=None, cert_path=None):
    out = Path(out_dir)
    metrics = reports.read_metrics_csv(metrics_path or out / METRICS_CSV)
    rows = reports.read_certification_csv(cert_path or out / CERT_CSV)
    doc = analyze(cfg, join_on_index(metrics, rows))
    reports.write_json(out / ANALYSIS_JSON, doc)
    return doc


def run_attack(cfg, ckpt, out_dir=None):
    _, test = load_data(cfg)
    if len(test) == 0:
        raise ValidationError("empty test set")
    _check_model(ckpt.model, test)
    strengths = cfg.attack.fgsm_strengths
    accs = fgsm_accuracy(ckpt.model, test.x, test.y, strengths)
    if out_dir is not None:
        reports.write_fgsm_csv(Path(out_dir) / FGSM_CSV, strengths, accs)
    return dict(zip(strengths, accs))
