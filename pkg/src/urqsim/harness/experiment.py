"""Run experiment specs: traces, aggregates, sidecars, figures and the sigma table."""
from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse

from .. import rng as rngmod
from .. import theory
from ..algorithms import AutoStep, ConfigError, DivergenceError, Problem, RunConfig, Trace, run
from ..data import Dataset, gen_dense, gen_regression, gen_sparse, load_libsvm, normalize_rows, shard
from ..loss import component_grads, value
from ..quantizers import QuantizerSpec, keep_probability, message_bits
from ..sparsity import report_from_degrees, sample_report, shard_supports, conflict_degrees
from .._backend import kernels
from .config import ExperimentSpec
from .svg import line_chart

AUDIT_FRACTION = 0.01


def build_dataset(spec: ExperimentSpec) -> Dataset:
    d = spec.dataset
    if d.kind == "gendense":
        ds = gen_dense(d.n, d.d, d.seed)
    elif d.kind == "gensparse":
        ds = gen_sparse(d.n, d.d, d.nnz_per_row, d.seed)
    elif d.kind == "regression":
        ds = gen_regression(d.n, d.d, d.seed, noise=d.noise, col_decay=d.col_decay)
    else:
        path = Path(d.path)
        if not path.is_absolute():
            path = spec.base_dir / path
        try:
            ds = load_libsvm(path, dim=d.dim)
        except OSError as exc:
            raise ConfigError(f"cannot read dataset {path}: {exc}") from None
    if spec.normalize:
        ds = normalize_rows(ds)
    if not 1 <= spec.workers <= ds.n:
        raise ConfigError(f"workers={spec.workers} must lie in [1, n={ds.n}]")
    return ds


def build_problem(spec: ExperimentSpec, ds: Optional[Dataset] = None) -> Problem:
    ds = ds if ds is not None else build_dataset(spec)
    return Problem(shard(ds, spec.workers), spec.loss(ds.n), sparsity_source=spec.sparsity_source)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def default_rule(cfg: RunConfig, strongly_convex: bool) -> str:
    if isinstance(cfg.gamma, AutoStep):
        return cfg.gamma.rule
    return {
        "qgd": "qgd_sc" if strongly_convex else "qgd_cvx",
        "ciag": "ciag_sc" if strongly_convex else "ciag_nsc",
        "dqgd": "dqgd",
        "qiag": "qiag_sc" if strongly_convex else "qiag_nsc",
    }[cfg.algorithm]


def theory_report(problem: Problem, cfg: RunConfig, gamma: float, eps_ratio: float) -> dict:
    """Prediction for ``cfg`` at the step it actually used."""
    rule = default_rule(cfg, problem.curvature.strongly_convex)
    theta = cfg.gamma.theta if isinstance(cfg.gamma, AutoStep) else 1.0
    inp = problem.theory_inputs(cfg.quantizer, cfg.schedule.tau, theta)
    ref = problem.reference
    e = problem.x0 - ref.x_star
    dist0 = float(np.dot(e, e))
    fgap0 = value(problem.shards, problem.loss, problem.x0) - ref.f_star
    eps0 = fgap0 if rule in ("ciag_sc", "ciag_nsc", "qiag_nsc") else dist0
    if eps0 > 0:
        inp = theory.with_eps(inp, eps0, eps0 * eps_ratio)
    strict = rule in ("ciag_sc", "ciag_nsc", "qiag_sc", "qiag_nsc")
    rep = theory.evaluate(rule, inp, gamma=gamma if strict else None)
    out = {"rule": rule, "gamma_used": gamma, "inputs": _inputs_dict(inp), "report": rep.to_dict()}
    if rep.k_star is not None:
        out["k_star_ceil"] = math.ceil(rep.k_star)
    return out


def _inputs_dict(inp: theory.TheoryInputs) -> dict:
    return {k: getattr(inp, k) for k in inp.__dataclass_fields__}


def _execute(problem: Problem, cfg: RunConfig) -> tuple[Trace, Optional[str]]:
    try:
        return run(problem, cfg), None
    except DivergenceError as exc:
        return exc.trace, str(exc)


def aggregate(traces: list[Trace]) -> str:
    n = min(len(t) for t in traces)
    fg = np.stack([t.f_gap[:n] for t in traces])
    d2 = np.stack([t.dist2[:n] for t in traces])
    bits = np.stack([t.bits_cum[:n] for t in traces]).astype(float)
    lines = ["k,f_gap_mean,f_gap_min,f_gap_max,dist2_mean,bits_cum_mean"]
    for k in range(n):
        lines.append(",".join([str(k), repr(float(fg[:, k].mean())), repr(float(fg[:, k].min())),
                               repr(float(fg[:, k].max())), repr(float(d2[:, k].mean())),
                               repr(float(bits[:, k].mean()))]))
    return "\n".join(lines) + "\n"


def audit_bits(trace: Trace, spec: QuantizerSpec, d: int, seed: int) -> dict:
    """Recompute message_bits on a 1% sample of logged messages and check the running total."""
    msgs = trace.messages
    total_ok = (int(trace.bits_cum[-1]) if len(trace) else 0) == sum(b for *_, b in msgs)
    if not msgs:
        return {"checked": 0, "mismatches": 0, "total_matches": total_ok}
    gen = rngmod.stream(seed, rngmod.PROBE, 0, 0)
    count = max(1, math.ceil(AUDIT_FRACTION * len(msgs)))
    pick = np.sort(gen.choice(len(msgs), size=count, replace=False))
    bad = sum(1 for j in pick if message_bits(msgs[j][2], d, spec) != msgs[j][3])
    return {"checked": int(count), "mismatches": int(bad), "total_matches": bool(total_ok)}


def run_experiment(spec: ExperimentSpec, out_dir: Optional[str | Path] = None, *,
                   seeds: Optional[list[int]] = None, plot: Optional[bool] = None,
                   jobs: int = 1) -> tuple[dict, int]:
    """Execute every (run, seed) pair and write the artifact directory.

    Returns the summary dict and the process exit code (3 if any run diverged).
    """
    out = Path(out_dir if out_dir is not None else spec.outputs)
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(seeds if seeds is not None else spec.seeds)
    plot = spec.plot if plot is None else plot

    problem = build_problem(spec)
    ref, cur, spr = problem.reference, problem.curvature, problem.sparsity
    _atomic_write(out / "sparsity.json", _dump({**spr.to_dict(), "source": spec.sparsity_source}))
    _atomic_write(out / "curvature.json", _dump({
        **cur.to_dict(), "f_star": ref.f_star, "grad_star_sq": ref.grad_star_sq,
        "reference_residual": ref.residual, "n": sum(s.n_rows for s in problem.shards),
        "d": problem.dim, "m": problem.m, "loss": {"rho": problem.loss.reg_rho,
                                                   "sigma": problem.loss.reg_sigma}}))

    pairs = [(r, replace(r, seed=s)) for r in spec.runs for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_execute, [problem] * len(pairs), [c for _, c in pairs]))
    else:
        results = [_execute(problem, c) for _, c in pairs]

    summary: dict = {"runs": {}, "diverged": [], "seeds": seeds}
    by_run: dict[str, list[Trace]] = {}
    for (base, cfg), (trace, err) in zip(pairs, results):
        name = base.label
        stem = out / f"trace_{name}_{cfg.seed}"
        _atomic_write(stem.with_suffix(".csv"), trace.to_csv())
        _atomic_write(stem.with_suffix(".json"), _dump(trace.config))
        by_run.setdefault(name, []).append(trace)
        entry = summary["runs"].setdefault(name, {"seeds": {}})
        entry["seeds"][str(cfg.seed)] = {
            "status": "diverged" if err else "ok", "error": err, "iterations": len(trace),
            "final_f_gap": float(trace.f_gap[-1]) if len(trace) else None,
            "bits_total": int(trace.bits_cum[-1]) if len(trace) else 0,
            "messages": len(trace.messages),
            "bits_audit": audit_bits(trace, cfg.quantizer, problem.dim, cfg.seed),
        }
        if err:
            summary["diverged"].append({"run": name, "seed": cfg.seed, "error": err})

    for base in spec.runs:
        name = base.label
        traces = by_run[name]
        _atomic_write(out / f"agg_{name}.csv", aggregate(traces))
        gamma = traces[0].gamma
        th = theory_report(problem, base, gamma, spec.eps_ratio)
        nnz = [mm[2] for t in traces for mm in t.messages]
        th["empirical"] = {
            "mean_nnz_per_message": float(np.mean(nnz)) if nnz else 0.0,
            "mean_bits_per_iteration": float(np.mean([t.bits_cum[-1] / len(t) for t in traces if len(t)])),
        }
        _atomic_write(out / f"theory_{name}.json", _dump(th))
        summary["runs"][name]["gamma"] = gamma
        summary["runs"][name]["theory_applicable"] = th["report"]["applicable"]

    if plot:
        _write_figures(out, spec, by_run)
    code = 3 if summary["diverged"] else 0
    summary["exit_code"] = code
    _atomic_write(out / "summary.json", _dump(summary))
    return summary, code


def _write_figures(out: Path, spec: ExperimentSpec, by_run: dict[str, list[Trace]]) -> None:
    it_series, bit_series = [], []
    for base in spec.runs:
        traces = by_run[base.label]
        n = min(len(t) for t in traces)
        if n == 0:
            continue
        fg = np.mean([t.f_gap[:n] for t in traces], axis=0)
        bits = np.mean([t.bits_before[:n] for t in traces], axis=0)
        it_series.append((base.label, np.arange(n), fg))
        bit_series.append((base.label, bits, fg))
    _atomic_write(out / "fig_iters.svg", line_chart(
        it_series, title="objective gap vs iterations", xlabel="iteration k", ylabel="f(x_k) - f*"))
    _atomic_write(out / "fig_bits.svg", line_chart(
        bit_series, title="objective gap vs bits sent", xlabel="bits sent", ylabel="f(x_k) - f*"))


# -- sigma table -------------------------------------------------------------------------


def _probe_iterates(problem: Problem, count: int) -> list[np.ndarray]:
    """Iterates of exact gradient descent from x0 with the strongly convex GD step."""
    L_bar, mu = problem.curvature.L_bar, problem.curvature.mu
    gamma = 2.0 / (mu + L_bar) if mu > 0 else 1.0 / L_bar
    x = problem.x0.copy()
    pts = []
    for _ in range(count):
        pts.append(x.copy())
        g = np.sum(component_grads(problem.shards, problem.loss, x), axis=0)
        x = x - gamma * g
    return pts


def _rows_csr(vectors: list[np.ndarray], dim: int) -> sparse.csr_matrix:
    mat = sparse.csr_matrix(np.vstack(vectors)) if vectors else sparse.csr_matrix((0, dim))
    mat.eliminate_zeros()
    return mat


def _sampled_sigma(spec_q: QuantizerSpec, mat: sparse.csr_matrix, gen: np.random.Generator) -> float:
    """Sigma of the supports of one joint quantization of every row of ``mat``."""
    nrows = mat.shape[0]
    row_of = np.repeat(np.arange(nrows), np.diff(mat.indptr))
    peak = np.zeros(nrows)
    np.maximum.at(peak, row_of, np.abs(mat.data))
    peak = np.where(peak > 0, peak, 1.0)
    scaled = mat.data / peak[row_of]
    norms = (peak * np.sqrt(np.bincount(row_of, weights=scaled ** 2, minlength=nrows)))[row_of]
    keep_p = keep_probability(spec_q, mat.data, norms, mat.indices, mat.shape[1])
    keep = gen.random(mat.data.size) < keep_p
    kept_counts = np.bincount(row_of[keep], minlength=nrows)
    indptr = np.concatenate([[0], np.cumsum(kept_counts)]).astype(np.int64)
    indices = np.ascontiguousarray(mat.indices[keep], dtype=np.int64)
    deg = kernels.conflict_degrees(indptr, indices, int(mat.shape[1]))
    return report_from_degrees(np.asarray(deg, dtype=np.int64)).sigma


def table_sigma(spec: ExperimentSpec, ds: Optional[Dataset] = None) -> dict:
    """Static sigma/m and Monte Carlo E[sigma_k]/m per quantizer.

    ``level=worker`` uses the ``m`` shards as components; ``level=sample``
    treats each sample as its own component (then ``m = n``). ``vectors``
    picks what is quantized: component gradients at probe iterates, or the
    data itself (rows, or per-shard column sums of ``|A_i|``). Quantized
    supports only depend on the vector's direction, so for unregularized
    per-sample gradients ``a_i r_i`` the two choices coincide in distribution.
    """
    ds = ds if ds is not None else build_dataset(spec)
    problem = build_problem(spec, ds)
    ts = spec.sigma_table
    if ts.level == "sample":
        if ts.vectors != "data":
            raise ConfigError("sample level needs sigma_table.vectors = data "
                              "(per-sample gradients are dense under the regularizer)")
        static = sample_report(ds.features)
        components = ds.n
        mats = [ds.features.tocsr()]
    else:
        supports = shard_supports(problem.shards, spec.sparsity_source, problem.loss.reg_sigma)
        static = conflict_degrees(supports)
        components = problem.m
        if ts.vectors == "data":
            mats = [_rows_csr([np.asarray(abs(sh.features).sum(axis=0)).ravel()
                               for sh in problem.shards], problem.dim)]
        else:
            mats = [_rows_csr(component_grads(problem.shards, problem.loss, x), problem.dim)
                    for x in _probe_iterates(problem, ts.iterates)]
    rows = []
    for q in ts.quantizers:
        samples = []
        for j, mat in enumerate(mats):
            for t in range(ts.draws):
                gen = rngmod.stream(ts.seed, rngmod.PROBE, j + 1, t)
                samples.append(_sampled_sigma(q, mat, gen))
        arr = np.asarray(samples)
        rows.append({"quantizer": q.label, "E_sigma_k_over_m": float(arr.mean()) / components,
                     "stderr": float(arr.std(ddof=1) / math.sqrt(arr.size)) / components
                     if arr.size > 1 else 0.0,
                     "samples": int(arr.size)})
    return {"dataset": ds.name, "n": ds.n, "d": ds.dim, "level": ts.level, "vectors": ts.vectors,
            "components": components, "sigma": static.sigma, "sigma_over_m": static.sigma / components,
            "delta_ave": static.delta_ave, "delta_max": static.delta_max, "rows": rows}
