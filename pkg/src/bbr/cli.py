"""Command-line front end.

Sub-commands run the pipeline in order: ``validate``, ``rates``,
``decompose``, ``fit``, ``ppc``, ``report``, plus ``simulate`` for
synthetic studies.  Exit codes: 0 success, 2 validation error, 3 missing
prerequisite, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import platform
import sys
from dataclasses import asdict
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .error_rates import (
    DomainError,
    build_contingency,
    format_rate,
    rate_rows,
    summarize_conclusive,
)
from .latent_model import ModelConfig, Parameters, simulate_responses
from .posterior_analysis import (
    RatioBasis,
    adjusted_failure_rates,
    model_ratio,
    predictive_ratio_interval,
)
from .sampler import PosteriorDraws, SamplerConfig, fit, summarize
from .study_data import (
    AnalysisPolicy,
    GroundTruth,
    StudyDataError,
    StudyDataset,
    UnsuitableHandling,
    apply_policy,
    deduplicate_first_response,
    group_examiners,
    ingest_csv,
    load_mapping,
    write_csv,
)
from .variance_decomp import decompose_by_group

log = logging.getLogger("bbr")

EXIT_OK, EXIT_VALIDATION, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4
ALL_GROUP = "all"


class MissingPrerequisite(RuntimeError):
    pass


class InvalidSettings(ValueError):
    """Command-line values that parse but make no sense together."""


# -- helpers ----------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, Fraction):
        return float(x)
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, (np.floating, np.integer)):
        return _jsonable(x.item())
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "value") and isinstance(getattr(x, "value"), str):
        return x.value
    return x


def _cell(x) -> str:
    if x is None:
        return "undefined"
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, (Fraction, float, np.floating)):
        return "undefined" if isinstance(x, float) and math.isnan(x) else f"{float(x):.6f}"
    return str(getattr(x, "value", x))


def write_rows(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _truths(arg: str) -> list[GroundTruth]:
    return {
        "ss": [GroundTruth.SAME_SOURCE],
        "ds": [GroundTruth.DIFFERENT_SOURCE],
        "both": [GroundTruth.SAME_SOURCE, GroundTruth.DIFFERENT_SOURCE],
    }[arg]


def _policy(args, default: UnsuitableHandling) -> UnsuitableHandling:
    return UnsuitableHandling(args.policy) if args.policy else default


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(args, out: Path, extra: dict | None = None) -> None:
    inputs = []
    for p in (getattr(args, "input", None), getattr(args, "aux_input", None), getattr(args, "params", None)):
        if p:
            inputs.append({"path": str(p), "sha256": _sha256(p)})
    manifest = {
        "command": args.command,
        "inputs": inputs,
        "mapping": getattr(args, "mapping", None),
        "policy": getattr(args, "policy", None),
        "ground_truth": getattr(args, "ground_truth", None),
        "group_by_elims": getattr(args, "group_by_elims", None),
        "seed": getattr(args, "seed", None),
        "sampler": {
            k: getattr(args, k, None) for k in ("chains", "iters", "warmup", "hyperprior_scale")
        },
        "ratio_basis": getattr(args, "ratio_basis", None),
        "n_sims": getattr(args, "n_sims", None),
        "versions": {
            "bbr": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "out": str(out),
    }
    if extra:
        manifest.update(extra)
    manifest_path = out / f"manifest_{args.command}.json"
    write_json(manifest_path, manifest)


def load_study(args) -> tuple[StudyDataset, int]:
    """Ingest and deduplicate; returns the dataset and the number of
    dropped repeat responses."""
    mapping = load_mapping(args.mapping)
    raw = ingest_csv(args.input, mapping)
    ds = deduplicate_first_response(raw)
    return ds, len(raw) - len(ds)


def examiner_groups(args, ds: StudyDataset) -> dict[str, str]:
    if not getattr(args, "group_by_elims", False):
        return {e: ALL_GROUP for e in ds.examiners}
    aux = None
    if getattr(args, "aux_input", None):
        aux = deduplicate_first_response(ingest_csv(args.aux_input, load_mapping(args.mapping)))
    return {e: g.value for e, g in group_examiners(ds, aux).items()}


def _subsets(ds: StudyDataset, truths, handling, groups):
    """Yield ``(truth, group, dataset)`` for every non-empty combination."""
    for truth in truths:
        try:
            sub = apply_policy(ds, AnalysisPolicy(unsuitable_handling=handling, ground_truth_filter=truth))
        except StudyDataError:
            log.info("no %s responses; skipped", truth.value)
            continue
        for g in sorted(set(groups.values())):
            members = [e for e in sub.examiners if groups[e] == g]
            if members:
                yield truth, g, sub.subset_examiners(members)


# -- commands ---------------------------------------------------------------


def cmd_validate(args) -> int:
    ds, dropped = load_study(args)
    counts = ds.category_counts()
    summary = {
        "examiners": len(ds.examiners),
        "items": len(ds.items),
        "responses": len(ds),
        "duplicates_dropped": dropped,
        "cells": {f"{g.value}/{c.value}": n for (g, c), n in counts.items()},
    }
    print(f"examiners: {summary['examiners']}")
    print(f"items: {summary['items']}")
    print(f"responses: {summary['responses']} (duplicates dropped: {dropped})")
    for (g, c), n in counts.items():
        print(f"  {g.value} {c.value}: {n}")
    if args.out:
        out = _out(args)
        write_json(out / "validation.json", summary)
        write_manifest(args, out)
    return EXIT_OK


RATE_COLUMNS = ["ground_truth", "group", "option", "fpr", "fnr", "rate", "degenerate"]


def _rate_tables(args, ds, groups):
    handling = _policy(args, UnsuitableHandling.EXCLUDE)
    return {
        (truth, g): build_contingency(sub)
        for truth, g, sub in _subsets(ds, _truths(args.ground_truth), handling, groups)
    }


def cmd_rates(args) -> int:
    ds, _ = load_study(args)
    groups = examiner_groups(args, ds)
    tables = _rate_tables(args, ds, groups)
    rows = rate_rows(tables)
    out = _out(args)
    write_rows(out / "rates.csv", rows, RATE_COLUMNS)
    pooled = apply_policy(ds, AnalysisPolicy())
    conc = summarize_conclusive(pooled)
    write_json(out / "rates.json", {
        "rows": rows,
        "tables": {f"{t.value}/{g}": tab.as_dict() for (t, g), tab in tables.items()},
        "conclusive": {
            **asdict(conc),
            "p_same_given_not_conclusive": conc.p_same_given_not_conclusive,
            "not_conclusive_risk_ratio": conc.not_conclusive_risk_ratio,
        },
    })
    for r in rows:
        print(f"{r['ground_truth']:>2} {r['group']:<20} {r['option']:<11} {format_rate(r['rate'])}")
    write_manifest(args, out)
    return EXIT_OK


DECOMP_COLUMNS = [
    "ground_truth", "group", "examiner_var", "item_var", "ratio",
    "examiner_var_pop", "item_var_pop", "ratio_pop",
]


def _decompose(args, ds, groups):
    handling = _policy(args, UnsuitableHandling.POOL_AS_INCONCLUSIVE)
    rows, results = [], {}
    for truth in _truths(args.ground_truth):
        try:
            sub = apply_policy(ds, AnalysisPolicy(unsuitable_handling=handling, ground_truth_filter=truth))
        except StudyDataError:
            continue
        for g, res in decompose_by_group(sub, {e: groups[e] for e in sub.examiners}).items():
            results[truth, g] = res
            rows.append({
                "ground_truth": truth.value,
                "group": g,
                "examiner_var": res.sigma2_I,
                "item_var": res.sigma2_J,
                "ratio": res.ratio,
                "examiner_var_pop": res.sigma2_I_pop,
                "item_var_pop": res.sigma2_J_pop,
                "ratio_pop": res.ratio_pop,
            })
    return rows, results


def cmd_decompose(args) -> int:
    from .plots import inconclusive_histogram

    ds, _ = load_study(args)
    groups = examiner_groups(args, ds)
    rows, results = _decompose(args, ds, groups)
    out = _out(args)
    write_rows(out / "decompose.csv", rows, DECOMP_COLUMNS)
    write_json(out / "decompose.json", {"rows": rows, "variance_denominator": "n-1"})
    panels_e = {f"{t.value} {g}": list(r.examiner_props.values()) for (t, g), r in results.items()}
    panels_i = {f"{t.value} {g}": list(r.item_props.values()) for (t, g), r in results.items()}
    inconclusive_histogram(panels_e, out / "inconclusives_by_examiner.svg", "examiner")
    inconclusive_histogram(panels_i, out / "inconclusives_by_item.svg", "item")
    for r in rows:
        print(f"{r['ground_truth']:>2} {r['group']:<20} examiner={r['examiner_var']:.4f} "
              f"item={r['item_var']:.4f} ratio={format_rate(r['ratio'])}")
    write_manifest(args, out)
    return EXIT_OK


def _sampler_config(args) -> SamplerConfig:
    try:
        return SamplerConfig(
            chains=args.chains, iterations=args.iters, warmup=args.warmup, seed=args.seed, progress=True
        )
    except ValueError as exc:
        raise InvalidSettings(f"invalid sampler settings: {exc}") from None


def cmd_fit(args) -> int:
    ds, _ = load_study(args)
    groups = examiner_groups(args, ds)
    handling = _policy(args, UnsuitableHandling.POOL_AS_INCONCLUSIVE)
    out = _out(args)
    try:
        model_cfg = ModelConfig(hyperprior_scale=args.hyperprior_scale, seed=args.seed)
    except ValueError as exc:
        raise InvalidSettings(str(exc)) from None
    sampler_cfg = _sampler_config(args)
    for truth in _truths(args.ground_truth):
        try:
            sub = apply_policy(ds, AnalysisPolicy(unsuitable_handling=handling, ground_truth_filter=truth))
        except StudyDataError:
            continue
        log.info("fitting %s responses (%d examiners, %d items)", truth.value, len(sub.examiners), len(sub.items))
        draws = fit(sub, model_cfg, sampler_cfg,
                    groups={e: groups[e] for e in sub.examiners})
        tag = truth.value.lower()
        draws.to_csv(out / f"draws_{tag}.csv")
        draws.to_binary(out / f"draws_{tag}.bin")
        rhat = max(d["split_rhat"] for d in draws.diagnostics.values())
        write_json(out / f"fit_{tag}.json", {
            "acceptance": draws.acceptance,
            "diagnostics": draws.diagnostics,
            "max_split_rhat": rhat,
            "summary": summarize(draws),
        })
        if not math.isfinite(rhat):
            log.error("non-finite R-hat for %s fit", truth.value)
            return EXIT_NUMERIC
        print(f"{truth.value}: {draws.n_chains} chains x {draws.n_retained} draws, max split R-hat {rhat:.3f}")
    write_manifest(args, out)
    return EXIT_OK


def _load_draws(out: Path, truth: GroundTruth) -> PosteriorDraws:
    path = out / f"draws_{truth.value.lower()}.bin"
    if not path.exists():
        raise MissingPrerequisite(f"no posterior draws for {truth.value} in {out}; run fit first")
    return PosteriorDraws.from_binary(path)


PPC_COLUMNS = ["ground_truth", "group", "predicted", "lower", "upper", "observed", "n_sims", "n_undefined"]


def _ppc(args, ds, groups, out):
    handling = _policy(args, UnsuitableHandling.POOL_AS_INCONCLUSIVE)
    rows = []
    for truth in _truths(args.ground_truth):
        try:
            sub = apply_policy(ds, AnalysisPolicy(unsuitable_handling=handling, ground_truth_filter=truth))
        except StudyDataError:
            continue
        draws = _load_draws(out, truth)
        for g in sorted({groups[e] for e in sub.examiners}):
            members = [e for e in sub.examiners if groups[e] == g]
            try:
                pi = predictive_ratio_interval(
                    draws, sub, n_sims=args.n_sims, seed=args.seed,
                    examiners=None if len(members) == len(sub.examiners) else members,
                )
            except ValueError as exc:
                raise InvalidSettings(str(exc)) from None
            rows.append({"ground_truth": truth.value, "group": g, **asdict(pi)})
    return rows


def cmd_ppc(args) -> int:
    ds, _ = load_study(args)
    groups = examiner_groups(args, ds)
    out = _out(args)
    rows = _ppc(args, ds, groups, out)
    write_rows(out / "ppc.csv", rows, PPC_COLUMNS)
    write_json(out / "ppc.json", {"rows": rows})
    for r in rows:
        print(f"{r['ground_truth']:>2} {r['group']:<20} predicted={format_rate(r['predicted'])} "
              f"[{format_rate(r['lower'])}, {format_rate(r['upper'])}] observed={format_rate(r['observed'])}")
    write_manifest(args, out)
    return EXIT_OK


FAILURE_COLUMNS = [
    "ground_truth", "group", "obs_ratio", "model_ratio", "lower", "upper",
    "inc_correct", "inc_incorrect", "obs_failure", "model_failure",
]


def cmd_report(args) -> int:
    out = _out(args)
    for truth in _truths(args.ground_truth):
        _load_draws(out, truth)  # fail early, before any work
    ds, dropped = load_study(args)
    groups = examiner_groups(args, ds)
    tables = _rate_tables(args, ds, groups)
    decomp_rows, decomp = _decompose(args, ds, groups)
    ppc_rows = _ppc(args, ds, groups, out)

    ratios = {b: {} for b in RatioBasis}
    for truth in _truths(args.ground_truth):
        draws = _load_draws(out, truth)
        for g in draws.group_labels:
            for b in RatioBasis:
                ratios[b][truth, g] = model_ratio(draws, b, group=g)
    basis = RatioBasis(args.ratio_basis)
    observed = {k: r.ratio for k, r in decomp.items()}
    failure = adjusted_failure_rates(tables, ratios[basis], observed)
    failure_rows = [f.as_dict() for f in failure]
    write_rows(out / "failure_rates.csv", failure_rows, FAILURE_COLUMNS)

    model_rows = []
    for b in RatioBasis:
        for (t, g), est in ratios[b].items():
            model_rows.append({"ground_truth": t.value, "group": g, **asdict(est)})
    write_rows(out / "model_ratios.csv", model_rows,
               ["ground_truth", "group", "basis", "examiner_component", "item_component",
                "point", "lower", "upper", "ratio_of_means"])

    report = {
        "dataset": {"examiners": len(ds.examiners), "items": len(ds.items),
                    "responses": len(ds), "duplicates_dropped": dropped},
        "error_rates": rate_rows(tables),
        "decomposition": decomp_rows,
        "variance_denominator": "n-1",
        "model_ratios": model_rows,
        "ratio_basis": basis.value,
        "posterior_predictive": ppc_rows,
        "failure_rates": failure_rows,
    }
    write_json(out / "report.json", report)

    lines = [f"bbr report ({len(ds)} responses, {len(ds.examiners)} examiners, {len(ds.items)} items)", ""]
    lines.append("Failure rates (ratio basis: %s)" % basis.value)
    for f in failure:
        lines.append(
            f"  {f.ground_truth.value} {f.group:<20} correct={format_rate(f.inc_correct)} "
            f"incorrect={format_rate(f.inc_incorrect)} obs={format_rate(f.obs_failure)} "
            f"model={format_rate(f.model_failure)}"
        )
    lines.append("")
    lines.append("Model ratios (mean of per-draw ratios, 95% interval)")
    for (t, g), est in ratios[basis].items():
        note = ""
        if abs(est.point - est.ratio_of_means) > 0.01:
            note = f"  (ratio of mean components {format_rate(est.ratio_of_means)})"
        lines.append(
            f"  {t.value} {g:<20} {format_rate(est.point)} "
            f"[{format_rate(est.lower)}, {format_rate(est.upper)}]{note}"
        )
    lines.append("")
    lines.append("Posterior-predictive ratio intervals")
    for r in ppc_rows:
        lines.append(
            f"  {r['ground_truth']} {r['group']:<20} {format_rate(r['predicted'])} "
            f"[{format_rate(r['lower'])}, {format_rate(r['upper'])}] observed {format_rate(r['observed'])}"
        )
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    write_manifest(args, out)
    return EXIT_OK


def _read_assignment(source: str, params: Parameters) -> dict[str, list[str]] | None:
    if source == "full":
        return None
    with open(source, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "examiner" not in reader.fieldnames or "item" not in reader.fieldnames:
            raise StudyDataError("assignment file needs examiner and item columns")
        out: dict[str, list[str]] = {}
        for row in reader:
            out.setdefault(row["examiner"].strip(), []).append(row["item"].strip())
    return out


def cmd_simulate(args) -> int:
    try:
        params = Parameters.load(args.params)
    except (ValueError, OSError) as exc:
        raise StudyDataError(f"malformed parameter file: {exc}") from None
    assignment = _read_assignment(args.assignment, params)
    ds = simulate_responses(params, assignment, seed=args.seed)
    out = _out(args)
    write_csv(ds, out / "simulated.csv")
    print(f"wrote {len(ds)} responses to {out / 'simulated.csv'}")
    write_manifest(args, out)
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bbr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"bbr {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp, out_required=True):
        sp.add_argument("--input", required=True, help="study CSV")
        sp.add_argument("--mapping", default="generic",
                        help="ulery2011, monson2022, generic, or a mapping config path")
        sp.add_argument("--policy", choices=["pool", "exclude"], default=None,
                        help="unsuitable handling (default: exclude for rates, pool otherwise)")
        sp.add_argument("--ground-truth", choices=["ss", "ds", "both"], default="both")
        sp.add_argument("--group-by-elims", action="store_true",
                        help="split examiners by eliminations on individual characteristics")
        sp.add_argument("--aux-input", default=None,
                        help="extra responses (e.g. cartridge cases) used only for grouping")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=out_required, default=None, help="output directory")

    sp = sub.add_parser("validate", help="ingest and check a study file")
    data_args(sp, out_required=False)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("rates", help="error rates under the four inconclusive treatments")
    data_args(sp)
    sp.set_defaults(func=cmd_rates)

    sp = sub.add_parser("decompose", help="empirical examiner/item variance decomposition")
    data_args(sp)
    sp.set_defaults(func=cmd_decompose)

    sp = sub.add_parser("fit", help="fit the latent-tendency model by MCMC")
    data_args(sp)
    sp.add_argument("--chains", type=int, default=4)
    sp.add_argument("--iters", type=int, default=5000)
    sp.add_argument("--warmup", type=int, default=2500)
    sp.add_argument("--hyperprior-scale", type=float, default=1.0)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("ppc", help="posterior-predictive intervals for the empirical ratio")
    data_args(sp)
    sp.add_argument("--n-sims", type=int, default=None)
    sp.set_defaults(func=cmd_ppc)

    sp = sub.add_parser("report", help="everything, including model-adjusted failure rates")
    data_args(sp)
    sp.add_argument("--n-sims", type=int, default=None)
    sp.add_argument("--ratio-basis", choices=["scale", "variance"], default="scale")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("simulate", help="write a synthetic study from a parameter file")
    sp.add_argument("--params", required=True, help="parameter JSON")
    sp.add_argument("--assignment", default="full",
                    help="'full' or a CSV with examiner,item columns")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MissingPrerequisite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (StudyDataError, InvalidSettings, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DomainError, ArithmeticError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
