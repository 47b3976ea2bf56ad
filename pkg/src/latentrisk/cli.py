"""Command-line entry point: synth, diagnose, split, train, predict, evaluate.

Every command reads an optional JSON run config (``--config``) and applies
flag overrides on top.  All files are written under ``--out``.

Exit codes: 0 ok, 2 validation error, 3 leakage violation, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .cascade import (
    ArtifactError,
    CascadeConfig,
    CascadeError,
    LeakageError,
    THREE_FACTOR_SET,
    artifact_json,
    evaluate,
    load_artifact,
    predict,
    train_cascade,
)
from .dataset import (
    DataValidationError,
    SchemaError,
    TabularDataset,
    filter_phase,
    load_csv,
    load_schema,
    save_csv,
    save_schema,
    summarize,
)
from .evaluation import EvaluationError, build_report, emit_report
from .learners import LearnerConfig, LearnerError
from .missingness import ImputationError, diagnose
from .splitting import DEFAULT_FRACTIONS, SplitError, SplitPlan, make_split, verify_no_leakage
from .synthgen import GeneratorConfig, GeneratorError, generate, save_ground_truth
from .targets import FACTOR_ORDER, Factor, TargetDomainError

EXIT_OK, EXIT_VALIDATION, EXIT_LEAKAGE, EXIT_IO = 0, 2, 3, 4
IMPUTATION_FLAGS = {"none": "none", "mean": "mean", "mode": "most_frequent", "knn": "knn"}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    """One document combining data locations, generator, split and cascade settings."""

    seed: int = 0
    out: str | None = None
    data: str | None = None
    schema: str | None = None
    generator: GeneratorConfig | None = None
    cascade: CascadeConfig = field(default_factory=CascadeConfig.default)
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS
    stratify: str | None = "success"
    group_column: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "out": self.out,
            "data": self.data,
            "schema": self.schema,
            "generator": self.generator.to_dict() if self.generator else None,
            "cascade": self.cascade.to_dict(),
            "fractions": list(self.fractions),
            "stratify": self.stratify,
            "group_column": self.group_column,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        d = dict(d)
        gen = d.pop("generator", None)
        casc = d.pop("cascade", None)
        cfg = cls(**{k: v for k, v in d.items() if k != "fractions"})
        if "fractions" in d:
            cfg.fractions = tuple(d["fractions"])
        if gen is not None:
            cfg.generator = GeneratorConfig.from_dict(gen)
        if casc is not None:
            cfg.cascade = _cascade_from_doc(casc)
        return cfg


def _cascade_from_doc(doc: dict[str, Any]) -> CascadeConfig:
    if "level1_configs" in doc:
        return CascadeConfig.from_dict(doc)
    # short form: {"learner": {...LearnerConfig}, "factors": [...], other CascadeConfig fields}
    doc = dict(doc)
    base = LearnerConfig.from_dict(doc.pop("learner", {}))
    factors = doc.pop("factors", None) or doc.pop("latent_factors", None) or FACTOR_ORDER
    return CascadeConfig.default(base=base, factors=factors, **doc)


def _read_json(path: str | Path) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", EXIT_IO) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path} is not valid JSON: {exc}") from exc


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise CliError(f"{path}: run config must be a JSON object")
    try:
        if "n_rows" in doc:  # a bare generator config
            return RunConfig(generator=GeneratorConfig.from_dict(doc), seed=doc.get("seed", 0))
        return RunConfig.from_dict(doc)
    except (TypeError, KeyError) as exc:
        raise CliError(f"{path}: invalid run config: {exc}") from exc


def _parse_factors(token: str) -> tuple[Factor, ...]:
    if token == "4":
        return FACTOR_ORDER
    if token == "3":
        return THREE_FACTOR_SET
    try:
        return tuple(Factor(t.strip()) for t in token.split(",") if t.strip())
    except ValueError as exc:
        raise CliError(f"--factors: {exc}") from exc


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out = args.out
    for name in ("data", "schema"):
        if getattr(args, name, None):
            setattr(cfg, name, getattr(args, name))
    casc = cfg.cascade
    changes: dict[str, Any] = {}
    base_changes: dict[str, Any] = {}
    if getattr(args, "learner", None):
        base_changes["kind"] = args.learner
    if getattr(args, "missing_mode", None):
        base_changes["missing_mode"] = args.missing_mode
    if getattr(args, "factors", None):
        changes["latent_factors"] = _parse_factors(args.factors)
    if getattr(args, "no_imputation", False):
        changes["imputation"] = "none"
    elif getattr(args, "imputation", None):
        changes["imputation"] = IMPUTATION_FLAGS[args.imputation]
    if getattr(args, "threshold", None) is not None:
        changes["threshold"] = args.threshold
    if getattr(args, "phase", None):
        changes["phase"] = args.phase
    if getattr(args, "tune", False):
        changes["tune"] = True
    if changes or base_changes:
        doc = casc.to_dict()
        factors = changes.pop("latent_factors", casc.latent_factors)
        template = next(iter(casc.level1_configs.values()))
        l1 = {f.value: (casc.level1_configs.get(f, template).with_(**base_changes)).to_dict()
              for f in factors}
        doc.update(changes)
        doc["latent_factors"] = [Factor(f).value for f in factors]
        doc["level1_configs"] = l1
        doc["level2_config"] = casc.level2_config.with_(**base_changes).to_dict()
        cfg.cascade = CascadeConfig.from_dict(doc)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise CliError("no output directory: pass --out or set 'out' in the config")
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}", EXIT_IO) from exc
    return out


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _dump(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _load_data(cfg: RunConfig, schema=None, require_labels: bool = True) -> TabularDataset:
    if not cfg.data:
        raise CliError("no data file: pass --data or set 'data' in the config")
    if schema is None:
        if not cfg.schema:
            raise CliError("no schema file: pass --schema or set 'schema' in the config")
        schema = _load_schema(cfg.schema)
    for p in (cfg.data,):
        if not Path(p).is_file():
            raise CliError(f"data file not found: {p}", EXIT_IO)
    return load_csv(cfg.data, schema, require_labels=require_labels)


def _load_schema(path: str):
    if not Path(path).is_file():
        raise CliError(f"schema file not found: {path}", EXIT_IO)
    try:
        return load_schema(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(f"malformed schema {path}: {exc}") from exc


def _load_split(path: str) -> SplitPlan:
    try:
        return SplitPlan.from_dict(_read_json(path))
    except (KeyError, TypeError) as exc:
        raise CliError(f"malformed split plan {path}: {exc}") from exc


# ---------------------------------------------------------------- commands

def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    gen = cfg.generator or GeneratorConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n_rows is not None:
        overrides["n_rows"] = args.n_rows
    if overrides:
        gen = GeneratorConfig.from_dict({**gen.to_dict(), **overrides})
    out = _out_dir(cfg)
    ds, schema, truth = generate(gen)
    try:
        save_csv(ds, out / "data.csv")
        save_schema(schema, out / "schema.json")
        save_ground_truth(truth, out / "ground_truth.json")
    except OSError as exc:
        raise CliError(f"cannot write synthetic dataset: {exc}", EXIT_IO) from exc
    _write_text(out / "generator.json", _dump(gen.to_dict()))
    print(f"wrote {ds.n_rows} rows to {out / 'data.csv'} (seed {gen.seed})")
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    ds = _load_data(cfg)
    if args.phase:
        ds = filter_phase(ds, args.phase)
    out = _out_dir(cfg)
    report = diagnose(ds, alpha=args.alpha)
    _write_text(out / "missingness.json", report.to_json() + "\n")
    _write_text(out / "summary.json", _dump(summarize(ds)))
    flagged = report.flagged("mar_evidence")
    print(f"{len(flagged)} feature(s) with evidence of missing-at-random: {', '.join(flagged) or '-'}")
    return EXIT_OK


def _split_for(cfg: RunConfig, ds: TabularDataset) -> SplitPlan:
    return make_split(ds, stratify_label=None if cfg.group_column else cfg.stratify,
                      seed=cfg.seed, fractions=cfg.fractions, group_column=cfg.group_column)


def cmd_split(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    if args.fractions:
        cfg.fractions = tuple(float(x) for x in args.fractions.split(","))
    ds = _load_data(cfg)
    if args.phase:
        ds = filter_phase(ds, args.phase)
    plan = _split_for(cfg, ds)
    violations = verify_no_leakage(plan, ds)
    if violations:
        raise LeakageError("; ".join(f"{v.kind}: {v.detail}" for v in violations))
    out = _out_dir(cfg)
    _write_text(out / "split.json", _dump(plan.to_dict()))
    print(" ".join(f"{k}={v}" for k, v in plan.sizes().items()))
    return EXIT_OK


def _report_doc(trained, ev, cfg_digest: str, seed: int, phase, agreement=True,
                sensitivity=True, extra=None) -> dict[str, Any]:
    return build_report(
        run_id=f"{cfg_digest}-s{seed}",
        phase=phase,
        config_digest=cfg_digest,
        classification=ev.classification,
        agreement=ev.agreement if agreement else None,
        sensitivity=ev.sensitivity if sensitivity else None,
        exclusions={"no_success_truth_rows": ev.n_unlabelled},
        extra={"seed": seed, "n_rows": ev.n_rows, **(extra or {})},
    )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    ds = _load_data(cfg)
    if cfg.cascade.phase:
        ds = filter_phase(ds, cfg.cascade.phase)
    plan = _load_split(args.split) if args.split else _split_for(cfg, ds)
    violations = verify_no_leakage(plan, ds)
    if violations:
        raise LeakageError("split plan failed leakage verification: "
                           + "; ".join(f"{v.kind}: {v.detail}" for v in violations))
    out = _out_dir(cfg)
    trained, validation = train_cascade(ds, ds.schema, cfg.cascade, plan, n_jobs=args.jobs)
    test_rows = plan.rows("InferenceTest")
    digest = cfg.cascade.digest()
    extra = {"validation": validation, "split_fingerprint": plan.fingerprint(),
             "imputation_arm": trained.run_metadata["imputation_arm"]}
    if len(test_rows):
        ev = evaluate(trained, ds, test_rows, n_jobs=args.jobs)
        report = _report_doc(trained, ev, digest, cfg.seed, cfg.cascade.phase, extra=extra)
        trained.run_metadata["inference_metrics"] = ev.classification.to_dict()
    else:
        report = {"run_id": f"{digest}-s{cfg.seed}", "config_digest": digest, **extra}
    trained.run_metadata["seed"] = cfg.seed
    # the output location is not part of the model; keep artifacts relocatable
    trained.run_metadata["run_config"] = {k: v for k, v in cfg.to_dict().items() if k != "out"}
    _write_text(out / "split.json", _dump(plan.to_dict()))
    _write_text(out / "cascade.json", artifact_json(trained) + "\n")
    formats = ("json", "csv", "svg") if args.svg else ("json", "csv")
    if "classification" in report:
        emit_report(report, out, formats)
    else:
        _write_text(out / "report.json", _dump(report))
    acc = report.get("classification", {}).get("accuracy")
    print(f"trained cascade {digest}; inference accuracy "
          f"{'n/a' if acc is None else f'{acc:.4f}'}; artifact {out / 'cascade.json'}")
    return EXIT_OK


def _artifact(path: str):
    if not Path(path).is_file():
        raise CliError(f"artifact not found: {path}", EXIT_IO)
    return load_artifact(path)


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    trained = _artifact(args.artifact)
    schema = _load_schema(cfg.schema) if cfg.schema else trained.schema
    ds = _load_data(cfg, schema=schema, require_labels=False)
    out = _out_dir(cfg)
    result = predict(trained, ds, n_jobs=args.jobs, threshold=args.threshold)
    rows = result.to_rows()
    path = out / "predictions.csv"
    try:
        with open(path, "w", newline="") as fh:
            header = list(rows[0]) if rows else ["row_id", "p_op", "predicted_success"]
            w = csv.DictWriter(fh, fieldnames=header)
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc
    print(f"wrote {len(rows)} predictions to {path}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    trained = _artifact(args.artifact)
    schema = _load_schema(cfg.schema) if cfg.schema else trained.schema
    ds = _load_data(cfg, schema=schema)
    if trained.config.phase:
        ds = filter_phase(ds, trained.config.phase)
    rows = None
    extra: dict[str, Any] = {}
    if args.split:
        plan = _load_split(args.split)
        violations = verify_no_leakage(plan, ds)
        if violations:
            raise LeakageError("; ".join(f"{v.kind}: {v.detail}" for v in violations))
        rows = plan.rows("InferenceTest")
        extra["split_fingerprint"] = plan.fingerprint()
    out = _out_dir(cfg)
    ev = evaluate(trained, ds, rows, threshold=args.threshold, n_jobs=args.jobs)
    recorded = trained.run_metadata.get("inference_metrics")
    if recorded is not None and rows is not None:
        extra["matches_recorded_inference_metrics"] = recorded == json.loads(
            json.dumps(ev.classification.to_dict()))
    seed = trained.run_metadata.get("seed", cfg.seed)
    report = _report_doc(trained, ev, trained.config.digest(), seed, trained.config.phase,
                         agreement=args.agreement, sensitivity=args.sensitivity, extra=extra)
    emit_report(report, out, ("json", "csv", "svg") if args.svg else ("json", "csv"))
    print(f"accuracy {ev.classification.accuracy:.4f} on {ev.n_rows} rows; report {out / 'report.json'}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON run config")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--out", help="output directory")
    shared.add_argument("--data", help="dataset CSV")
    shared.add_argument("--schema", help="schema JSON")
    shared.add_argument("--phase", choices=("I", "II", "III"))
    shared.add_argument("--factors", help="3, 4 or a comma-separated factor list")
    shared.add_argument("--learner", choices=("gbdt", "ebm"))
    shared.add_argument("--imputation", choices=tuple(IMPUTATION_FLAGS))
    shared.add_argument("--no-imputation", action="store_true")
    shared.add_argument("--missing-mode", choices=("native", "reject"))
    shared.add_argument("--threshold", type=float)
    shared.add_argument("--jobs", type=int, default=1)

    p = argparse.ArgumentParser(prog="latentrisk", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[shared], help="generate a synthetic portfolio")
    s.add_argument("--n-rows", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("diagnose", parents=[shared], help="missingness diagnostics")
    s.add_argument("--alpha", type=float, default=0.05)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("split", parents=[shared], help="write a split plan")
    s.add_argument("--fractions", help="three comma-separated fractions")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", parents=[shared], help="train the two-level cascade")
    s.add_argument("--split", help="existing split plan JSON")
    s.add_argument("--tune", action="store_true", help="grid-search learner settings")
    s.add_argument("--svg", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[shared], help="score records with a trained cascade")
    s.add_argument("--artifact", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", parents=[shared], help="evaluate a trained cascade")
    s.add_argument("--artifact", required=True)
    s.add_argument("--split", help="split plan; restricts evaluation to InferenceTest rows")
    s.add_argument("--agreement", action="store_true", help="include agreement buckets")
    s.add_argument("--sensitivity", action="store_true", help="include distance buckets")
    s.add_argument("--svg", action="store_true")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except LeakageError as exc:
        print(f"leakage violation: {exc}", file=sys.stderr)
        return EXIT_LEAKAGE
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DataValidationError, SchemaError, CascadeError, GeneratorError, ImputationError,
            LearnerError, EvaluationError, SplitError, TargetDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
