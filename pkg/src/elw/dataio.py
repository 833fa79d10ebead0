"""CSV datasets, JSON run configurations and report tables."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .el_core import SolverOptions
from .estimators import ChangeScore, ELWEstimator, Unadjusted
from .exceptions import ConfigError, ParseError, SchemaMismatch
from .models import ARMS, OUTCOME_FAMILIES, PROPENSITY_FAMILIES, ModelSpec
from .trial import check_trial_data

SPEC_VERSION = "1"
WEIGHTED_METHODS = {"elw": "pooled", "elw_mis": "pooled", "elw_mr": "pooled",
                    "qz": "arm", "hw": "arm"}
METHODS = tuple(WEIGHTED_METHODS) + ("unadjusted", "change_score")
FORMATS = ("markdown", "csv")


@dataclass(frozen=True)
class CsvSchema:
    """Column layout of a trial CSV file.

    A cell equal to ``missing_token`` or empty marks a missing outcome.
    """

    treatment_column: str = "W"
    outcome_column: str = "Y"
    covariate_columns: tuple = ()
    missing_token: str = "NA"
    baseline_column: str = None

    def __post_init__(self):
        object.__setattr__(self, "covariate_columns", tuple(self.covariate_columns))


@dataclass(frozen=True)
class EstimatorSpec:
    name: str
    method: str
    models: tuple = ()
    baseline_column: object = None
    observed_only: bool = False

    def build(self, covariate_names, solver=None):
        """Instantiate the (unfitted) estimator for the given covariate layout."""
        if self.method == "unadjusted":
            return Unadjusted(observed_only=self.observed_only)
        if self.method == "change_score":
            return ChangeScore(baseline=self.baseline_column,
                               observed_only=self.observed_only)
        slots = {"propensity_treated": [], "propensity_control": [],
                 "outcome_treated": [], "outcome_control": []}
        for spec in self.models:
            unknown = [f for f in spec.features or () if f not in covariate_names]
            if unknown:
                raise ConfigError(f"estimator {self.name!r} uses unknown column(s) "
                                  f"{unknown}; available: {list(covariate_names)}")
            slots[spec.slot].append(spec.build(covariate_names))
        solver = solver or SolverOptions()
        return ELWEstimator(outcome_treated=slots["outcome_treated"],
                            outcome_control=slots["outcome_control"],
                            propensity_treated=slots["propensity_treated"],
                            propensity_control=slots["propensity_control"],
                            targets=WEIGHTED_METHODS[self.method],
                            epsilon=solver.epsilon,
                            max_iterations=solver.max_iterations,
                            augmentation_scale=solver.augmentation_scale,
                            hessian_ridge=solver.hessian_ridge,
                            auto_augment=solver.auto_augment)


@dataclass(frozen=True)
class RunConfig:
    schema: CsvSchema
    estimators: tuple
    solver: SolverOptions = field(default_factory=SolverOptions)
    bootstrap_replicates: int = 500
    stratified: bool = False
    seed: int = None
    output: str = "markdown"
    scenario_params: dict = field(default_factory=dict)


# -- CSV ---------------------------------------------------------------------

def load_csv(path, schema):
    """Read a trial CSV into :class:`~elw.trial.TrialData`.

    Raises
    ------
    SchemaMismatch
        A required column is absent from the header.
    ParseError
        A cell cannot be parsed; the message names the data row (1-based,
        header excluded) and the column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        wanted = [schema.treatment_column, schema.outcome_column,
                  *schema.covariate_columns]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaMismatch(f"{path}: header lacks column(s) {missing}")
        if len(set(header)) != len(header):
            raise SchemaMismatch(f"{path}: duplicate column names in header")
        pos = {c: header.index(c) for c in wanted}
        w, y, x = [], [], []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"row {i}: expected {len(header)} fields, got {len(row)}")
            w.append(_parse_treatment(row[pos[schema.treatment_column]], i,
                                      schema.treatment_column))
            y.append(_parse_outcome(row[pos[schema.outcome_column]], i, schema))
            x.append([_parse_float(row[pos[c]], i, c) for c in schema.covariate_columns])
    if not w:
        raise SchemaMismatch(f"{path}: no data rows")
    X = np.asarray(x, dtype=float).reshape(len(w), len(schema.covariate_columns))
    return check_trial_data(X, np.asarray(y), np.asarray(w),
                            covariate_names=schema.covariate_columns)


def _parse_treatment(cell, row, col):
    cell = cell.strip()
    if cell not in ("0", "1"):
        raise ParseError(f"row {row}, column {col}: treatment must be 0 or 1, got {cell!r}")
    return int(cell)


def _parse_float(cell, row, col):
    try:
        value = float(cell.strip())
    except ValueError:
        raise ParseError(f"row {row}, column {col}: not a number: {cell!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}, column {col}: non-finite value {cell!r}")
    return value


def _parse_outcome(cell, row, schema):
    if cell.strip() in ("", schema.missing_token):
        return math.nan
    return _parse_float(cell, row, schema.outcome_column)


def _fmt_value(v):
    return repr(float(v))


def write_csv(data, path=None, schema=None):
    """Write TrialData as CSV; returns the text and writes ``path`` if given.

    Floats use the shortest repr that round-trips exactly.
    """
    schema = schema or CsvSchema(covariate_columns=data.covariate_names)
    if len(schema.covariate_columns) != data.x.shape[1]:
        raise SchemaMismatch("schema covariate columns do not match the data")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([schema.treatment_column, schema.outcome_column,
                     *schema.covariate_columns])
    for k in range(data.N):
        yk = schema.missing_token if data.r[k] == 0 else _fmt_value(data.y[k])
        writer.writerow([int(data.w[k]), yk, *map(_fmt_value, data.x[k])])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    return text


# -- configuration -------------------------------------------------------------

_TOP_KEYS = {"spec_version", "schema", "estimators", "solver", "bootstrap",
             "seed", "output", "scenario"}
_SCHEMA_KEYS = {"treatment_column", "outcome_column", "covariate_columns",
                "missing_token", "baseline_column"}
_EST_KEYS = {"name", "method", "models", "baseline_column", "observed_only"}
_MODEL_KEYS = {"arm", "family", "features"}
_SOLVER_KEYS = {"epsilon", "max_iterations", "augmentation_scale",
                "hessian_ridge", "auto_augment"}
_BOOT_KEYS = {"replicates", "stratified"}
_SCENARIO_KEYS = {"params"}


def _obj(value, path, allowed):
    if not isinstance(value, dict):
        raise ConfigError("expected an object", path)
    for key in value:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", f"{path}.{key}")
    return value


def _typed(value, kinds, path, what):
    if isinstance(value, bool) and bool not in kinds:
        raise ConfigError(f"expected {what}", path)
    if not isinstance(value, kinds):
        raise ConfigError(f"expected {what}", path)
    return value


def _str_list(value, path):
    if not isinstance(value, list):
        raise ConfigError("expected a list of column names", path)
    for i, v in enumerate(value):
        _typed(v, (str,), f"{path}[{i}]", "a column name")
    return value


def _parse_schema(doc, path):
    doc = _obj(doc, path, _SCHEMA_KEYS)
    kwargs = {}
    for key in ("treatment_column", "outcome_column", "missing_token", "baseline_column"):
        if key in doc:
            kwargs[key] = _typed(doc[key], (str,), f"{path}.{key}", "a string")
    if "covariate_columns" not in doc:
        raise ConfigError("covariate_columns is required", f"{path}.covariate_columns")
    cols = _str_list(doc["covariate_columns"], f"{path}.covariate_columns")
    if len(set(cols)) != len(cols):
        raise ConfigError("duplicate covariate column", f"{path}.covariate_columns")
    kwargs["covariate_columns"] = tuple(cols)
    schema = CsvSchema(**kwargs)
    if schema.baseline_column is not None and schema.baseline_column not in cols:
        raise ConfigError(f"column {schema.baseline_column!r} is not a covariate",
                          f"{path}.baseline_column")
    return schema


def _parse_model(doc, path, columns):
    doc = _obj(doc, path, _MODEL_KEYS)
    for key in ("arm", "family"):
        if key not in doc:
            raise ConfigError(f"{key} is required", f"{path}.{key}")
    if doc["arm"] not in ARMS:
        raise ConfigError("arm must be 'treated' or 'control'", f"{path}.arm")
    if doc["family"] not in PROPENSITY_FAMILIES + OUTCOME_FAMILIES:
        raise ConfigError(f"unknown family {doc['family']!r}", f"{path}.family")
    features = None
    if "features" in doc:
        features = _str_list(doc["features"], f"{path}.features")
        for i, f in enumerate(features):
            if columns is not None and f not in columns:
                raise ConfigError(f"column {f!r} is not a covariate",
                                  f"{path}.features[{i}]")
    return ModelSpec(doc["arm"], doc["family"], features)


def _parse_estimator(doc, path, schema, columns):
    doc = _obj(doc, path, _EST_KEYS)
    method = doc.get("method")
    if method not in METHODS:
        raise ConfigError(f"method must be one of {list(METHODS)}", f"{path}.method")
    name = _typed(doc.get("name", method), (str,), f"{path}.name", "a string")
    observed_only = _typed(doc.get("observed_only", False), (bool,),
                           f"{path}.observed_only", "true or false")
    models = []
    if "models" in doc:
        if not isinstance(doc["models"], list):
            raise ConfigError("expected a list", f"{path}.models")
        models = [_parse_model(m, f"{path}.models[{i}]", columns)
                  for i, m in enumerate(doc["models"])]
    if method in WEIGHTED_METHODS and not models:
        raise ConfigError(f"method {method!r} needs at least one model", f"{path}.models")
    if method not in WEIGHTED_METHODS and models:
        raise ConfigError(f"method {method!r} takes no models", f"{path}.models")
    baseline = doc.get("baseline_column", schema.baseline_column)
    if method == "change_score":
        if baseline is None:
            raise ConfigError("change_score needs a baseline_column",
                              f"{path}.baseline_column")
        _typed(baseline, (str,), f"{path}.baseline_column", "a column name")
        if columns is not None and baseline not in columns:
            raise ConfigError(f"column {baseline!r} is not a covariate",
                              f"{path}.baseline_column")
    elif "baseline_column" in doc:
        raise ConfigError("only change_score uses baseline_column",
                          f"{path}.baseline_column")
    return EstimatorSpec(name, method, tuple(models),
                         baseline if method == "change_score" else None, observed_only)


def _parse_solver(doc, path):
    doc = _obj(doc, path, _SOLVER_KEYS)
    kinds = {"epsilon": (int, float), "max_iterations": (int,),
             "augmentation_scale": (int, float), "hessian_ridge": (int, float),
             "auto_augment": (bool,)}
    kwargs = {k: _typed(v, kinds[k], f"{path}.{k}", "a number" if k != "auto_augment"
                        else "true or false") for k, v in doc.items()}
    try:
        return SolverOptions(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None


def config_from_dict(doc):
    """Validate a decoded JSON document into a :class:`RunConfig`."""
    doc = _obj(doc, "$", _TOP_KEYS)
    if doc.get("spec_version") != SPEC_VERSION:
        raise ConfigError(f'spec_version must be "{SPEC_VERSION}"', "$.spec_version")
    # Without a schema (simulation runs) column names are checked when the
    # estimators are built against the generated covariates.
    if "schema" in doc:
        schema = _parse_schema(doc["schema"], "$.schema")
        columns = schema.covariate_columns
    else:
        schema, columns = CsvSchema(), None
    raw = doc.get("estimators", [])
    if not isinstance(raw, list) or not raw:
        raise ConfigError("expected a non-empty list of estimators", "$.estimators")
    estimators = tuple(_parse_estimator(e, f"$.estimators[{i}]", schema, columns)
                       for i, e in enumerate(raw))
    names = [e.name for e in estimators]
    if len(set(names)) != len(names):
        raise ConfigError("estimator names must be unique", "$.estimators")
    solver = _parse_solver(doc["solver"], "$.solver") if "solver" in doc else SolverOptions()
    boot = _obj(doc.get("bootstrap", {}), "$.bootstrap", _BOOT_KEYS)
    replicates = _typed(boot.get("replicates", 500), (int,),
                        "$.bootstrap.replicates", "an integer")
    if replicates < 0 or replicates == 1:
        raise ConfigError("replicates must be 0 or at least 2", "$.bootstrap.replicates")
    stratified = _typed(boot.get("stratified", False), (bool,),
                        "$.bootstrap.stratified", "true or false")
    seed = doc.get("seed")
    if seed is not None and (_typed(seed, (int,), "$.seed", "an integer") < 0):
        raise ConfigError("seed must be non-negative", "$.seed")
    output = doc.get("output", "markdown")
    if output not in FORMATS:
        raise ConfigError(f"output must be one of {list(FORMATS)}", "$.output")
    scenario = _obj(doc.get("scenario", {}), "$.scenario", _SCENARIO_KEYS)
    params = _obj(scenario.get("params", {}), "$.scenario.params",
                  {"gaussian_mean", "gaussian_cov", "bernoulli_p", "beta_treated",
                   "beta_control", "error_sd", "alpha_treated", "alpha_control"})
    return RunConfig(schema, estimators, solver, replicates, stratified, seed,
                     output, dict(params))


def parse_config(path):
    """Load and validate a JSON run configuration.

    Raises
    ------
    ConfigError
        Malformed JSON, unknown keys or invalid values; ``.path`` holds the
        JSON path of the offending entry.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (line {exc.lineno})") from None
    return config_from_dict(doc)


# -- reports -------------------------------------------------------------------

@dataclass(frozen=True)
class EstimateRow:
    estimator: str
    estimate: float
    boot_se: float = math.nan
    test_stat: float = math.nan
    rel_eff: float = math.nan


ESTIMATE_COLUMNS = ("Estimator", "Estimate", "Boot.SE", "Test stat.", "Rel. eff.")
METRICS_COLUMNS = ("Estimator", "Bias", "Ave.Boot.SE", "Cov.prob.boot.", "MSE")


def _fmt(v):
    v = float(v)
    if math.isnan(v):
        return "NA"
    if math.isinf(v):
        return "Inf" if v > 0 else "-Inf"
    out = f"{v:.3f}"
    return "0.000" if out == "-0.000" else out


def _table(results):
    first = results[0]
    if hasattr(first, "mse"):
        return METRICS_COLUMNS, [
            (r.estimator, _fmt(r.bias), _fmt(r.ave_boot_se), _fmt(r.cov_prob_boot),
             _fmt(r.mse)) for r in results]
    return ESTIMATE_COLUMNS, [
        (r.estimator, _fmt(r.estimate), _fmt(r.boot_se), _fmt(r.test_stat),
         _fmt(r.rel_eff)) for r in results]


def write_report(results, format="markdown"):
    """Render estimate rows or Monte Carlo metrics rows as a table.

    Rows keep the order given. Numbers have three decimals; ``NA`` marks a
    value that was not computed.
    """
    results = list(results)
    if not results:
        raise ValueError("nothing to report")
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    header, rows = _table(results)
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    widths = [max(len(header[j]), *(len(r[j]) for r in rows)) for j in range(len(header))]

    def line(cells):
        padded = [c.ljust(widths[0]) if j == 0 else c.rjust(widths[j])
                  for j, c in enumerate(cells)]
        return "| " + " | ".join(padded) + " |"

    rule = "|" + "|".join(["-" * (widths[0] + 2)]
                          + ["-" * (w + 1) + ":" for w in widths[1:]]) + "|"
    return "\n".join([line(header), rule, *(line(r) for r in rows)]) + "\n"


def read_report_csv(text):
    """Parse a CSV report back into ``{estimator: {column: value}}``."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    out = {}
    for row in reader:
        out[row[0]] = {h: (math.nan if v == "NA" else float(v.replace("Inf", "inf")))
                       for h, v in zip(header[1:], row[1:])}
    return out


__all__ = ["CsvSchema", "EstimatorSpec", "RunConfig", "EstimateRow", "load_csv",
           "write_csv", "parse_config", "config_from_dict", "write_report",
           "read_report_csv", "METHODS", "SPEC_VERSION"]
