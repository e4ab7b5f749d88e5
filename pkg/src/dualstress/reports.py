"""Deterministic report rendering: fixed-width text tables, JSON and manifests."""
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dml import TABLE4_COLUMNS
from .robustness import TABLE5_COLUMNS, TABLE5_ROW

TABLE1_COLUMNS = ["Lag", "ATE", "p-value"]
IMPORTANCE_COLUMNS = ["feature", "mean_abs_shap"]
DEPENDENCE_COLUMNS = ["feature_value", "shap_value", "color_value"]


def fmt(value, digits=4):
    """Fixed-point rendering; missing or non-finite values print as ``NA``."""
    if value is None:
        return "NA"
    value = float(value)
    if not math.isfinite(value):
        return "NA"
    out = f"{value:.{digits}f}"
    # avoid "-0.0000"
    return out[1:] if out.startswith("-") and float(out) == 0 else out


def format_table(columns, rows, title=None):
    """Left-aligned columns separated by at least two spaces."""
    cells = [list(map(str, columns))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(columns))]
    lines = [title] if title else []
    for r in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def parse_table_header(line):
    """Inverse of the header rendering used by :func:`format_table`."""
    return re.split(r"\s{2,}", line.strip())


def table1_text(report):
    rows = []
    for r in report.rows:
        if r.effect is None:
            rows.append([r.label, "NA", "NA"])
        else:
            rows.append([r.label, fmt(r.effect.ame), fmt(r.effect.p_value)])
    text = format_table(TABLE1_COLUMNS, rows, title="Lagged logit effects of strike exposure (ATE = average marginal effect)")
    failed = [r for r in report.rows if r.error]
    for r in failed:
        text += f"note: lag {r.lag} not estimated: {r.error}\n"
    return text


def table4_text(estimate):
    rows = [[label, fmt(c.estimate), fmt(c.se), fmt(c.p_value)] for label, c in estimate.table_rows()]
    text = format_table(TABLE4_COLUMNS, rows, title="Cross-fitted DML estimates")
    ci = estimate.gamma
    text += (f"n = {estimate.n}, folds = {estimate.folds}, seed = {estimate.seed}; "
             f"{int(round(estimate.level * 100))}% CI for interaction: [{fmt(ci.ci_low)}, {fmt(ci.ci_high)}]\n")
    return text


def table5_text(report):
    c = report.coefficient
    rows = [[TABLE5_ROW, fmt(c.estimate), fmt(c.se), fmt(c.ci_low), fmt(c.ci_high), fmt(c.p_value)]]
    text = format_table(TABLE5_COLUMNS, rows, title="Placebo test")
    text += f"mode = {report.spec.mode}, permutation scope = {report.spec.within}, n = {report.n}, seed = {report.seed}\n"
    return text


def sweep_text(result):
    s = result.summary()
    columns = ["Parameter", "Mean", "SD", "Min", "Max", "Positive", "Significant"]
    rows = []
    for name, label in (("tau", "Strikes (Lag 2)"), ("gamma", "Interaction (Strikes x Inflation)")):
        v = s.get(name)
        if v is None:
            rows.append([label] + ["NA"] * 6)
            continue
        rows.append([label, fmt(v["mean"]), fmt(v["sd"]), fmt(v["min"]), fmt(v["max"]),
                     fmt(v["positive_fraction"]), fmt(v["significant_fraction"])])
    text = format_table(columns, rows, title=f"Seed sensitivity over {s['n_seeds']} seeds")
    for f in result.failures:
        text += f"note: seed {f['seed']} failed: {f['error']}\n"
    return text


def importance_text(frame, auc):
    rows = [[f, fmt(v)] for f, v in zip(frame["feature"], frame["mean_abs_shap"])]
    return format_table(["Feature", "Mean |SHAP|"], rows, title=f"Global importance (test AUC = {fmt(auc)})")


def scenario_text(report):
    rows = [[name, fmt(report.attrition[name])] for name in report.attrition]
    amp = fmt(report.amplification) if report.defined else f"undefined ({report.reason})"
    return (format_table(["Scenario", "Attrition"], rows, title=f"Cumulative dropout share at semester {report.horizon}")
            + f"amplification = {amp}\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    return obj


def dumps(obj):
    """Canonical JSON: sorted keys, non-finite floats as null, trailing newline."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_text(path, text):
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def write_json(path, obj):
    write_text(path, dumps(obj))


def write_frame(path, frame):
    frame.to_csv(path, index=False, lineterminator="\n")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to replay a command: its arguments and input digests.

    Worker counts are deliberately absent since outputs do not depend on them.
    """

    command: str
    arguments: dict
    seed: int
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    version: str = __version__

    def to_dict(self):
        return {"command": self.command, "arguments": self.arguments, "seed": self.seed, "config": self.config,
                "inputs": self.inputs, "outputs": self.outputs, "tool_version": self.version}

    @classmethod
    def from_dict(cls, d):
        return cls(command=d["command"], arguments=d["arguments"], seed=d["seed"], config=d.get("config", {}),
                   inputs=d.get("inputs", {}),
                   outputs=d.get("outputs", {}), version=d.get("tool_version", __version__))

    def write(self, out_dir):
        write_json(Path(out_dir) / "manifest.json", self.to_dict())
