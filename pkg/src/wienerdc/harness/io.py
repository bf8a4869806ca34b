"""Result files: results.csv, results.json, summary.txt and the resume log."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
import os

import numpy as np

from ..bounds import _jsonable
from .config import RunConfig
from .experiments import SCHEMA_VERSION, RunResult

PROGRESS = "progress.json"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def csv_text(res: RunResult, stamp: str | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# wienerdc {res.kind} generated {stamp or timestamp()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(res.fields)
    for r in res.rows:
        w.writerow([_cell(r.get(f)) for f in res.fields])
    return buf.getvalue()


def csv_body(text: str) -> str:
    """The CSV without its timestamp comment."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


def _clean(x):
    x = _jsonable(x)
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_clean(v) for v in x]
    return x


def result_record(res: RunResult, cfg: RunConfig, stamp: str) -> dict:
    return _clean(
        {
            "schema_version": SCHEMA_VERSION,
            "generated": stamp,
            "kind": res.kind,
            "config_hash": cfg.content_hash(),
            "config": cfg.to_record(),
            "fields": list(res.fields),
            "rows": res.rows,
            "fit": None if res.fit is None else res.fit.__dict__,
            "failures": res.failures,
            "warnings": res.warnings,
        }
    )


def summary_text(res: RunResult, cfg: RunConfig) -> str:
    lines = [f"experiment: {res.kind}", f"config hash: {cfg.content_hash()}", f"rows: {len(res.rows)}"]
    if res.kind == "breuer-major-rate":
        lines.append(f"{'model':<14}{'n':>7}{'dc_lower':>12}{'se':>10}{'theorem1':>10}{'dW':>9}{'bridge':>9}")
        for r in res.rows:
            lines.append(
                f"{r['model']:<14}{r['n']:>7}{r['dc_lower']:>12.5f}{r['dc_se']:>10.5f}"
                f"{r['theorem1_clipped']:>10.4f}{r['dW']:>9.4f}{r['bridge']:>9.4f}"
            )
    if res.fit is not None:
        f = res.fit
        lines.append(f"fitted slope {f.slope:.4f} (95% CI {f.ci[0]:.4f}..{f.ci[1]:.4f}) over {f.points} points")
    lines.append(f"failures: {len(res.failures)}")
    for item in res.failures:
        lines.append(f"  FAIL {item.get('check')}: " + json.dumps(_clean(item), sort_keys=True))
    lines.append(f"warnings: {len(res.warnings)}")
    lines += [f"  {w}" for w in res.warnings]
    return "\n".join(lines) + "\n"


def write_outputs(res: RunResult, cfg: RunConfig, out: str) -> dict:
    os.makedirs(out, exist_ok=True)
    stamp = timestamp()
    paths = {name: os.path.join(out, name) for name in ("results.csv", "results.json", "summary.txt")}
    with open(paths["results.csv"], "w", newline="") as fh:
        fh.write(csv_text(res, stamp))
    with open(paths["results.json"], "w") as fh:
        json.dump(result_record(res, cfg, stamp), fh, indent=1, sort_keys=True)
    with open(paths["summary.txt"], "w") as fh:
        fh.write(summary_text(res, cfg))
    if res.failures:
        paths["failures.json"] = os.path.join(out, "failures.json")
        with open(paths["failures.json"], "w") as fh:
            json.dump(_clean(res.failures), fh, indent=1, sort_keys=True)
    return paths


class Progress:
    """Completed sweep points, keyed by the config's content hash."""

    def __init__(self, out: str, cfg: RunConfig):
        self.path = os.path.join(out, PROGRESS)
        self.hash = cfg.content_hash()
        self.points: dict = {}

    def load(self) -> dict:
        try:
            with open(self.path) as fh:
                rec = json.load(fh)
        except (OSError, ValueError):
            return {}
        if rec.get("config_hash") != self.hash:
            return {}
        self.points = rec.get("points", {})
        return dict(self.points)

    def add(self, key: str, rows: list):
        self.points[key] = rows
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        tmp = self.path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump({"config_hash": self.hash, "points": _jsonable(self.points)}, fh, sort_keys=True)
        os.replace(tmp, self.path)

