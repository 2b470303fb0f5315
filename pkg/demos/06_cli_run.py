"""Driving a whole scenario from a config.

Equivalent to ``issf-margins run example3 --out <dir>``; here we shorten
the sweep horizon so the script finishes quickly, then read back the
report the run wrote.
"""
import json
import tempfile
from pathlib import Path

from issf_margins.cli import load_report, main, read_config

cfg, _ = read_config("example3")
cfg["sweep"]["horizon"] = 5.0
cfg["stages"] = ["classify", "certify", "sweep"]
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "example3.json"
    path.write_text(json.dumps(cfg))
    status = main(["run", str(path), "--out", str(Path(tmp) / "out")])
    report = load_report(Path(tmp) / "out" / "report.json")
    print("exit status:", status)
    print("summary:", json.dumps(report["summary"], indent=1))
    print("files:", sorted(p.name for p in (Path(tmp) / "out").rglob("*") if p.is_file()))
