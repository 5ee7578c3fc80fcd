"""
End-to-end augmentation on a synthetic two-domain corpus
========================================================

Build a small fixture, run every stage into a scratch directory, and look
at what came out: the budget, the quotas and a few selected records.
"""
import json
import tempfile
from pathlib import Path

from dpaug import RunConfig, run_pipeline
from dpaug.candidate_source import SourceConfig
from dpaug.fixtures import FixtureSpec, make_fixture
from dpaug.text_model import TrainConfig

work = Path(tempfile.mkdtemp(prefix="dpaug-demo-"))

# private notes, public negatives and a pool standing in for generator output
paths = make_fixture(0, FixtureSpec(n_private=800, n_public=600)).write(work / "data")

config = RunConfig(
    private_path=paths["private"],
    public_path=paths["public"],
    labels_path=paths["labels"],
    out_dir=str(work / "run"),
    teachers=15,
    queries=300,
    n_aug=200,
    model=TrainConfig(dim=2**12),
    source=SourceConfig(kind="file", path=paths["pool"]),
)
data, report = run_pipeline(config)

print("run directory:", config.out_dir)
print("\nper-mechanism budgets:")
for name, b in report["mechanisms"].items():
    print(f"  {name:<6} eps={b['epsilon']:.3f} delta={b['delta']:.0e}")
print(f"  total  eps={report['total']['epsilon']:.3f} delta={report['total']['delta']:.0e}")

manifest = json.loads((work / "run" / "manifest.json").read_text())
print("\nquotas:", manifest["quota"])
print("candidates scored:", manifest["candidates_scored"])

# scoring is post-processing of the student, so it never shows up in the ledger
print("\nfirst selected records:")
for r in data.records[:3]:
    print(f"  [{r.label.name}] {r.text[:70]}...")
