"""Small on-disk fixture runs shared by the pipeline, CLI and acceptance tests."""
from dpaug.candidate_source import SourceConfig
from dpaug.config import RunConfig
from dpaug.fixtures import FixtureSpec, make_fixture
from dpaug.text_model import TrainConfig

SMALL = FixtureSpec(n_classes=3, n_private=240, n_public=200, pool_per_class=400, disc_test_size=40)


def write_fixture(directory, seed=0, spec=SMALL):
    return make_fixture(seed, spec).write(directory)


def run_config(paths, out_dir, **overrides) -> RunConfig:
    base = dict(
        private_path=paths["private"],
        public_path=paths["public"],
        labels_path=paths["labels"],
        out_dir=str(out_dir),
        teachers=5,
        queries=60,
        n_aug=60,
        model=TrainConfig(dim=2**10, epochs=10),
        source=SourceConfig(kind="file", path=paths["pool"]),
    )
    base.update(overrides)
    return RunConfig(**base)
