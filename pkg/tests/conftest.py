"""Shared fixtures: one small synthetic screen reused across test modules."""

import pytest

import bepredict.data as bd
import bepredict.seqcore as sq
from bepredict.numcore import RngStream


@pytest.fixture(scope="session")
def tiny_screen():
    """Two-editor screen, small enough to regenerate in a couple of seconds."""
    rng = RngStream(7, "profiles")
    profiles = [
        bd.OracleEditorProfile.sample("ABE-t0", "ABE", rng.spawn("ABE-t0")),
        bd.OracleEditorProfile.sample("CBE-t0", "CBE", rng.spawn("CBE-t0")),
    ]
    return bd.generate_synthetic_screen(
        profiles,
        n_references=40,
        reads_per_reference=2000,
        seed=7,
        mode=sq.RepresentationMode.PROTOSPACER_PAM,
        window=(1, 20),
        min_targets=1,
        max_targets=3,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tiny_screen):
    return tiny_screen.datasets["ABE-t0"]


@pytest.fixture(scope="session")
def tiny_library_path(tiny_screen, tmp_path_factory):
    path = tmp_path_factory.mktemp("library") / "library.tsv"
    bd.write_library(tiny_screen.datasets, path)
    return path


@pytest.fixture(scope="session")
def tiny_truth_path(tiny_screen, tmp_path_factory):
    path = tmp_path_factory.mktemp("truth") / "truth.tsv"
    bd.write_truth(tiny_screen.truth, path)
    return path
