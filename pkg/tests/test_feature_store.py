# tests/test_feature_store.py
from dataclasses import fields

import numpy as np
import pytest

from mrkd.audio_io import CropMode
from mrkd.config import BranchConfig, DatasetConfig, RunConfig
from mrkd.data.synthetic import gen_synthetic
from mrkd.errors import MissingFeatureError
from mrkd.features.cache import cache_read
from mrkd.features.extractors import FeatureConfig
from mrkd.schemas import DistillationSchedule
from mrkd.services.feature_store import FeatureStore, extract_all, get_feature_store
from mrkd.services.training_service import Branch, build_branches
from mrkd.workspace import Workspace

LENGTH = 22050
N_FRAMES = 43  # (22050 - 3528) // 441 + 1
LOGMEL = FeatureConfig(representation="logmel64")


@pytest.fixture
def corpus(tmp_path):
    return gen_synthetic(tmp_path / "syn", n_classes=2, clips_per_class=3, seed=5, n_samples=LENGTH)


@pytest.mark.asyncio
async def test_extract_all_caches_every_clip_and_standardizes_train(corpus, tmp_path):
    workspace = Workspace(root=tmp_path / "w")
    stats = await extract_all(corpus, LOGMEL, workspace, canonical_length=LENGTH)
    assert stats.mean.shape == (3, 64)
    for entry in corpus.entries:
        fm = cache_read(workspace.feature_path("logmel64", entry.clip_id), entry.clip_id)
        assert fm.data.shape == (3, N_FRAMES, 64)

    train_ids = corpus.split_ids("train")
    store = get_feature_store(workspace, "logmel64", train_ids, N_FRAMES)
    stacked = np.concatenate([store.full(cid) for cid in train_ids], axis=1)
    np.testing.assert_allclose(stacked.mean(axis=1), 0.0, atol=1e-4)
    assert get_feature_store(workspace, "logmel64", train_ids, N_FRAMES) is store


@pytest.mark.asyncio
async def test_corrupt_cache_entry_is_rebuilt(corpus, tmp_path):
    workspace = Workspace(root=tmp_path / "w")
    await extract_all(corpus, LOGMEL, workspace, canonical_length=LENGTH)
    path = workspace.feature_path("logmel64", corpus.entries[0].clip_id)
    original = path.read_bytes()
    path.write_bytes(b"garbage")
    await extract_all(corpus, LOGMEL, workspace, canonical_length=LENGTH)
    assert path.read_bytes() == original


@pytest.mark.asyncio
async def test_worker_count_does_not_change_cache(corpus, tmp_path):
    one = Workspace(root=tmp_path / "one")
    many = Workspace(root=tmp_path / "many")
    a = await extract_all(corpus, LOGMEL, one, canonical_length=LENGTH, workers=1)
    b = await extract_all(corpus, LOGMEL, many, canonical_length=LENGTH, workers=3)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.std, b.std)
    for entry in corpus.entries:
        assert (
            one.feature_path("logmel64", entry.clip_id).read_bytes()
            == many.feature_path("logmel64", entry.clip_id).read_bytes()
        )


@pytest.mark.asyncio
async def test_non_default_channels_get_their_own_directory(corpus, tmp_path):
    workspace = Workspace(root=tmp_path / "w")
    cfg = FeatureConfig(representation="logmel64", channels=1)
    await extract_all(corpus, cfg, workspace, canonical_length=LENGTH)
    assert (tmp_path / "w" / "features" / "logmel64_1ch" / "stats.npz").is_file()
    assert not (tmp_path / "w" / "features" / "logmel64" / "stats.npz").exists()


def test_missing_cache_is_reported(tmp_path):
    workspace = Workspace(root=tmp_path)
    with pytest.raises(MissingFeatureError) as info:
        FeatureStore.load(workspace.features_dir("mfcc"), ["clip_a"], N_FRAMES, "mfcc")
    assert info.value.exit_code == 3
    assert "clip_a" in str(info.value)


def test_windows_and_batches():
    rng = np.random.default_rng(0)
    store = FeatureStore.from_arrays(
        {"a": rng.standard_normal((3, 30, 8)), "b": rng.standard_normal((3, 50, 8))}, n_frames=20
    )
    assert store.input_shape == (3, 20, 8)
    center = store.batch(["a", "b"])
    assert center.shape == (2, 3, 20, 8)
    np.testing.assert_array_equal(center[0], store.full("a")[:, 5:25])

    first = store.batch(["a", "b"], CropMode.TRAIN_RANDOM, seed=4)
    again = store.batch(["a", "b"], CropMode.TRAIN_RANDOM, seed=4)
    np.testing.assert_array_equal(first, again)
    with pytest.raises(MissingFeatureError):
        store.full("c")
    assert "a" in store and len(store) == 2


def test_from_arrays_defaults_to_shortest_clip():
    store = FeatureStore.from_arrays({"a": np.zeros((1, 12, 4)), "b": np.zeros((1, 9, 4))})
    assert store.n_frames == 9


@pytest.mark.asyncio
async def test_branches_read_standardized_windows_from_shared_store(corpus, tmp_path):
    cfg = RunConfig(
        dataset=DatasetConfig(canonical_length=LENGTH),
        branches=[
            BranchConfig(branch_id=bid, representation="logmel64", family="vgg_small", stage_channels=[4], seed=s)
            for bid, s in (("a", 1), ("b", 2))
        ],
    )
    workspace = Workspace(root=tmp_path / "w")
    for feature_cfg in cfg.feature_sets():
        await extract_all(corpus, feature_cfg, workspace, canonical_length=LENGTH)

    first, second = build_branches(cfg, workspace, corpus)
    assert first.store is second.store
    # окно приходит из конфига, стандартизация живёт только в хранилище
    assert first.store.n_frames == cfg.n_frames == N_FRAMES
    assert "stats" not in {f.name for f in fields(Branch)}
    assert "n_frames" not in {f.name for f in fields(DistillationSchedule)}
    stacked = np.concatenate([first.store.full(cid) for cid in first.train_ids], axis=1)
    np.testing.assert_allclose(stacked.mean(axis=1), 0.0, atol=1e-4)
    assert first.store.batch(first.train_ids[:2]).shape == (2, 3, N_FRAMES, 64)
