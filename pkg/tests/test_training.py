import numpy as np
import pytest

from atbrg.autodiff import ParameterStore
from atbrg.data import Dataset, Sample
from atbrg.model import ModelConfig, init_params
from atbrg.synth import SynthSpec, generate
from atbrg.training import (AblationTable, Checkpoint, Pipeline, evaluate, preset_grid, run_ablation,
                            train)

CFG = ModelConfig.desk_scale(layers=3, lr=0.05, epochs=4, mlp_dims=(8, 4))


@pytest.fixture(scope="module")
def ds():
    data = generate(SynthSpec(n_train=400, n_test=150, pilot=200))
    return Dataset(data.kg, data.schema, data.users, data.items, data.train, data.test)


def same_store(a: ParameterStore, b: ParameterStore):
    assert a.names() == b.names()
    return all(np.array_equal(a[n], b[n]) and np.array_equal(a.accum[n], b.accum[n]) for n in a.names())


def test_training_is_deterministic(ds):
    pipe = Pipeline.from_dataset(ds, CFG)
    c1, r1 = train(pipe, ds.train, ds.test)
    c2, r2 = train(Pipeline.from_dataset(ds, CFG), ds.train, ds.test)
    assert r1.epoch_loss == r2.epoch_loss and r1.test_auc == r2.test_auc
    assert same_store(c1.store, c2.store)
    c3, _ = train(pipe, ds.train, ds.test, seed=1)
    assert not same_store(c1.store, c3.store)


def test_loss_descends(ds):
    _, report = train(Pipeline.from_dataset(ds, CFG.with_(epochs=6)), ds.train)
    assert np.mean(report.epoch_loss[-3:]) < report.epoch_loss[0]
    assert all(np.isfinite(report.epoch_loss))
    assert report.test_auc is None


def test_zero_epochs_is_initialization(ds):
    cfg = CFG.with_(epochs=0)
    ckpt, report = train(Pipeline.from_dataset(ds, cfg), ds.train)
    init = init_params(cfg, ds.schema, ds.kg.n_entities, ds.kg.n_relations, seed=cfg.seed)
    assert same_store(ckpt.store, init)
    assert report.epoch_loss == []


def test_single_sample_overfits(ds):
    sample = ds.train[0]
    cfg = CFG.with_(epochs=200, batch_size=1)
    _, report = train(Pipeline.from_dataset(ds, cfg), [sample])
    assert report.epoch_loss[-1] < report.epoch_loss[0]


def test_scores_independent_of_batching(ds):
    pipe = Pipeline.from_dataset(ds, CFG)
    ckpt, _ = train(pipe, ds.train[:100])
    big = pipe.predict(ckpt.store, ckpt.stats, ds.test[:40])
    small = Pipeline.from_dataset(ds, CFG.with_(batch_size=3)).predict(ckpt.store, ckpt.stats, ds.test[:40])
    np.testing.assert_allclose(big, small, rtol=1e-12, atol=0)


def test_checkpoint_round_trip_and_eval(ds, tmp_path):
    pipe = Pipeline.from_dataset(ds, CFG)
    ckpt, report = train(pipe, ds.train, ds.test)
    ckpt.save(tmp_path / "ckpt.json")
    back = Checkpoint.load(tmp_path / "ckpt.json")
    assert same_store(back.store, ckpt.store) and back.config == ckpt.config and back.schema == ds.schema
    assert evaluate(Pipeline.from_dataset(ds, back.config), back, ds.test) == report.test_auc


def test_report_json_excludes_wall_time(ds):
    _, report = train(Pipeline.from_dataset(ds, CFG.with_(epochs=1)), ds.train)
    assert "wall_time" not in report.to_json() and report.to_json(include_time=True)["wall_time"] > 0


def test_dedupe_target_flag(ds):
    pipe = Pipeline.from_dataset(ds, CFG.with_(dedupe_target=True))
    out = pipe.prepare([Sample(0, 3, (3, 1), 1)])
    assert out[0].behaviors == (1,)


def test_ablation_single_row(ds):
    table = run_ablation([("only", CFG.with_(epochs=1))], ds)
    assert len(table.rows) == 1 and table.rows[0].ri is None
    assert "only" in table.to_text()


def test_ablation_repeats_and_ri(ds):
    grid, ref = preset_grid("ram_ral", CFG.with_(epochs=1))
    table = run_ablation(grid, ds, repeats=2, reference=ref)
    assert [r.name for r in table.rows] == ["ATBRG_w/o_RAM", "ATBRG_w/o_RAL", "ATBRG"]
    for row in table.rows:
        assert len(row.aucs) == 2 and row.auc == pytest.approx(np.mean(row.aucs))
    assert table.rows[-1].ri is None and table.rows[0].ri is not None
    assert AblationTable(**{k: v for k, v in table.to_json().items() if k == "reference"}).reference == "ATBRG"


def test_preset_grids():
    base = ModelConfig()
    names = [n for n, _ in preset_grid("aggregator", base)[0]]
    assert names == ["ATBRG_concat", "ATBRG_sum", "ATBRG_sa", "ATBRG_nl", "ATBRG"]
    depth = preset_grid("depth", base)[0]
    assert [(c.layers, c.depth) for _, c in depth] == [(1, 0), (3, 1), (5, 2), (7, 3)]
    assert preset_grid("baseline", base)[0][0][1].model == "behavior_mlp"
    with pytest.raises(ValueError):
        preset_grid("nope", base)


def test_depth_grid_runtime_grows(ds):
    base = CFG.with_(epochs=1)
    grid = [(f"L{l}", base.with_(layers=l)) for l in (1, 3, 5)]
    table = run_ablation(grid, ds)
    seconds = [r.seconds for r in table.rows]
    assert seconds[0] < seconds[1] < seconds[2], seconds
