"""Training loop, batch scoring, evaluation and ablation runs."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import model as M
from .autodiff import ParameterStore, adagrad_step, load_checkpoint, save_checkpoint
from .data import Dataset, DenseStats, Sample, Schema, prepare_samples
from .errors import AtbrgError, NumericError
from .kg import KnowledgeGraph, ProfileTable
from .metrics import auc, relative_improvement
from .model import ModelConfig
from .subgraph import SubgraphCache

log = logging.getLogger(__name__)


class TrainingError(AtbrgError):
    pass


@dataclass
class TrainReport:
    epoch_loss: list[float]
    test_auc: float | None
    config: dict
    seed: int
    n_train: int
    n_test: int
    wall_time: float = 0.0

    def to_json(self, include_time: bool = False) -> dict:
        out = asdict(self)
        if not include_time:
            out.pop("wall_time")
        return out


@dataclass
class Checkpoint:
    store: ParameterStore
    config: ModelConfig
    stats: DenseStats
    schema: Schema

    def save(self, path) -> None:
        save_checkpoint(path, self.store, config=self.config.to_json(),
                        stats=self.stats.to_json(), schema=self.schema.to_json())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        store, extra = load_checkpoint(path)
        return cls(store, ModelConfig.from_json(extra["config"]), DenseStats.from_json(extra["stats"]),
                   Schema.from_json(extra["schema"]))


class Pipeline:
    """Everything needed to turn samples into batches for one config."""

    def __init__(self, kg: KnowledgeGraph, schema: Schema, users: ProfileTable, items: ProfileTable,
                 cfg: ModelConfig, cache: SubgraphCache | None = None):
        self.kg, self.schema, self.users, self.items, self.cfg = kg, schema, users, items, cfg
        depth = cfg.depth if cfg.model == "atbrg" else 0
        if cache is None or (cache.max_depth, cache.fanout_cap) != (depth, cfg.fanout_cap):
            cache = SubgraphCache(kg, depth, cfg.fanout_cap)
        self.cache = cache

    @classmethod
    def from_dataset(cls, ds: Dataset, cfg: ModelConfig, cache=None) -> "Pipeline":
        return cls(ds.kg, ds.schema, ds.users, ds.items, cfg, cache)

    def prepare(self, samples: Sequence[Sample]) -> list[Sample]:
        return prepare_samples(samples, self.cfg.max_behaviors, self.cfg.dedupe_target)

    def subgraphs(self, samples: Sequence[Sample]):
        return [self.cache.get(s.item, s.behaviors) for s in samples]

    def batch(self, samples, subs, stats):
        return M.graph_batch(subs), M.profile_batch(samples, self.users, self.items, stats)

    def predict(self, store: ParameterStore, stats: DenseStats, samples: Sequence[Sample]) -> np.ndarray:
        """Scores in input order, computed in fixed-size consecutive batches."""
        samples = self.prepare(samples)
        subs = self.subgraphs(samples)
        bs = self.cfg.batch_size
        out = []
        for lo in range(0, len(samples), bs):
            graph, prof = self.batch(samples[lo:lo + bs], subs[lo:lo + bs], stats)
            out.append(M.predict(store, self.cfg, self.schema, graph, prof))
        return np.concatenate(out) if out else np.zeros(0)


def train(pipe: Pipeline, train_samples: Sequence[Sample], test_samples: Sequence[Sample] = (),
          seed: int | None = None) -> tuple[Checkpoint, TrainReport]:
    """Mini-batch Adagrad on mean binary cross-entropy.

    Deterministic for a fixed seed: parameter init and the per-epoch shuffle
    draw from separate seeded generators.
    """
    cfg = pipe.cfg
    seed = cfg.seed if seed is None else seed
    started = time.perf_counter()
    samples = pipe.prepare(train_samples)
    stats = DenseStats.fit(samples, pipe.users, pipe.items)
    store = M.init_params(cfg, pipe.schema, pipe.kg.n_entities, pipe.kg.n_relations, seed)
    subs = pipe.subgraphs(samples)
    labels = np.asarray([s.label for s in samples], dtype=np.float64)
    shuffle = np.random.default_rng([seed, 1])

    epoch_loss = []
    for epoch in range(cfg.epochs):
        perm = shuffle.permutation(len(samples))
        total = 0.0
        for lo in range(0, len(perm), cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            graph, prof = pipe.batch([samples[i] for i in idx], [subs[i] for i in idx], stats)
            try:
                fwd = M.forward(store, cfg, pipe.schema, graph, prof)
                loss = fwd.loss(labels[idx])
                grads = fwd.tape.backward(loss)
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch} batch {lo // cfg.batch_size}: {exc}") from exc
            value = float(fwd.tape.value(loss))
            if not np.isfinite(value):
                raise TrainingError(f"epoch {epoch}: non-finite loss")
            total += value * len(idx)
            adagrad_step(store, grads, cfg.lr, cfg.eps)
        epoch_loss.append(total / max(len(samples), 1))
        log.info("epoch %d loss %.6f", epoch, epoch_loss[-1])

    ckpt = Checkpoint(store, cfg.with_(seed=seed), stats, pipe.schema)
    test_auc = None
    if test_samples:
        scores = pipe.predict(store, stats, test_samples)
        test_auc = auc(scores, [s.label for s in test_samples])
    report = TrainReport(epoch_loss, test_auc, cfg.with_(seed=seed).to_json(), seed,
                         len(samples), len(test_samples), time.perf_counter() - started)
    return ckpt, report


def evaluate(pipe: Pipeline, ckpt: Checkpoint, samples: Sequence[Sample]) -> float:
    scores = pipe.predict(ckpt.store, ckpt.stats, samples)
    return auc(scores, [s.label for s in samples])


@dataclass
class AblationRow:
    name: str
    auc: float
    aucs: list[float]
    seconds: float
    ri: float | None = None


@dataclass
class AblationTable:
    rows: list[AblationRow] = field(default_factory=list)
    reference: str | None = None

    def to_json(self) -> dict:
        return {"reference": self.reference, "rows": [asdict(r) for r in self.rows]}

    def to_text(self) -> str:
        lines = [f"{'Model':<24}{'AUC':>9}{'RI':>10}"]
        for r in self.rows:
            ri = "-" if r.ri is None else f"+{r.ri:.2f}%"
            lines.append(f"{r.name:<24}{r.auc:>9.4f}{ri:>10}")
        return "\n".join(lines)


def run_ablation(grid: Sequence[tuple[str, ModelConfig]], ds: Dataset, repeats: int = 1,
                 reference: str | None = None) -> AblationTable:
    """Train and test every variant ``repeats`` times with seeds ``seed .. seed+repeats-1``.

    RI of the reference row over each other row is filled in when a
    reference is named.
    """
    table = AblationTable(reference=reference)
    caches: dict = {}
    for name, cfg in grid:
        pipe_cache = caches.get((cfg.depth if cfg.model == "atbrg" else 0, cfg.fanout_cap))
        pipe = Pipeline.from_dataset(ds, cfg, pipe_cache)
        caches[(pipe.cache.max_depth, pipe.cache.fanout_cap)] = pipe.cache
        started = time.perf_counter()
        aucs = []
        for r in range(repeats):
            _, report = train(pipe, ds.train, ds.test, seed=cfg.seed + r)
            aucs.append(report.test_auc)
        table.rows.append(AblationRow(name, float(np.mean(aucs)), aucs, time.perf_counter() - started))
        log.info("%s: AUC %.4f", name, table.rows[-1].auc)
    if reference is not None:
        ref = next(r for r in table.rows if r.name == reference)
        for r in table.rows:
            if r is not ref:
                r.ri = relative_improvement(ref.auc, r.auc)
    return table


def preset_grid(kind: str, base: ModelConfig) -> tuple[list[tuple[str, ModelConfig]], str]:
    """Named variant lists: RAM/RAL switches, aggregators, depths, or KG vs. behavior-only."""
    if kind == "ram_ral":
        return [("ATBRG_w/o_RAM", base.with_(use_ram=False)),
                ("ATBRG_w/o_RAL", base.with_(use_ral=False)),
                ("ATBRG", base)], "ATBRG"
    if kind == "aggregator":
        return [("ATBRG_concat", base.with_(aggregator="concat")),
                ("ATBRG_sum", base.with_(aggregator="sum")),
                ("ATBRG_sa", base.with_(aggregator="self_attention")),
                ("ATBRG_nl", base.with_(aggregator="nonlinear")),
                ("ATBRG", base)], "ATBRG"
    if kind == "depth":
        rows = [(f"ATBRG_{2 * n + 1}/{n}", base.with_(layers=2 * n + 1, max_depth=n)) for n in range(4)]
        return rows, None
    if kind == "baseline":
        return [("behavior_MLP", base.with_(model="behavior_mlp")), ("ATBRG", base)], "ATBRG"
    raise ValueError(f"unknown grid preset {kind!r}")
