"""The standard seeded synthetic benchmark: GED, network and fused EERs per protocol cell."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import SynthConfig, generate_synthetic
from .embedding import TrainConfig, genuine_images, train
from .evaluation import RANDOM, SKILLED, SYSTEMS, PairwiseCache, Protocol, run_protocol

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchmarkConfig:
    """Evaluation users and a disjoint set of training users, both synthetic."""

    eval_data: SynthConfig = SynthConfig(users=10, genuine_per_user=24, skilled_per_user=30, seed=0)
    train_data: SynthConfig = SynthConfig(users=20, genuine_per_user=24, skilled_per_user=0, seed=0, first_user=1000)
    training: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=8))
    reference_counts: tuple[int, ...] = (5, 10)
    forgery_modes: tuple[str, ...] = (SKILLED, RANDOM)


@dataclass
class BenchmarkResult:
    # (reference_count, forgery_mode) -> system -> EER
    eers: dict[tuple[int, str], dict[str, float]]
    val_loss: list[float]

    def fusion_within(self, slack: float = 0.02) -> dict[tuple[int, str], bool]:
        """Per cell: is the fused EER at most the better single system's EER plus ``slack``?"""
        return {cell: e["mcs"] <= min(e["ged"], e["neural"]) + slack for cell, e in self.eers.items()}

    def table(self) -> str:
        lines = ["protocol forgeries    ged  neural     mcs"]
        for (k, mode), e in sorted(self.eers.items()):
            lines.append(
                f"R{k:<7d} {mode:<9s} {100 * e['ged']:6.2f}  {100 * e['neural']:6.2f}  {100 * e['mcs']:6.2f}"
            )
        return "\n".join(lines)


def run_benchmark(workdir, config: BenchmarkConfig = BenchmarkConfig()) -> BenchmarkResult:
    workdir = Path(workdir)
    eval_ds = generate_synthetic(config.eval_data, workdir / "eval")
    train_ds = generate_synthetic(config.train_data, workdir / "train")
    model = train(genuine_images(train_ds), config.training)
    log.info("trained model: best epoch %d", model.meta["best_epoch"])
    cache = PairwiseCache(eval_ds, model=model)
    eers = {}
    for k in config.reference_counts:
        for mode in config.forgery_modes:
            protocol = Protocol(reference_count=k, forgery_mode=mode)
            eers[(k, mode)] = {s: run_protocol(eval_ds, protocol, s, cache=cache).eer for s in SYSTEMS}
    return BenchmarkResult(eers, model.meta["val_loss"])
