"""
Experimentos comparativos a escala de escritorio
headline: GQ-STN frente a DirectGrasp con los mismos backbones y presupuesto.
bootstrap: calendario completo frente a ξ = 0 desde el inicio.
"""

import logging
import statistics
from typing import Callable, Dict, List, Optional, Sequence

from dataset_builder import GraspDataset
from eval_bench import EvalConfig, eval_detector
from locnet import BackboneConfig
from quality_model import QualityModel
from trainer import Phase, Schedule, TrainingConfig, train_directgrasp, train_gqstn


def without_bootstrap(schedule: Schedule) -> Schedule:
    """Mismo presupuesto de épocas y tasas, pero ξ = 0 y sin teacher forcing desde la primera fase"""
    phases = [Phase(p.epochs, 0.0, p.learning_rate, False, p.early_stopping) for p in schedule.phases]
    return Schedule(phases, schedule.l2_reg, schedule.patience, schedule.epoch_multiplier)


class ExperimentRunner:
    def __init__(self, dataset: GraspDataset, quality: QualityModel, backbone: BackboneConfig,
                 schedule: Schedule, training: TrainingConfig, eval_config: EvalConfig,
                 run_config: Optional[Dict] = None, progress_callback=None, quiet: bool = True):
        self.dataset = dataset
        self.quality = quality
        self.backbone = backbone
        self.schedule = schedule
        self.training = training
        self.eval_config = eval_config
        self.run_config = run_config or {}
        self.progress_callback = progress_callback
        self.quiet = quiet

    def log_progress(self, message: str, level: str = "INFO"):
        if self.progress_callback:
            self.progress_callback(message, level)
        logging.log(logging.getLevelName(level), message)

    def _robust(self, model) -> float:
        report = eval_detector(model, self.dataset, self.quality, "test", config=self.eval_config)
        return report.robust_precision

    def _gqstn(self, seed: int, schedule: Schedule) -> float:
        result = train_gqstn(self.dataset, self.quality, schedule, seed, self.backbone, self.training,
                             quiet=self.quiet)
        return self._robust(result.model)

    def headline(self, seeds: Sequence[int]) -> Dict:
        rows: List[Dict] = []
        for seed in seeds:
            self.log_progress(f"Experimento principal, semilla {seed}")
            gqstn = self._gqstn(seed, self.schedule)
            baseline = train_directgrasp(self.dataset, self.schedule, seed, self.backbone, self.training,
                                         quiet=self.quiet)
            direct = self._robust(baseline.model)
            rows.append({"seed": seed, "gqstn_robust": gqstn, "directgrasp_robust": direct, "gap": gqstn - direct})
            self.log_progress(f"Semilla {seed}: GQ-STN {gqstn:.1f}%, DirectGrasp {direct:.1f}%")
        median_gap = statistics.median(r["gap"] for r in rows)
        return {"kind": "headline", "seeds": list(seeds), "runs": rows, "median_gap": median_gap,
                "config": self.run_config}

    def bootstrap(self, seeds: Sequence[int]) -> Dict:
        rows: List[Dict] = []
        ablated = without_bootstrap(self.schedule)
        for seed in seeds:
            self.log_progress(f"Experimento de arranque, semilla {seed}")
            scheduled = self._gqstn(seed, self.schedule)
            from_zero = self._gqstn(seed, ablated)
            rows.append({"seed": seed, "scheduled_robust": scheduled, "xi_zero_robust": from_zero,
                         "gap": scheduled - from_zero})
        return {"kind": "bootstrap", "seeds": list(seeds), "runs": rows,
                "median_gap": statistics.median(r["gap"] for r in rows), "config": self.run_config}

    def run(self, kind: str, seeds: Sequence[int]) -> Dict:
        experiments: Dict[str, Callable[[Sequence[int]], Dict]] = {
            "headline": self.headline, "bootstrap": self.bootstrap}
        return experiments[kind](seeds)
