"""
Entrenamiento de GQ-STN y de la línea base DirectGrasp
Fases por trozos de ξ (mezcla de pérdida de localización y de robustez),
teacher forcing en las primeras fases, Adam con L2, parada temprana,
historial en JSON-lines y checkpoints en cada frontera de fase.
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

import autodiff as ad
import stn
from autodiff import Tensor
from checkpoint_io import load_checkpoint, save_checkpoint
from dataset_builder import GraspDataset, SceneRecord, scene_rng
from detector import DirectGrasp, GQSTN, _Detector
from errors import ConfigError, DataError, FrozenModelError, NumericalError
from eval_bench import rect_precision, robust_rate
from grasp_geometry import CascadeTarget, GraspConfig, cascade_from_grasps
from locnet import BackboneConfig
from optimizer import Adam
from quality_model import QualityModel, classify

# flujo aleatorio reservado para la selección del positivo por escena
SELECTION_STREAM = 2


@dataclass
class Phase:
    epochs: int
    xi: float
    learning_rate: float
    teacher_forcing: bool = False
    early_stopping: bool = False

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class Schedule:
    phases: List[Phase]
    l2_reg: float = 1e-7
    patience: int = 3
    epoch_multiplier: float = 1.0

    def __post_init__(self):
        self.phases = [p if isinstance(p, Phase) else Phase(**p) for p in self.phases]
        previous = math.inf
        for i, p in enumerate(self.phases):
            if not 0.0 <= p.xi <= 1.0:
                raise ConfigError(f"schedule.phases[{i}].xi fuera de [0, 1]: {p.xi}")
            if p.xi > previous:
                raise ConfigError(f"ξ debe ser no creciente entre fases (fase {i}: {p.xi} > {previous})")
            if p.xi == 0.0 and p.teacher_forcing:
                raise ConfigError(f"La fase {i} tiene ξ = 0 con teacher forcing activo")
            if p.epochs < 0 or p.learning_rate <= 0:
                raise ConfigError(f"Fase {i} inválida: {p}")
            previous = p.xi
        if self.patience < 1 or self.epoch_multiplier < 0:
            raise ConfigError("patience debe ser ≥ 1 y epoch_multiplier ≥ 0")

    def scaled_phases(self) -> List[Tuple[int, Phase]]:
        """Índice original y fase con épocas escaladas; las fases con 0 épocas se omiten"""
        scaled = []
        for i, p in enumerate(self.phases):
            epochs = int(round(p.epochs * self.epoch_multiplier))
            if epochs > 0:
                scaled.append((i, Phase(epochs, p.xi, p.learning_rate, p.teacher_forcing, p.early_stopping)))
        return scaled

    @property
    def total_epochs(self) -> int:
        return sum(p.epochs for _, p in self.scaled_phases())

    @classmethod
    def default(cls) -> "Schedule":
        return cls([
            Phase(6, 1.0, 1e-3, True),
            Phase(3, 0.5, 2e-4, True),
            Phase(3, 0.2, 4e-5, True),
            Phase(9, 0.0, 4e-5, False),
            Phase(19, 0.0, 8e-6, False, True),
        ])

    def to_dict(self) -> Dict:
        return {"phases": [p.to_dict() for p in self.phases], "l2_reg": self.l2_reg,
                "patience": self.patience, "epoch_multiplier": self.epoch_multiplier}

    @classmethod
    def from_dict(cls, data: Dict) -> "Schedule":
        return cls(**data)


@dataclass
class LossMix:
    xi: float
    l_loc: Tensor
    l_rob: Tensor
    l_tot: Tensor

    def values(self) -> Dict[str, float]:
        return {"xi": self.xi, "l_loc": self.l_loc.item(), "l_rob": self.l_rob.item(), "l_tot": self.l_tot.item()}


@dataclass
class TrainResult:
    model: _Detector
    history: List[Dict]
    history_checksum: str
    best_metric: Optional[float] = None
    checkpoints: List[str] = field(default_factory=list)


def mix_losses(xi: float, l_loc: Tensor, l_rob: Tensor) -> LossMix:
    return LossMix(xi, l_loc, l_rob, l_loc * xi + l_rob * (1.0 - xi))


def loc_loss(heads: stn.HeadOutputs, target: CascadeTarget, stats: stn.DatasetStats,
             literal_rotation: bool = False) -> Tensor:
    """Suma de errores cuadráticos sobre las salidas mapeadas, media sobre el lote

    (α, β) se comparan con (sin 2θ, cos 2θ); w_s con log(s/γ); w_z con z normalizada.
    """
    x, y = stn.head_translation(heads.w_x, heads.w_y)
    if literal_rotation:
        alpha, beta = ad.sigmoid(heads.w_alpha), ad.sigmoid(heads.w_beta)
    else:
        alpha = ad.sigmoid(heads.w_alpha) * 2.0 - 1.0
        beta = ad.sigmoid(heads.w_beta) * 2.0 - 1.0
    terms = [
        (x, target.x), (y, target.y),
        (alpha, np.sin(2.0 * target.theta)), (beta, np.cos(2.0 * target.theta)),
        (ad.as_tensor(heads.w_s), np.log(target.s / stats.gamma)),
        (ad.as_tensor(heads.w_z), target.z_norm),
    ]
    total = None
    for pred, goal in terms:
        diff = pred - goal
        sq = diff * diff
        total = sq if total is None else total + sq
    return ad.mean(total)


def rob_loss(quality: QualityModel, crop: Tensor, z_meters: Tensor) -> Tensor:
    """Entropía cruzada contra la etiqueta positiva sobre el logit del clasificador congelado"""
    if not quality.frozen:
        raise FrozenModelError("La pérdida de robustez requiere un clasificador congelado")
    logit, _ = classify(quality, crop, z_meters)
    return ad.binary_cross_entropy_with_logits(logit, np.ones(logit.shape))


def history_checksum(history: Sequence[Dict]) -> str:
    return hashlib.sha256(_history_bytes(history)).hexdigest()


def _history_bytes(history: Sequence[Dict]) -> bytes:
    return "".join(json.dumps(h, sort_keys=True) + "\n" for h in history).encode("utf-8")


@dataclass
class TrainingConfig:
    batch_size: int = 16
    literal_rotation: bool = False
    val_scenes: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"training.batch_size debe ser positivo: {self.batch_size}")


class _BaseTrainer:
    kind = ""

    def __init__(self, dataset: GraspDataset, backbone: BackboneConfig, schedule: Schedule,
                 training: TrainingConfig, seed: int, out_dir=None, run_config: Optional[Dict] = None,
                 progress_callback=None, quiet: bool = False):
        self.dataset = dataset
        self.backbone = backbone
        self.schedule = schedule
        self.training = training
        self.seed = seed
        self.out_dir = Path(out_dir) if out_dir else None
        self.run_config = run_config or {}
        self.progress_callback = progress_callback
        self.quiet = quiet
        self.history: List[Dict] = []
        self.checkpoints: List[str] = []

    def log_progress(self, message: str, level: str = "INFO"):
        """Enviar mensaje de progreso"""
        if self.progress_callback:
            self.progress_callback(message, level)
        if level == "ERROR":
            logging.error(message)
        elif level == "WARNING":
            logging.warning(message)
        else:
            logging.info(message)

    # -- datos --------------------------------------------------------------

    def _train_records(self) -> List[SceneRecord]:
        records = [r for r in self.dataset.split("train") if r.positives()]
        if not records:
            raise DataError("El split de entrenamiento no tiene escenas con positivos")
        return records

    def _val_records(self) -> List[SceneRecord]:
        records = [r for r in self.dataset.split("val") if r.positives()]
        if self.training.val_scenes > 0:
            records = records[:self.training.val_scenes]
        return records

    def _select_targets(self, batch: Sequence[SceneRecord], phase_index: int, epoch: int) -> List[GraspConfig]:
        """Un positivo aleatorio por escena, con el flujo de la propia escena"""
        chosen = []
        for record in batch:
            positives = record.positives()
            rng = scene_rng(self.seed, record.index, SELECTION_STREAM, phase_index, epoch)
            chosen.append(positives[int(rng.integers(0, len(positives)))])
        return chosen

    # -- modelo ---------------------------------------------------------------

    def build_model(self) -> _Detector:
        raise NotImplementedError

    def step_losses(self, model: _Detector, batch: Sequence[SceneRecord], target: CascadeTarget,
                    phase: Phase) -> LossMix:
        raise NotImplementedError

    def validate(self, model: _Detector) -> Dict[str, float]:
        raise NotImplementedError

    def monitored(self, metrics: Dict[str, float]) -> float:
        raise NotImplementedError

    def keeps_best(self, phase: Phase) -> bool:
        return phase.early_stopping

    # -- checkpoints ------------------------------------------------------------

    def _checkpoint_path(self, phase_index: int) -> Optional[Path]:
        return None if self.out_dir is None else self.out_dir / f"{self.kind}_phase{phase_index}.gqtn"

    def _save_phase(self, model: _Detector, optimizer: Adam, phase_index: int, step: int, best: Optional[float]):
        path = self._checkpoint_path(phase_index)
        if path is None:
            return
        tensors = model.state()
        tensors.update(optimizer.state.to_tensors())
        metadata = model.metadata()
        metadata.update({
            "completed_phase": phase_index, "global_step": step, "optimizer_step": optimizer.state.step,
            "best_metric": best, "seed": self.seed, "schedule": self.schedule.to_dict(),
            "history": self.history, "config": self.run_config,
        })
        save_checkpoint(path, tensors, metadata)
        self.checkpoints.append(str(path))

    def _write_history(self):
        if self.out_dir is None:
            return
        path = self.out_dir / f"{self.kind}_history.jsonl"
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            path.write_bytes(_history_bytes(self.history))
        except OSError as e:
            raise DataError(f"No se pudo escribir el historial {path}: {e}")

    # -- bucle ---------------------------------------------------------------

    def train(self, resume_from=None) -> TrainResult:
        model = self.build_model()
        optimizer = Adam(model.parameters(), lr=1e-3, l2=self.schedule.l2_reg)
        start_phase, step, best = -1, 0, None
        if resume_from is not None:
            tensors, metadata = load_checkpoint(resume_from)
            if metadata.get("kind") != model.kind or metadata.get("seed") != self.seed:
                raise DataError(f"El checkpoint {resume_from} no corresponde a este entrenamiento")
            model.load_state(tensors)
            optimizer.state.load_tensors(tensors)
            optimizer.state.step = int(metadata["optimizer_step"])
            start_phase, step, best = int(metadata["completed_phase"]), int(metadata["global_step"]), metadata["best_metric"]
            self.history = list(metadata["history"])
            self.log_progress(f"Reanudando desde {resume_from} (fase {start_phase} completada)")

        best_state = model.state() if best is not None else None

        records = self._train_records()
        batch_size = self.training.batch_size
        phases = self.schedule.scaled_phases()
        self.log_progress(f"Entrenando {self.kind}: {len(records)} escenas, {self.schedule.total_epochs} épocas")

        for phase_index, phase in phases:
            if phase_index <= start_phase:
                continue
            optimizer.lr = phase.learning_rate
            stale = 0
            self.log_progress(f"Fase {phase_index}: {phase.epochs} épocas, ξ={phase.xi}, lr={phase.learning_rate}, "
                              f"teacher forcing={'sí' if phase.teacher_forcing else 'no'}")
            for epoch in range(phase.epochs):
                order = np.random.default_rng([self.seed, phase_index, epoch]).permutation(len(records))
                batches = range(0, len(order), batch_size)
                for start in tqdm(batches, desc=f"Fase {phase_index} época {epoch + 1}", disable=self.quiet):
                    batch = [records[i] for i in order[start:start + batch_size]]
                    meta = batch[0].meta
                    target = cascade_from_grasps(self._select_targets(batch, phase_index, epoch), meta,
                                                 self.dataset.stats)
                    optimizer.zero_grad()
                    mix = self.step_losses(model, batch, target, phase)
                    for name, value in (("L_loc", mix.l_loc), ("L_rob", mix.l_rob), ("L_tot", mix.l_tot)):
                        if not np.isfinite(value.item()):
                            raise NumericalError(
                                f"Pérdida no finita: fase {phase_index}, paso {step}, tensor {name}",
                                {"phase": phase_index, "step": step, "tensor": name})
                    mix.l_tot.backward()
                    optimizer.step()
                    self.history.append({"event": "step", "step": step, "phase": phase_index, "epoch": epoch,
                                         "lr": phase.learning_rate, **mix.values()})
                    step += 1

                metrics = self.validate(model)
                self.history.append({"event": "epoch", "step": step, "phase": phase_index, "epoch": epoch,
                                     **metrics})
                self.log_progress(f"Fase {phase_index}, época {epoch + 1}: " +
                                  ", ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
                if self.keeps_best(phase):
                    value = self.monitored(metrics)
                    if best is None or value > best:
                        best, stale = value, 0
                        best_state = model.state()
                    else:
                        stale += 1
                        if phase.early_stopping and stale >= self.schedule.patience:
                            self.log_progress(f"Parada temprana en la época {epoch + 1} de la fase {phase_index}")
                            break
            if best_state is not None and self.keeps_best(phase):
                model.load_state(best_state)
            self._save_phase(model, optimizer, phase_index, step, best)

        self._write_history()
        checksum = history_checksum(self.history)
        self.log_progress(f"✅ Entrenamiento {self.kind} terminado: {step} pasos, historial {checksum[:12]}")
        return TrainResult(model, self.history, checksum, best, self.checkpoints)


class GQSTNTrainer(_BaseTrainer):
    kind = "gqstn"

    def __init__(self, dataset: GraspDataset, quality: QualityModel, *args, **kwargs):
        super().__init__(dataset, *args, **kwargs)
        if not quality.frozen:
            raise FrozenModelError("GQ-STN requiere un clasificador de robustez congelado")
        self.quality = quality

    def build_model(self) -> GQSTN:
        return GQSTN.build(self.backbone, self.dataset.stats, self.seed, self.training.literal_rotation)

    def step_losses(self, model: GQSTN, batch, target, phase: Phase) -> LossMix:
        fwd = model.forward([r.depth for r in batch], teacher=target if phase.teacher_forcing else None)
        l_loc = loc_loss(fwd.heads, target, self.dataset.stats, self.training.literal_rotation)
        z_meters = fwd.z * self.dataset.stats.z_std + self.dataset.stats.z_mean
        l_rob = rob_loss(self.quality, fwd.crop, z_meters)
        return mix_losses(phase.xi, l_loc, l_rob)

    def validate(self, model: GQSTN) -> Dict[str, float]:
        return {"val_robust_rate": robust_rate(model, self._val_records(), self.quality)}

    def monitored(self, metrics: Dict[str, float]) -> float:
        return metrics["val_robust_rate"]


class DirectGraspTrainer(_BaseTrainer):
    """Regresión geométrica pura: solo L_loc, sin teacher forcing; conserva la mejor precisión rect de validación"""
    kind = "directgrasp"

    def build_model(self) -> DirectGrasp:
        return DirectGrasp.build(self.backbone, self.dataset.stats, self.seed, self.training.literal_rotation)

    def step_losses(self, model: DirectGrasp, batch, target, phase: Phase) -> LossMix:
        fwd = model.forward([r.depth for r in batch])
        l_loc = loc_loss(fwd.heads, target, self.dataset.stats, self.training.literal_rotation)
        return mix_losses(1.0, l_loc, ad.Tensor(0.0))

    def validate(self, model: DirectGrasp) -> Dict[str, float]:
        return {"val_rect_precision": rect_precision(model, self._val_records())}

    def monitored(self, metrics: Dict[str, float]) -> float:
        return metrics["val_rect_precision"]

    def keeps_best(self, phase: Phase) -> bool:
        return True


def train_gqstn(dataset: GraspDataset, quality: QualityModel, schedule: Schedule, seed: int,
                backbone: Optional[BackboneConfig] = None, training: Optional[TrainingConfig] = None,
                out_dir=None, resume_from=None, quiet: bool = True, **kwargs) -> TrainResult:
    backbone = backbone or BackboneConfig(input_size=(dataset.meta.height, dataset.meta.width))
    trainer = GQSTNTrainer(dataset, quality, backbone, schedule, training or TrainingConfig(), seed,
                           out_dir=out_dir, quiet=quiet, **kwargs)
    return trainer.train(resume_from)


def train_directgrasp(dataset: GraspDataset, schedule: Schedule, seed: int,
                      backbone: Optional[BackboneConfig] = None, training: Optional[TrainingConfig] = None,
                      out_dir=None, resume_from=None, quiet: bool = True, **kwargs) -> TrainResult:
    backbone = backbone or BackboneConfig(input_size=(dataset.meta.height, dataset.meta.width))
    trainer = DirectGraspTrainer(dataset, backbone, schedule, training or TrainingConfig(), seed,
                                 out_dir=out_dir, quiet=quiet, **kwargs)
    return trainer.train(resume_from)
