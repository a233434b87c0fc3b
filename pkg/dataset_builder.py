"""
Constructor del conjunto de datos sintético de GQ-STN
Genera escenas, anota agarres con el oráculo y escribe shards GQSD más un
sidecar JSON con la especificación, la semilla, las estadísticas y los splits.
"""

import json
import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from errors import DataError
from grasp_geometry import OPENING_FRACTION, DepthImage, GraspConfig, ImageMeta
from grasp_oracle import Annotation, OracleConfig, oracle_eval, sample_annotations
from scene_generator import PrimitiveShape, random_shape, render_scene
from stn import DatasetStats

GQSD_MAGIC = b"GQSD"
GQSD_VERSION = 1
SPLITS = ("train", "val", "test")
SIDECAR_NAME = "dataset.json"
PRNG_INFO = {
    "generator": "numpy.random.PCG64",
    "numpy_version": np.__version__,
    "stream_derivation": "SeedSequence(entropy=root_seed, spawn_key=(scene_index,))",
}
DEPTH_NORMALIZATION = "(depth - table_depth) / camera_height"


def _f32(value: float) -> float:
    return float(np.float32(value))


def scene_rng(root_seed: int, index: int, *extra: int) -> np.random.Generator:
    """Flujo PCG64 independiente por escena derivado de la semilla raíz"""
    return np.random.default_rng(np.random.SeedSequence(entropy=root_seed, spawn_key=(index,) + extra))


@dataclass
class DatasetSpec:
    n_scenes: int = 1000
    image_size: int = 96
    pixel_scale: float = 0.001
    camera_height: float = 0.7
    noise_std: float = 0.0
    shape_mix: Dict[str, float] = field(default_factory=lambda: {
        "box": 0.35, "cylinder": 0.25, "ngon": 0.2, "union": 0.2})
    n_pos_range: Tuple[int, int] = (4, 8)
    n_neg_range: Tuple[int, int] = (0, 4)
    split_fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    dense_test_annotations: int = 0
    max_processes: int = 1

    def __post_init__(self):
        self.n_pos_range = tuple(self.n_pos_range)
        self.n_neg_range = tuple(self.n_neg_range)
        self.split_fractions = tuple(self.split_fractions)
        if self.n_scenes < 1 or self.image_size < 8:
            raise DataError("n_scenes e image_size deben ser positivos")
        if not math.isclose(sum(self.split_fractions), 1.0, abs_tol=1e-9):
            raise DataError(f"Las fracciones de split deben sumar 1: {self.split_fractions}")
        if self.n_pos_range[0] < 1:
            raise DataError("Cada escena necesita al menos una anotación positiva")

    def meta(self) -> ImageMeta:
        return ImageMeta(self.image_size, self.image_size, _f32(self.pixel_scale), _f32(self.camera_height))

    def split_counts(self) -> Dict[str, int]:
        n_train = int(round(self.split_fractions[0] * self.n_scenes))
        n_val = int(round(self.split_fractions[1] * self.n_scenes))
        return {"train": n_train, "val": n_val, "test": self.n_scenes - n_train - n_val}

    def to_dict(self) -> Dict:
        data = asdict(self)
        data.pop("max_processes")
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "DatasetSpec":
        return cls(**data)


@dataclass
class SceneRecord:
    depth: DepthImage
    annotations: List[Annotation]
    index: int = -1
    seed: int = 0
    shape: Optional[PrimitiveShape] = None

    @property
    def meta(self) -> ImageMeta:
        return self.depth.meta

    def positives(self) -> List[GraspConfig]:
        return [a.grasp for a in self.annotations if a.robust]


# ---------------------------------------------------------------------------
# Formato GQSD
# ---------------------------------------------------------------------------

_RECORD_HEAD = struct.Struct("<HHff")
_ANNOTATION = struct.Struct("<5fBf")


def encode_shard(records: Sequence[SceneRecord]) -> bytes:
    chunks = [GQSD_MAGIC, struct.pack("<II", GQSD_VERSION, len(records))]
    for record in records:
        h, w = record.depth.depth.shape
        meta = record.meta
        chunks.append(_RECORD_HEAD.pack(h, w, meta.pixel_scale, meta.camera_height))
        chunks.append(np.ascontiguousarray(record.depth.depth, dtype="<f4").tobytes())
        chunks.append(struct.pack("<H", len(record.annotations)))
        for a in record.annotations:
            g = a.grasp
            chunks.append(_ANNOTATION.pack(g.x, g.y, g.z, g.theta, g.w, int(a.robust), a.quality))
    return b"".join(chunks)


def decode_shard(blob: bytes, source: str = "<memory>") -> List[SceneRecord]:
    if len(blob) < 12 or blob[:4] != GQSD_MAGIC:
        raise DataError(f"Magic GQSD inválido o cabecera truncada en {source}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != GQSD_VERSION:
        raise DataError(f"Versión GQSD no soportada en {source}: {version}")
    offset = 12
    records = []
    try:
        for _ in range(count):
            h, w, pixel_scale, camera_height = _RECORD_HEAD.unpack_from(blob, offset)
            offset += _RECORD_HEAD.size
            depth = np.frombuffer(blob, dtype="<f4", count=h * w, offset=offset).reshape(h, w).astype(np.float64)
            offset += 4 * h * w
            (n_ann,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            annotations = []
            for _ in range(n_ann):
                x, y, z, theta, gw, robust, quality = _ANNOTATION.unpack_from(blob, offset)
                offset += _ANNOTATION.size
                annotations.append(Annotation(GraspConfig(x, y, z, theta, gw), bool(robust), quality))
            meta = ImageMeta(h, w, pixel_scale, camera_height)
            records.append(SceneRecord(DepthImage(depth, meta), annotations))
    except (struct.error, ValueError) as e:
        raise DataError(f"Shard GQSD truncado o corrupto en {source}: {e}")
    if offset != len(blob):
        raise DataError(f"Bytes sobrantes en {source}: {len(blob) - offset}")
    return records


def write_shard(path, records: Sequence[SceneRecord]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_shard(records))
    except OSError as e:
        raise DataError(f"No se pudo escribir el shard {path}: {e}")
    return path


def read_shard(path) -> List[SceneRecord]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DataError(f"No se pudo leer el shard {path}: {e}")
    return decode_shard(blob, str(path))


# ---------------------------------------------------------------------------
# Estadísticas
# ---------------------------------------------------------------------------

def compute_stats(records: Sequence[SceneRecord]) -> DatasetStats:
    """γ = media de s de los positivos; media y desviación de z de los positivos"""
    scales, depths = [], []
    for record in records:
        span = record.meta.span
        for g in record.positives():
            scales.append((g.w / record.meta.pixel_scale) / (OPENING_FRACTION * span))
            depths.append(g.z)
    if not scales:
        raise DataError("No hay anotaciones positivas para calcular estadísticas")
    z_std = float(np.std(depths))
    return DatasetStats(float(np.mean(scales)), float(np.mean(depths)), max(z_std, 1e-6))


# ---------------------------------------------------------------------------
# Generación
# ---------------------------------------------------------------------------

def _quantize_grasp(g: GraspConfig) -> GraspConfig:
    return GraspConfig(_f32(g.x), _f32(g.y), _f32(g.z), _f32(g.theta), _f32(g.w))


def _quantized_annotations(shape, meta, n_pos: int, n_neg: int, rng: np.random.Generator, cfg: OracleConfig,
                           index: int, max_rounds: int = 20) -> List[Annotation]:
    """Anotaciones en float32 cuya etiqueta guardada coincide con el oráculo

    Las que cambian de etiqueta al cuantizar se vuelven a sortear hasta completar n_pos y n_neg.
    """
    positives: List[Annotation] = []
    negatives: List[Annotation] = []
    for _ in range(max_rounds):
        missing_pos, missing_neg = n_pos - len(positives), n_neg - len(negatives)
        if missing_pos == 0 and missing_neg == 0:
            return positives + negatives
        for a in sample_annotations(shape, meta, missing_pos, missing_neg, rng, cfg):
            g = _quantize_grasp(a.grasp)
            robust, quality = oracle_eval(shape, g, cfg, meta)
            if robust == a.robust:
                (positives if robust else negatives).append(Annotation(g, robust, _f32(quality)))
            else:
                logging.debug(f"Escena {index}: anotación que cambia al cuantizar, se vuelve a sortear")
    raise DataError(f"La escena {index} no completó {n_pos} positivos y {n_neg} negativos tras cuantizar "
                    f"({shape.kind})")


def generate_scene(task: Tuple[int, int, str, Dict, Dict]) -> Tuple[SceneRecord, Dict]:
    """Una escena completa; función de nivel superior para poder usarse en procesos"""
    index, root_seed, split, spec_dict, oracle_dict = task
    spec = DatasetSpec.from_dict(spec_dict)
    cfg = OracleConfig.from_dict(oracle_dict)
    meta = spec.meta()
    rng = scene_rng(root_seed, index)
    shape = random_shape(rng, meta, spec.shape_mix)
    depth = render_scene(shape, meta, seed=int(rng.integers(0, 2 ** 31)), noise_std=spec.noise_std)
    depth = DepthImage(depth.depth.astype(np.float32).astype(np.float64), meta)

    if split == "test" and spec.dense_test_annotations > 0:
        n_pos, n_neg = spec.dense_test_annotations, 0
    else:
        n_pos = int(rng.integers(spec.n_pos_range[0], spec.n_pos_range[1] + 1))
        n_neg = int(rng.integers(spec.n_neg_range[0], spec.n_neg_range[1] + 1))
    annotations = _quantized_annotations(shape, meta, n_pos, n_neg, rng, cfg, index)
    record = SceneRecord(depth, annotations, index=index, seed=root_seed, shape=shape)
    return record, {"index": index, "split": split, "shape": shape.to_dict()}


class DatasetBuilder:
    def __init__(self, spec: DatasetSpec, oracle_cfg: OracleConfig, progress_callback=None):
        self.spec = spec
        self.oracle_cfg = oracle_cfg
        self.progress_callback = progress_callback

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

    def _tasks(self, seed: int) -> List[Tuple]:
        counts = self.spec.split_counts()
        tasks, index = [], 0
        for split in SPLITS:
            for _ in range(counts[split]):
                tasks.append((index, seed, split, self.spec.to_dict(), self.oracle_cfg.to_dict()))
                index += 1
        return tasks

    def generate(self, seed: int, quiet: bool = False) -> Tuple[Dict[str, List[SceneRecord]], List[Dict]]:
        tasks = self._tasks(seed)
        self.log_progress(f"Generando {len(tasks)} escenas (semilla {seed}, "
                          f"{self.spec.max_processes} procesos)")
        if self.spec.max_processes > 1:
            with ProcessPoolExecutor(max_workers=self.spec.max_processes) as pool:
                results = list(tqdm(pool.map(generate_scene, tasks, chunksize=8),
                                    total=len(tasks), desc="Escenas", disable=quiet))
        else:
            results = [generate_scene(t) for t in tqdm(tasks, desc="Escenas", disable=quiet)]
        splits: Dict[str, List[SceneRecord]] = {s: [] for s in SPLITS}
        for (record, _), task in zip(results, tasks):
            splits[task[2]].append(record)
        return splits, [entry for _, entry in results]

    def build(self, out_dir, seed: int, run_config: Optional[Dict] = None,
              quiet: bool = False) -> Tuple[Dict[str, Path], DatasetStats]:
        """Escribir shards train/val/test y el sidecar; devuelve rutas y estadísticas"""
        out_dir = Path(out_dir)
        splits, scenes = self.generate(seed, quiet)
        stats = compute_stats(splits["train"])
        paths = {}
        for split in SPLITS:
            paths[split] = write_shard(out_dir / f"{split}.gqsd", splits[split])
            self.log_progress(f"✅ Shard {split}: {len(splits[split])} escenas -> {paths[split]}")
        sidecar = {
            "format": "GQSD",
            "format_version": GQSD_VERSION,
            "spec": self.spec.to_dict(),
            "oracle": self.oracle_cfg.to_dict(),
            "seed": seed,
            "stats": stats.to_dict(),
            "prng": PRNG_INFO,
            "depth_normalization": DEPTH_NORMALIZATION,
            "meta": self.spec.meta().to_dict(),
            "splits": {s: [r.index for r in splits[s]] for s in SPLITS},
            "scenes": scenes,
            "config": run_config or {},
        }
        sidecar_path = out_dir / SIDECAR_NAME
        try:
            sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True, ensure_ascii=False),
                                    encoding="utf-8")
        except OSError as e:
            raise DataError(f"No se pudo escribir el sidecar {sidecar_path}: {e}")
        self.log_progress(f"Estadísticas: γ={stats.gamma:.6f}, z_mean={stats.z_mean:.6f}, z_std={stats.z_std:.6f}")
        paths["sidecar"] = sidecar_path
        return paths, stats


def build_dataset(spec: DatasetSpec, seed: int, out_dir, oracle_cfg: Optional[OracleConfig] = None,
                  run_config: Optional[Dict] = None, quiet: bool = True) -> Tuple[Dict[str, Path], DatasetStats]:
    return DatasetBuilder(spec, oracle_cfg or OracleConfig()).build(out_dir, seed, run_config, quiet)


class GraspDataset:
    """Acceso a un directorio de datos ya generado (shards + sidecar)"""

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        sidecar_path = self.data_dir / SIDECAR_NAME
        try:
            self.sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        except OSError as e:
            raise DataError(f"No se encontró el sidecar {sidecar_path}: {e}")
        except json.JSONDecodeError as e:
            raise DataError(f"Sidecar ilegible {sidecar_path}: {e}")
        self.stats = DatasetStats.from_dict(self.sidecar["stats"])
        self.meta = ImageMeta.from_dict(self.sidecar["meta"])
        self.oracle_cfg = OracleConfig.from_dict(self.sidecar["oracle"])
        self.seed = int(self.sidecar["seed"])
        self._shapes = {s["index"]: PrimitiveShape.from_dict(s["shape"]) for s in self.sidecar["scenes"]}
        self._cache: Dict[str, List[SceneRecord]] = {}

    def split_indices(self, split: str) -> List[int]:
        return list(self.sidecar["splits"][split])

    def split(self, name: str) -> List[SceneRecord]:
        if name not in SPLITS:
            raise DataError(f"Split desconocido: {name}")
        if name not in self._cache:
            records = read_shard(self.data_dir / f"{name}.gqsd")
            indices = self.split_indices(name)
            if len(indices) != len(records):
                raise DataError(f"El sidecar y el shard {name} no coinciden: {len(indices)} vs {len(records)}")
            for record, index in zip(records, indices):
                record.index = index
                record.seed = self.seed
                record.shape = self._shapes.get(index)
            self._cache[name] = records
        return self._cache[name]
