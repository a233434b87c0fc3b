#!/usr/bin/env python3
"""
GQ-STN - Detección de agarres de una sola pasada con Spatial Transformers
Punto de entrada de línea de comandos
"""

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import cv2
import numpy as np

import autodiff as ad
from config_manager import ConfigManager
from dataset_builder import GQSD_MAGIC, GraspDataset, build_dataset, decode_shard
from detector import load_detector
from errors import ConfigError, DataError, GQSTNError
from eval_bench import EvalBench, PropClassifyDetector, bench_models, depth_to_gray, write_pgm
from experiments import ExperimentRunner
from gradient_checker import GradientChecker
from grasp_geometry import DepthImage, ImageMeta
from quality_model import QualityModel, train_quality_from_dataset
from trainer import DirectGraspTrainer, GQSTNTrainer

# la profundidad de los PGM de 16 bits está en décimas de milímetro
PGM_DEPTH_UNIT = 1e-4
REPORT_FORMAT_VERSION = 1


class CLIParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def setup_logging(log_dir: str = "logs", quiet: bool = False):
    """Configurar logging: archivo con marca de tiempo más stderr"""
    log_path = Path(log_dir)
    log_path.mkdir(parents=True, exist_ok=True)
    log_file = log_path / f"gqstn_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
    logging.basicConfig(
        level=logging.WARNING if quiet else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file, encoding='utf-8'),
            logging.StreamHandler(sys.stderr),
        ]
    )


def emit(payload: Dict, out: Optional[str] = None):
    """JSON de resultados a stdout o a un archivo"""
    text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False)
    if out:
        path = Path(out)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text + "\n", encoding="utf-8")
        except OSError as e:
            raise DataError(f"No se pudo escribir {path}: {e}")
        logging.info(f"Resultado guardado en: {path}")
    else:
        sys.stdout.write(text + "\n")


def _seed(args, config: ConfigManager) -> int:
    return int(args.seed) if args.seed is not None else int(config.get("seeds.root"))

def stamp(payload: Dict, config: ConfigManager, seed: int) -> Dict:
    """Todo reporte lleva la configuración efectiva, la semilla y la versión de formato"""
    payload.update({"config": config.as_dict(), "seed": seed, "format_version": REPORT_FORMAT_VERSION})
    return payload



def _require_file(path: Optional[str], what: str) -> Path:
    if not path:
        raise DataError(f"Falta {what}")
    p = Path(path)
    if not p.is_file():
        raise DataError(f"No existe {what}: {p}")
    return p


def _load_quality(path: Optional[str], command: str) -> QualityModel:
    return QualityModel.load(_require_file(
        path, f"el checkpoint del clasificador de robustez (--quality); '{command}' depende de "
              f"un clasificador entrenado con train-quality"))


# ---------------------------------------------------------------------------
# Comandos
# ---------------------------------------------------------------------------

def cmd_gen_data(args, config: ConfigManager) -> int:
    seed = _seed(args, config)
    spec = config.dataset_spec()
    paths, stats = build_dataset(spec, seed, args.out, config.oracle_config(), config.as_dict(), quiet=args.quiet)
    emit(stamp({"stats": stats.to_dict(), "counts": spec.split_counts(),
                "files": {k: str(v) for k, v in paths.items()}}, config, seed))
    return 0


def cmd_train_quality(args, config: ConfigManager) -> int:
    seed = _seed(args, config)
    dataset = GraspDataset(args.data)
    model, report = train_quality_from_dataset(dataset, config.quality_config(), seed, quiet=args.quiet)
    out = Path(args.out)
    path = model.save(out / "quality.gqtn", {"seed": seed, "config": config.as_dict(), "report": report.to_dict()})
    emit(stamp({"checkpoint": str(path), "report": report.to_dict(), "checksum": model.checksum()}, config, seed))
    return 0


def _train_detector(args, config: ConfigManager, trainer_cls, quality: Optional[QualityModel] = None) -> int:
    seed = _seed(args, config)
    dataset = GraspDataset(args.data)
    common = dict(backbone=config.backbone_config(dataset.meta.width), schedule=config.schedule(),
                  training=config.training_config(), seed=seed, out_dir=args.out,
                  run_config=config.as_dict(), quiet=args.quiet)
    trainer = trainer_cls(dataset, quality, **common) if quality is not None else trainer_cls(dataset, **common)
    result = trainer.train(resume_from=args.resume)
    path = result.model.save(Path(args.out) / f"{trainer.kind}.gqtn",
                             {"seed": seed, "config": config.as_dict(), "history_checksum": result.history_checksum,
                              "best_metric": result.best_metric})
    emit(stamp({"checkpoint": str(path), "history_checksum": result.history_checksum,
                "best_metric": result.best_metric, "phase_checkpoints": result.checkpoints}, config, seed))
    return 0


def cmd_train_detector(args, config: ConfigManager) -> int:
    quality = _load_quality(args.quality, "train-detector")
    before = quality.checksum()
    code = _train_detector(args, config, GQSTNTrainer, quality)
    if quality.checksum() != before:
        raise GQSTNError("El clasificador congelado cambió durante el entrenamiento")
    return code


def cmd_train_baseline(args, config: ConfigManager) -> int:
    return _train_detector(args, config, DirectGraspTrainer)


def cmd_eval(args, config: ConfigManager) -> int:
    quality = _load_quality(args.quality, "eval")
    dataset = GraspDataset(args.data)
    eval_config = config.eval_config()
    if args.detector:
        model = load_detector(_require_file(args.detector, "el checkpoint del detector"))
    elif args.prop_k:
        model = PropClassifyDetector(args.prop_k, _seed(args, config), eval_config)
    else:
        raise ConfigError("eval necesita --detector o --prop-k")
    report = EvalBench(eval_config, quiet=args.quiet).evaluate(
        model, dataset, quality, args.split, args.allow_overlap, args.overlays)
    emit(stamp(report.to_dict(), config, _seed(args, config)), args.report)
    return 0


def read_depth_image(path, config: ConfigManager) -> DepthImage:
    """Imagen de entrada: un registro GQSD o un PGM de 16 bits en décimas de milímetro"""
    path = Path(path)
    try:
        head = path.read_bytes()[:4]
    except OSError as e:
        raise DataError(f"No se pudo leer la imagen {path}: {e}")
    expected = "se esperaba un archivo GQSD de un solo registro o un PGM binario de 16 bits (P5)"
    if head == GQSD_MAGIC:
        records = decode_shard(path.read_bytes(), str(path))
        if len(records) != 1:
            raise DataError(f"{path} contiene {len(records)} registros; {expected}")
        return records[0].depth
    if head[:2] == b"P5":
        gray = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if gray is None or gray.dtype != np.uint16 or gray.ndim != 2:
            raise DataError(f"PGM ilegible o no de 16 bits en {path}; {expected}")
        meta = ImageMeta(gray.shape[0], gray.shape[1], float(config.get("dataset.pixel_scale")),
                         float(config.get("dataset.camera_height")))
        return DepthImage(gray.astype(np.float64) * PGM_DEPTH_UNIT, meta)
    raise DataError(f"Formato de imagen no reconocido en {path}; {expected}")


def cmd_predict(args, config: ConfigManager) -> int:
    quality = _load_quality(args.quality, "predict")
    model = load_detector(_require_file(args.detector, "el checkpoint del detector"))
    image = read_depth_image(args.image, config)
    result = model.detect(image, quality)
    if args.dump_stages:
        for name, stage in result.stage_images.items():
            write_pgm(Path(args.dump_stages) / f"stage_{name}.pgm", depth_to_gray(stage))
    payload = result.to_dict()
    payload["robust"] = result.p_robust > quality.threshold
    emit(stamp(payload, config, _seed(args, config)))
    return 0


def cmd_bench(args, config: ConfigManager) -> int:
    quality = _load_quality(args.quality, "bench")
    dataset = GraspDataset(args.data)
    models = {}
    for path in args.detector:
        model = load_detector(_require_file(path, "el checkpoint del detector"))
        models[model.kind] = model
    images = [r.depth for r in dataset.split("test")[:args.n_images]]
    seed = _seed(args, config)
    report = bench_models(models, images, quality, config.eval_config(), seed)
    emit(stamp(report, config, seed), args.report)
    return 0


def cmd_grad_check(args, config: ConfigManager) -> int:
    checker = GradientChecker(
        cases_per_op=args.cases or int(config.get("autodiff.grad_check_cases")),
        tol=float(config.get("autodiff.grad_check_tol")), eps=float(config.get("autodiff.grad_check_eps")),
        seed=_seed(args, config), quiet=args.quiet)
    ops = args.ops.split(",") if args.ops else None
    report = checker.run(ops)
    emit(stamp(report.to_dict(), config, _seed(args, config)), args.report)
    return 0 if report.passed else 3


def cmd_experiment(args, config: ConfigManager) -> int:
    quality = _load_quality(args.quality, "experiment")
    dataset = GraspDataset(args.data)
    runner = ExperimentRunner(dataset, quality, config.backbone_config(dataset.meta.width), config.schedule(),
                              config.training_config(), config.eval_config(), config.as_dict(), quiet=args.quiet)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else config.get("seeds.experiments")
    emit(stamp(runner.run(args.kind, seeds), config, _seed(args, config)), args.report)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-quality": cmd_train_quality,
    "train-detector": cmd_train_detector,
    "train-baseline": cmd_train_baseline,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "bench": cmd_bench,
    "grad-check": cmd_grad_check,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Documento JSON de configuración")
    common.add_argument("--seed", type=int, help="Semilla raíz (sustituye seeds.root)")
    common.add_argument("--quiet", action="store_true", help="Sin barras de progreso ni mensajes INFO")
    common.add_argument("--log-dir", default="logs")

    parser = CLIParser(prog="gqstn", description="Detección de agarres GQ-STN")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CLIParser)

    p = sub.add_parser("gen-data", parents=[common], help="Generar shards GQSD y sidecar")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-quality", parents=[common], help="Entrenar el clasificador de robustez")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    for name, helptext in (("train-detector", "Entrenar GQ-STN"), ("train-baseline", "Entrenar DirectGrasp")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--resume", help="Checkpoint de fase desde el que continuar")
        if name == "train-detector":
            p.add_argument("--quality", help="Checkpoint del clasificador congelado")

    p = sub.add_parser("eval", parents=[common], help="Evaluar un detector")
    p.add_argument("--detector")
    p.add_argument("--prop-k", type=int, help="Evaluar la línea base de propuestas con K candidatos")
    p.add_argument("--quality")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--allow-overlap", action="store_true")
    p.add_argument("--overlays", help="Directorio para imágenes PGM de inspección")
    p.add_argument("--report")

    p = sub.add_parser("predict", parents=[common], help="Detectar un agarre en una imagen")
    p.add_argument("--image", required=True)
    p.add_argument("--detector", required=True)
    p.add_argument("--quality")
    p.add_argument("--dump-stages", help="Directorio para las imágenes de cada etapa")

    p = sub.add_parser("bench", parents=[common], help="Medir tiempos de detección")
    p.add_argument("--detector", action="append", default=[])
    p.add_argument("--quality")
    p.add_argument("--data", required=True)
    p.add_argument("--n-images", type=int, default=10)
    p.add_argument("--report")

    p = sub.add_parser("grad-check", parents=[common], help="Verificar gradientes por diferencias finitas")
    p.add_argument("--ops", help="Lista separada por comas de operaciones")
    p.add_argument("--cases", type=int)
    p.add_argument("--report")

    p = sub.add_parser("experiment", parents=[common], help="Experimentos comparativos")
    p.add_argument("--kind", required=True, choices=["headline", "bootstrap"])
    p.add_argument("--data", required=True)
    p.add_argument("--quality")
    p.add_argument("--seeds", help="Semillas separadas por comas")
    p.add_argument("--report")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Función principal"""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_dir, args.quiet)
    try:
        config = ConfigManager(args.config)
        ad.set_default_dtype(config.get("autodiff.dtype"))
        return COMMANDS[args.command](args, config)
    except GQSTNError as e:
        logging.error(f"❌ {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
