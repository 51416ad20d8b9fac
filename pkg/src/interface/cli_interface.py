import argparse
import json
import os
import shlex
import sys
from typing import Any, Dict, List, Optional

import numpy as np
from colorama import Fore, Style

from ..core.diffusion import sample as diffusion_sample
from ..core.denoiser import build_denoiser
from ..core.optimizer import OptimizerState
from ..core.toy_data import TOY_TASKS, make_toy_task, vector_to_image
from ..core.trainer import Trainer
from ..managers.checkpoint_manager import Checkpoint, CheckpointManager
from ..managers.config_manager import ConfigManager
from ..managers.dataset_manager import DatasetManager
from ..managers.feature_extractor import EXTRACTORS, Extractor, extract_features, extract_spatial_features
from ..managers.metrics_analyzer import (SURVEY_PER_ARM, ConfidenceBreakdown, Contingency2x2, FeatureSet,
                                         MetricsAnalyzer, contingency_from_fractions)
from ..managers.patch_extractor import TileSpec, manifest_dir, read_manifest
from ..managers.stain_normalizer import StainNormalizer
from ..utils.embedding_io import read_matrix, write_matrix
from ..utils.errors import ArtifactIOError, ConfigError, MdfError, ParameterError, ValidationError
from ..utils.image_io import list_ppm_files, read_ppm, write_ppm
from ..utils.logger import Logger

THREADS_ENV = "MDF_THREADS"


def worker_threads() -> int:
    """Limite de threads vindo de MDF_THREADS (padrão 1)"""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} deve ser inteiro, recebido {raw!r}")
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} deve ser >= 1, recebido {value}")
    return value


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f"lista de inteiros separada por vírgulas esperada: {text!r}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f"lista de números separada por vírgulas esperada: {text!r}")


def _require_file(path: str, what: str):
    if not path or not os.path.isfile(path):
        raise ValidationError(f"{what} não encontrado: {path}")


def _require_dir(path: str, what: str):
    if not path or not os.path.isdir(path):
        raise ValidationError(f"{what} não encontrado: {path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdf",
        description="Síntese de histopatologia condicionada por genótipo: dados, treino, amostragem e avaliação.",
        epilog=f"Variável de ambiente {THREADS_ENV} limita o número de threads de trabalho.",
    )
    parser.add_argument('--config', help="arquivo JSON de configuração (RunConfig)")
    parser.add_argument('--log-level', default="INFO", help="nível de log em stderr (DEBUG, INFO, WARNING, ERROR)")
    parser.add_argument('--log-dir', help="diretório para arquivo de log com timestamp")
    parser.add_argument('--quiet', action='store_true', help="não escreve logs em stderr")
    sub = parser.add_subparsers(dest='command', metavar='COMANDO')

    p = sub.add_parser('make-dataset', help="recorta patches das lâminas anotadas e grava o manifesto")
    p.add_argument('--slides', required=True, help="diretório com <slide_id>.ppm")
    p.add_argument('--annotations', required=True, help="JSON com {slide_id, label, polygons}")
    p.add_argument('--out', required=True, help="diretório de saída (patches/ e manifest.jsonl)")
    p.add_argument('--seed', type=int, default=0, help="seed da seleção de patches")
    p.add_argument('--patch', type=int, help="tamanho do patch em pixels")
    p.add_argument('--stride', type=int, help="passo da grade em pixels")
    p.add_argument('--resize', type=int, help="tamanho final do patch (divisor de --patch)")
    p.add_argument('--max-per-slide', type=int, help="limite de patches por lâmina")
    p.add_argument('--coverage', type=float, help="fração mínima do patch dentro da anotação")

    p = sub.add_parser('train', help="treina o denoiser condicional")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--toy', choices=TOY_TASKS, help="tarefa sintética embutida")
    source.add_argument('--manifest', help="manifesto de patches (make-dataset)")
    p.add_argument('--out', required=True, help="arquivo de checkpoint")
    p.add_argument('--steps', type=int, help="passos de otimização")
    p.add_argument('--batch', type=int, help="tamanho do lote")
    p.add_argument('--lr', type=float, help="taxa de aprendizado")
    p.add_argument('--seed', type=int, help="seed da execução")
    p.add_argument('--weighting', choices=("simple", "p2"), help="ponderação da perda")
    p.add_argument('--loss-log', help="CSV step,loss,weight_scheme")
    p.add_argument('--log-every', type=int, help="intervalo de registro da perda")

    p = sub.add_parser('sample', help="gera amostras de um checkpoint")
    p.add_argument('--checkpoint', required=True, help="arquivo de checkpoint")
    p.add_argument('--label', required=True, help="rótulo (genótipo) a condicionar")
    p.add_argument('--count', type=int, default=1, help="número de amostras")
    p.add_argument('--seed', type=int, default=0, help="seed da amostragem")
    p.add_argument('--out', required=True, help="diretório (modo imagem) ou arquivo F32 (modo vetor)")
    p.add_argument('--final-noise', action='store_true', help="injeta ruído também no passo t=1")

    p = sub.add_parser('embed', help="extrai features de imagens PPM para um arquivo F32")
    inputs = p.add_mutually_exclusive_group(required=True)
    inputs.add_argument('--images', help="diretório com imagens .ppm")
    inputs.add_argument('--manifest', help="manifesto de patches")
    p.add_argument('--extractor', choices=EXTRACTORS + ("spatial",), default="identity", help="extrator de features")
    p.add_argument('--dim', type=int, default=64, help="dimensão da projeção aleatória")
    p.add_argument('--seed', type=int, default=0, help="seed da projeção aleatória")
    p.add_argument('--out', required=True, help="arquivo F32 de saída")

    p = sub.add_parser('evaluate', help="IS, FID, sFID e precision/recall")
    p.add_argument('--real', required=True, help="features reais (F32)")
    p.add_argument('--gen', required=True, help="features geradas (F32)")
    p.add_argument('--real-spatial', help="features espaciais reais (F32)")
    p.add_argument('--gen-spatial', help="features espaciais geradas (F32)")
    p.add_argument('--probs', help="probabilidades de classe das amostras geradas (F32) para o IS")
    p.add_argument('--k', type=int, help="vizinhos para precision/recall")
    p.add_argument('--zscore', action='store_true', default=None, help="padroniza features antes do k-NN")
    p.add_argument('--out', help="grava o relatório JSON também neste arquivo")

    p = sub.add_parser('stain-normalize', help="normaliza a coloração de uma imagem para um alvo")
    p.add_argument('--input', required=True, help="imagem PPM de origem")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument('--target', help="imagem PPM alvo")
    target.add_argument('--target-model', help="modelo de corantes JSON do alvo")
    p.add_argument('--out', required=True, help="imagem PPM normalizada")
    p.add_argument('--save-model', help="grava o modelo de corantes do alvo em JSON")
    p.add_argument('--seed', type=int, default=0, help="seed da partida a quente")

    p = sub.add_parser('survey', help="teste exato de Fisher bilateral por avaliador")
    p.add_argument('--table', type=_int_list, action='append', default=[],
                   help="a,b,c,d (real→real, real→sint., sint.→real, sint.→sint.); repetível")
    p.add_argument('--fractions', type=_float_list, action='append', default=[],
                   help="frações julgadas na mesma ordem de --table; repetível")
    p.add_argument('--confidence-fractions', type=_float_list, action='append', default=[],
                   help="8 frações por confiança: verdade real (real alta, real média, sint. média, sint. alta) "
                        "e depois verdade sintética na mesma ordem; repetível")
    p.add_argument('--per-arm', type=int, default=SURVEY_PER_ARM,
                   help="imagens por braço para --fractions e --confidence-fractions")
    p.add_argument('--out', help="grava o resultado JSON também neste arquivo")
    return parser


class CLIInterface:
    """Comandos da linha de comando e menu interativo"""

    MENU = [
        ('make-dataset', "Criar conjunto de patches"),
        ('stain-normalize', "Normalizar coloração"),
        ('train', "Treinar modelo"),
        ('sample', "Gerar amostras"),
        ('embed', "Extrair features"),
        ('evaluate', "Avaliar amostras"),
        ('survey', "Analisar pesquisa (Fisher)"),
    ]

    def __init__(self, logger: Optional[Logger] = None, config_file: Optional[str] = None):
        self.logger = logger or Logger()
        self.config_manager = ConfigManager(config_file)
        self.checkpoint_manager = CheckpointManager(self.logger)
        self.handlers = {
            'make-dataset': self.cmd_make_dataset,
            'train': self.cmd_train,
            'sample': self.cmd_sample,
            'embed': self.cmd_embed,
            'evaluate': self.cmd_evaluate,
            'stain-normalize': self.cmd_stain_normalize,
            'survey': self.cmd_survey,
        }

    @property
    def config(self):
        return self.config_manager.config

    def execute(self, args: argparse.Namespace) -> Dict[str, Any]:
        """Executa o comando e imprime o resultado JSON em stdout"""
        result = self.handlers[args.command](args)
        self._emit(result)
        return result

    def _emit(self, result: Dict[str, Any]):
        sys.stdout.write(json.dumps(result, indent=2, ensure_ascii=False) + "\n")
        sys.stdout.flush()

    def cmd_make_dataset(self, args) -> Dict[str, Any]:
        _require_dir(args.slides, "Diretório de lâminas")
        _require_file(args.annotations, "Arquivo de anotações")
        data = self.config_manager.override('data', patch=args.patch, stride=args.stride, resize=args.resize,
                                            max_per_slide=args.max_per_slide, coverage=args.coverage).data
        spec = TileSpec(data.patch, data.stride, data.resize, data.max_per_slide, data.coverage)

        manager = DatasetManager(self.logger, worker_threads())
        annotations = manager.load_annotations(args.annotations)
        manifest, counts = manager.build(args.slides, annotations, args.out, spec, args.seed, data.labels)
        sys.stderr.write(manager.label_table(counts) + "\n")
        return {'manifest': manifest, 'counts': counts, 'total': sum(counts.values())}

    def cmd_train(self, args) -> Dict[str, Any]:
        train = self.config_manager.override('train', steps=args.steps, batch=args.batch, lr=args.lr,
                                             seed=args.seed, log_every=args.log_every).train
        if args.weighting:
            self.config_manager.override('loss', weighting=args.weighting)
        config = self.config

        rng = np.random.default_rng(train.seed)
        if args.toy:
            dataset = make_toy_task(args.toy)
            labels = list(dataset.labels)
        else:
            _require_file(args.manifest, "Manifesto")
            labels = self.config_manager.get_labels()
            dataset = DatasetManager(self.logger, worker_threads()).load_dataset(args.manifest, labels)

        model = build_denoiser(dataset.input_dim, len(labels), config.model.hidden_dims, config.model.embed_dim,
                               config.model.activation, seed=int(rng.integers(0, 2 ** 31 - 1)))
        schedule = config.build_schedule()
        loss_config = config.build_loss_config()
        optimizer = OptimizerState.for_model(model, lr=train.lr)
        self.logger.info(f"Modelo com {model.parameter_count()} parâmetros, camadas {model.layer_sizes}")

        trainer = Trainer(model, schedule, loss_config, optimizer, self.logger)
        losses = trainer.train(dataset, train.steps, train.batch, rng, args.loss_log, train.log_every)

        ckpt = Checkpoint(model, schedule, labels, dataset.image_shape, dataset.name)
        self.checkpoint_manager.save(args.out, ckpt)
        return {
            'checkpoint': args.out,
            'steps': train.steps,
            'final_loss': losses[-1] if losses else None,
            'weight_scheme': loss_config.weighting,
            'labels': labels,
        }

    def cmd_sample(self, args) -> Dict[str, Any]:
        _require_file(args.checkpoint, "Checkpoint")
        if args.count < 1:
            raise ParameterError(f"--count deve ser >= 1, recebido {args.count}")
        labels = self.checkpoint_manager.describe(args.checkpoint)['labels']
        if args.label not in labels:
            raise ValidationError(f"Rótulo desconhecido: {args.label} (válidos: {', '.join(labels)})")
        ckpt = self.checkpoint_manager.load(args.checkpoint)
        label = ckpt.labels.index(args.label)

        rng = np.random.default_rng(args.seed)
        rows = np.stack(diffusion_sample(ckpt.model, ckpt.schedule, label, args.count, rng,
                                         final_noise=args.final_noise))

        if ckpt.is_image_mode:
            os.makedirs(args.out, exist_ok=True)
            outputs = []
            for i, row in enumerate(rows):
                path = os.path.join(args.out, f"sample_{args.label}_{i:04d}.ppm")
                write_ppm(path, vector_to_image(row, ckpt.image_shape))
                outputs.append(path)
            mode = 'image'
        else:
            directory = os.path.dirname(args.out)
            if directory:
                os.makedirs(directory, exist_ok=True)
            write_matrix(args.out, rows)
            outputs = [args.out]
            mode = 'vector'
        self.logger.success(f"{args.count} amostra(s) do rótulo {args.label} geradas")
        return {'mode': mode, 'label': args.label, 'count': args.count, 'outputs': outputs}

    def _load_images(self, args) -> List[np.ndarray]:
        if args.images:
            _require_dir(args.images, "Diretório de imagens")
            paths = list_ppm_files(args.images)
        else:
            _require_file(args.manifest, "Manifesto")
            base = manifest_dir(args.manifest)
            paths = [os.path.join(base, e.path) for e in read_manifest(args.manifest)]
        if not paths:
            raise ValidationError("Nenhuma imagem PPM encontrada")
        return [read_ppm(p) for p in paths]

    def cmd_embed(self, args) -> Dict[str, Any]:
        images = self._load_images(args)
        if args.extractor == "spatial":
            features = extract_spatial_features(images)
        else:
            features = extract_features(images, Extractor(args.extractor, args.seed, args.dim))
        write_matrix(args.out, features.matrix)
        self.logger.success(f"Features {features.matrix.shape} gravadas em {args.out}")
        return {'out': args.out, 'rows': features.n, 'cols': features.dim, 'extractor': args.extractor,
                'space': features.space_name}

    def cmd_evaluate(self, args) -> Dict[str, Any]:
        for path in (args.real, args.gen, args.real_spatial, args.gen_spatial, args.probs):
            if path:
                _require_file(path, "Arquivo de features")
        metrics = self.config_manager.override('metrics', k=args.k, zscore=args.zscore).metrics

        real = FeatureSet(read_matrix(args.real), "final")
        gen = FeatureSet(read_matrix(args.gen), "final")
        real_spatial = FeatureSet(read_matrix(args.real_spatial), "spatial") if args.real_spatial else None
        gen_spatial = FeatureSet(read_matrix(args.gen_spatial), "spatial") if args.gen_spatial else None
        probs = read_matrix(args.probs) if args.probs else None

        analyzer = MetricsAnalyzer(self.logger, metrics.k, metrics.zscore, worker_threads())
        report = analyzer.evaluate(real, gen, real_spatial, gen_spatial, probs)
        sys.stderr.write(analyzer.report_table(report) + "\n")
        if args.out:
            self._write_json(args.out, report)
        return report

    def cmd_stain_normalize(self, args) -> Dict[str, Any]:
        _require_file(args.input, "Imagem de origem")
        stain = self.config.stain
        normalizer = StainNormalizer(self.logger, stain.lambda_sparse, stain.iters, stain.background_threshold)
        rng = np.random.default_rng(args.seed)

        if args.target:
            _require_file(args.target, "Imagem alvo")
            target_model = normalizer.fit(read_ppm(args.target), rng)
        else:
            _require_file(args.target_model, "Modelo de corantes")
            target_model = normalizer.load_model(args.target_model)
        if args.save_model:
            normalizer.save_model(target_model, args.save_model)

        output = normalizer.normalize(read_ppm(args.input), target_model, rng)
        write_ppm(args.out, output)
        self.logger.success(f"Imagem normalizada gravada em {args.out}")
        return {'out': args.out, 'target_model': target_model.to_dict()}

    def cmd_survey(self, args) -> Dict[str, Any]:
        if not args.table and not args.fractions and not args.confidence_fractions:
            raise ParameterError("Informe ao menos um --table, --fractions ou --confidence-fractions")
        tables = []
        for cells in args.table:
            if len(cells) != 4:
                raise ParameterError(f"--table exige 4 valores, recebido {len(cells)}")
            tables.append(Contingency2x2(*cells))
        tables.extend(contingency_from_fractions(f, args.per_arm) for f in args.fractions)
        breakdowns = [None] * len(tables)
        for values in args.confidence_fractions:
            breakdown = ConfidenceBreakdown(values)
            tables.append(breakdown.contingency(args.per_arm))
            breakdowns.append(breakdown)

        analyzer = MetricsAnalyzer(self.logger)
        results = analyzer.survey(tables, breakdowns)
        sys.stderr.write(analyzer.survey_table(results) + "\n")
        if args.confidence_fractions:
            sys.stderr.write(analyzer.confidence_table(results) + "\n")
        report = {'results': results}
        if args.out:
            self._write_json(args.out, report)
        return report

    def _write_json(self, path: str, data: Dict[str, Any]):
        try:
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(data, f, indent=2, ensure_ascii=False)
        except OSError as e:
            raise ArtifactIOError(f"Erro ao gravar {path}: {e}")

    def run(self, parser: Optional[argparse.ArgumentParser] = None):
        """Menu interativo: cada opção pede os argumentos do comando correspondente"""
        parser = parser or build_parser()
        self.logger.info("Iniciando menu interativo")

        while True:
            self._show_main_menu()
            choice = input("\nEscolha uma opção: ").strip()
            if choice == '0':
                self.logger.info("Saindo do sistema...")
                break
            if not choice.isdigit() or not 1 <= int(choice) <= len(self.MENU):
                print(f"{Fore.RED}Opção inválida! Tente novamente.{Style.RESET_ALL}", file=sys.stderr)
                continue

            command = self.MENU[int(choice) - 1][0]
            raw = input(f"{Fore.YELLOW}Argumentos para {command} (--help para ajuda): {Style.RESET_ALL}")
            try:
                args = parser.parse_args([command] + shlex.split(raw))
                self.execute(args)
            except SystemExit:
                continue
            except MdfError as e:
                print(f"{Fore.RED}Erro: {e}{Style.RESET_ALL}", file=sys.stderr)

    def _show_main_menu(self):
        out = sys.stderr
        print(f"\n{Fore.CYAN}{'=' * 50}", file=out)
        print("    SÍNTESE HISTOPATOLÓGICA POR DIFUSÃO", file=out)
        print(f"{'=' * 50}{Style.RESET_ALL}", file=out)
        for number, (_, title) in enumerate(self.MENU, start=1):
            print(f"{Fore.WHITE}{number}. {title}{Style.RESET_ALL}", file=out)
        print(f"{Fore.RED}0. Sair{Style.RESET_ALL}", file=out)
