import argparse
import json
import logging
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd
from pydantic import ValidationError

import grm
import mrf
from errors import ConfigError, IncompleteDataError, LikertNetError, NumericalError, UsageError
from explore import explore_table
from exporters import grm_draws_frame, mrf_draws_frame, write_dot, write_table
from mcmc_settings import SettingsStore, output_root
from report import build_report
from run_manifest import LOG_NAME, RunManifest, input_digests, load_manifest, prepare_out_dir, write_manifest
from simulate import GrmSimSpec, load_spec, simulate
from survey_data import (
    CleaningPolicy, Codebook, CovariateFilter, SurveyDataset, clean, covariate_profile, demo_codebook,
    encode_covariates, load_csv, ordinal_matrix, subset, write_csv,
)
from system_optimizer import SystemDetector

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
PATH_ARGUMENTS = ('data', 'codebook', 'spec', 'out', 'config')
# Сбой вне контракта кодов 0-3 (EX_SOFTWARE из sysexits)
EXIT_INTERNAL = 70


class LikertNetParser(argparse.ArgumentParser):
    """Ошибки разбора аргументов превращаются в UsageError вместо sys.exit"""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: ошибка: {message}")


def _name_list(value: str) -> List[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def build_parser() -> LikertNetParser:
    common = LikertNetParser(add_help=False)
    common.add_argument('--out-dir', help='каталог запуска (по умолчанию $LIKERTNET_OUTPUT_ROOT/<команда>-<время>)')
    common.add_argument('--force', action='store_true', help='разрешить запись в каталог с манифестом')
    common.add_argument('--config', help='файл настроек (по умолчанию $LIKERTNET_CONFIG или likertnet_config.json)')
    common.add_argument('--verbose', action='store_true', help='подробный лог')

    dataset = LikertNetParser(add_help=False)
    dataset.add_argument('--data', required=True, help='CSV с ответами')
    dataset.add_argument('--codebook', help='JSON кодбук (по умолчанию встроенный демонстрационный)')

    selection = LikertNetParser(add_help=False)
    selection.add_argument('--items', type=_name_list, help='пункты через запятую')
    selection.add_argument('--covariates', type=_name_list, default=[], help='ковариаты через запятую')
    selection.add_argument('--where', action='append', default=[], help='фильтр NAME=L1,L2 или NAME=LO:HI')

    chains = LikertNetParser(add_help=False)
    chains.add_argument('--iterations', type=int)
    chains.add_argument('--burnin', type=int)
    chains.add_argument('--thin', type=int)
    chains.add_argument('--chains', type=int)
    chains.add_argument('--seed', type=int)
    chains.add_argument('--workers', type=int, help='максимум параллельных процессов')
    chains.add_argument('--progress', action='store_true', default=None, help='показывать прогресс')
    chains.add_argument('--draws', action='store_true', help='записать сырые выборки')

    parser = LikertNetParser(prog='likertnet', description='Сетевой и IRT анализ порядковых опросов')
    commands = parser.add_subparsers(dest='command', required=True)

    ingest = commands.add_parser('ingest', parents=[common, dataset], help='загрузка и очистка CSV')
    ingest.add_argument('--drop-any-missing', action='store_true')
    ingest.add_argument('--drop-all-missing', action='store_true')
    ingest.add_argument('--drop-missing-covariates', action='store_true')
    ingest.add_argument('--max-straightline', type=float)
    ingest.add_argument('--straightline-min-items', type=int, default=2)

    explore = commands.add_parser('explore', parents=[common, dataset], help='распределения и медианные тесты')
    explore.add_argument('--items', type=_name_list)
    explore.add_argument('--by', type=_name_list, default=[])

    fit_mrf = commands.add_parser('fit-mrf', parents=[common, dataset, selection, chains], help='сеть MRF')
    fit_mrf.add_argument('--slab-scale', type=float)
    fit_mrf.add_argument('--inclusion-prior', type=float)
    fit_mrf.add_argument('--threshold-sd', type=float)
    fit_mrf.add_argument('--birth-proposal', choices=['slab', 'adaptive_normal'])
    fit_mrf.add_argument('--bf-threshold', type=float)

    fit_grm = commands.add_parser('fit-grm', parents=[common, dataset, selection, chains], help='модель GRM')
    fit_grm.add_argument('--precision-convention', choices=['precision', 'variance'])
    fit_grm.add_argument('--prior-value', type=float)
    fit_grm.add_argument('--interactions', action='store_true', help='попарные взаимодействия ковариат')

    sim = commands.add_parser('simulate', parents=[common], help='синтетические данные')
    sim.add_argument('--model', choices=['grm', 'mrf'], required=True)
    sim.add_argument('--spec', required=True)
    sim.add_argument('--out', required=True)

    rep = commands.add_parser('report', parents=[common], help='сводный отчет по запускам')
    rep.add_argument('runs', nargs='+')

    replay = commands.add_parser('replay', parents=[common], help='повтор запуска по манифесту')
    replay.add_argument('manifest')
    return parser


def _load_dataset(args) -> SurveyDataset:
    codebook = Codebook.load(args.codebook) if args.codebook else demo_codebook()
    return load_csv(args.data, codebook)


def _inputs(args) -> Dict[str, str]:
    return input_digests({'data': args.data, 'codebook': getattr(args, 'codebook', None)})


def _model_data(args, ds: SurveyDataset):
    """Выбор пунктов/ковариат, фильтр и полные наблюдения"""
    where = CovariateFilter.parse(args.where, ds.codebook)
    ds = subset(ds, args.items, where, covariates=args.covariates)
    ds, cleaning = clean(ds, CleaningPolicy.complete_cases())
    if cleaning.empty:
        raise IncompleteDataError("Не осталось полных наблюдений для оценивания")
    args.items = ds.item_abbrs
    return ds, cleaning


def _resolve_chains(args, model: str):
    store = SettingsStore(args.config)
    settings = store.load()
    config = store.mcmc_config(model, iterations=args.iterations, burn_in=args.burnin, thin=args.thin,
                               chains=args.chains, seed=args.seed, max_workers=args.workers,
                               show_progress=args.progress)
    args.iterations, args.burnin, args.thin = config.iterations, config.burn_in, config.thin
    args.chains, args.seed = config.chains, config.seed
    return settings, config


def cmd_ingest(args, out_dir: Path) -> RunManifest:
    ds = _load_dataset(args)
    try:
        policy = CleaningPolicy(
            drop_all_missing=args.drop_all_missing,
            drop_any_missing=args.drop_any_missing,
            max_straightline=args.max_straightline,
            straightline_min_items=args.straightline_min_items,
            drop_missing_covariates=args.drop_missing_covariates,
        )
    except ValidationError as e:
        raise ConfigError(f"Некорректная политика очистки: {e}") from e
    cleaned, cleaning = clean(ds, policy)
    write_csv(cleaned, out_dir / 'cleaned.csv')
    (out_dir / 'cleaning_report.json').write_text(json.dumps(cleaning.to_dict(), indent=2), encoding='utf-8')
    write_table(covariate_profile(ds), out_dir / 'profile.csv')
    return RunManifest(
        command=args.command, arguments={},
        config={'items': ds.item_abbrs, 'policy': policy.model_dump(), 'cleaning': cleaning.to_dict()},
        inputs=_inputs(args), artifacts=['cleaned.csv', 'cleaning_report.json', 'profile.csv'],
    )


def cmd_explore(args, out_dir: Path) -> RunManifest:
    ds = _load_dataset(args)
    table = explore_table(ds, args.items, args.by)
    write_table(table, out_dir / 'explore.csv')
    return RunManifest(
        command=args.command, arguments={},
        config={'items': list(args.items or ds.item_abbrs), 'by': list(args.by)},
        inputs=_inputs(args), artifacts=['explore.csv'],
    )


def cmd_fit_mrf(args, out_dir: Path) -> RunManifest:
    ds, cleaning = _model_data(args, _load_dataset(args))
    matrix = ordinal_matrix(ds, args.covariates)
    settings, config = _resolve_chains(args, 'mrf')

    prior_settings = dict(settings['mrf_prior'])
    for key, value in (('slab_scale', args.slab_scale), ('inclusion_prob', args.inclusion_prior),
                       ('threshold_sd', args.threshold_sd), ('birth_proposal', args.birth_proposal),
                       ('bf_threshold', args.bf_threshold)):
        if value is not None:
            prior_settings[key] = value
    bf_threshold = float(prior_settings.pop('bf_threshold'))
    if bf_threshold <= 0:
        raise ConfigError(f"Порог BF должен быть положительным: {bf_threshold}")
    try:
        prior = mrf.MrfPrior(**prior_settings)
    except ValidationError as e:
        raise ConfigError(f"Некорректное априорное распределение MRF: {e}") from e
    args.slab_scale, args.inclusion_prior = prior.slab_scale, prior.inclusion_prob
    args.threshold_sd, args.birth_proposal, args.bf_threshold = prior.threshold_sd, prior.birth_proposal, bf_threshold

    post = mrf.fit(matrix, prior, config)
    report = mrf.median_probability_graph(post, bf_threshold)
    clusters = mrf.network_clusters(report)
    strength = mrf.node_strength(report)
    cluster_of = {node: index for index, members in enumerate(clusters, start=1) for node in members}

    write_table(mrf.edge_table(post, bf_threshold), out_dir / 'edges.csv')
    write_dot(report, out_dir / 'network.dot', clusters)
    covariate_nodes = set(args.covariates)
    nodes = pd.DataFrame({
        'node': matrix.nodes,
        'kind': ['covariate' if node in covariate_nodes else 'item' for node in matrix.nodes],
        'n_categories': matrix.n_categories,
        'strength': [strength[node] for node in matrix.nodes],
        'cluster': [cluster_of[node] for node in matrix.nodes],
    })
    write_table(nodes, out_dir / 'mrf_nodes.csv')
    artifacts = ['edges.csv', 'network.dot', 'mrf_nodes.csv']
    if args.draws:
        write_table(mrf_draws_frame(post), out_dir / 'draws.csv')
        artifacts.append('draws.csv')

    return RunManifest(
        command=args.command, arguments={},
        config={'items': ds.item_abbrs, 'covariates': list(args.covariates), 'nodes': matrix.nodes,
                'n': ds.n, 'mcmc': config.model_dump(), 'prior': {**prior.model_dump(), 'bf_threshold': bf_threshold},
                'cleaning': cleaning.to_dict(), 'acceptance': post.acceptance},
        seeds={'mcmc': config.seed}, inputs=_inputs(args), artifacts=artifacts,
    )


def cmd_fit_grm(args, out_dir: Path) -> RunManifest:
    ds, cleaning = _model_data(args, _load_dataset(args))
    categories = {item.n_categories for item in ds.codebook.items}
    if len(categories) != 1:
        raise ConfigError(f"GRM требует одинакового числа категорий у пунктов: {sorted(categories)}")
    design, labels = encode_covariates(ds, args.covariates, interactions=args.interactions)
    settings, config = _resolve_chains(args, 'grm')

    prior_settings = dict(settings['grm_prior'])
    if args.precision_convention is not None:
        prior_settings['convention'] = args.precision_convention
    if args.prior_value is not None:
        prior_settings['value'] = args.prior_value
    prior = grm.GrmPrior.from_convention(prior_settings['convention'], float(prior_settings['value']))
    args.precision_convention, args.prior_value = prior_settings['convention'], float(prior_settings['value'])

    post = grm.fit(ds.responses, design, prior, config, item_names=ds.item_abbrs,
                   covariate_names=labels, n_categories=categories.pop())

    write_table(post.summaries, out_dir / 'grm_params.csv')
    ranking = pd.DataFrame([vars(r) for r in grm.rank_discrimination(post)],
                           columns=['rank', 'item', 'gamma_mean', 'ci_low', 'ci_high'])
    difficulty = grm.item_difficulty_table(post).drop(columns=['gamma'])
    write_table(ranking.merge(difficulty, on='item', how='left'), out_dir / 'grm_items.csv')
    write_table(post.theta_summary(), out_dir / 'grm_theta.csv')
    effects = pd.DataFrame([vars(e) for e in grm.covariate_effects(post)],
                           columns=['name', 'mean', 'sd', 'ci_low', 'ci_high', 'prob_positive'])
    write_table(effects, out_dir / 'grm_covariates.csv')
    artifacts = ['grm_params.csv', 'grm_items.csv', 'grm_theta.csv', 'grm_covariates.csv']
    if args.draws:
        write_table(grm_draws_frame(post), out_dir / 'grm_draws.csv')
        artifacts.append('grm_draws.csv')

    return RunManifest(
        command=args.command, arguments={},
        config={'items': ds.item_abbrs, 'covariates': list(args.covariates), 'design': labels,
                'interactions': args.interactions, 'n': ds.n,
                'mcmc': config.model_dump(), 'prior': {**prior.model_dump(), **prior_settings},
                'cleaning': cleaning.to_dict(), 'acceptance': post.acceptance},
        seeds={'mcmc': config.seed}, inputs=_inputs(args), artifacts=artifacts,
    )


def cmd_simulate(args, out_dir: Path) -> RunManifest:
    spec = load_spec(args.spec)
    if spec.model != args.model:
        raise ConfigError(f"--model {args.model} не совпадает со спецификацией ({spec.model})")
    ds = simulate(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out)
    codebook_path = out.with_suffix('.codebook.json')
    ds.codebook.save(codebook_path)
    logging.info(f"Симуляция записана: {out}, кодбук {codebook_path}")
    return RunManifest(
        command=args.command, arguments={},
        config={'items': ds.item_abbrs, 'spec': spec.model_dump(), 'grm': isinstance(spec, GrmSimSpec)},
        seeds={'simulation': spec.seed}, inputs=input_digests({'spec': args.spec}),
        artifacts=[str(out), str(codebook_path)],
    )


def cmd_report(args, out_dir: Path) -> RunManifest:
    report = build_report(args.runs)
    paths = report.write(out_dir)
    return RunManifest(
        command=args.command, arguments={},
        config={'items': report.items, 'runs': report.runs},
        inputs=input_digests({f"manifest:{run}": str(Path(run) / 'manifest.json') for run in args.runs}),
        artifacts=[p.name for p in paths],
    )


COMMANDS: Dict[str, Callable] = {
    'ingest': cmd_ingest,
    'explore': cmd_explore,
    'fit-mrf': cmd_fit_mrf,
    'fit-grm': cmd_fit_grm,
    'simulate': cmd_simulate,
    'report': cmd_report,
}


def _replay_arguments(args) -> argparse.Namespace:
    """Аргументы исходного запуска с новым каталогом вывода"""
    manifest = load_manifest(args.manifest)
    if manifest.command not in COMMANDS:
        raise ConfigError(f"Манифест команды {manifest.command} нельзя воспроизвести")
    replayed = argparse.Namespace(**manifest.arguments)
    replayed.command = manifest.command
    replayed.out_dir, replayed.force, replayed.verbose = args.out_dir, args.force, args.verbose
    if args.config is not None:
        replayed.config = args.config
    logging.info(f"Повтор запуска {manifest.command} из {args.manifest}")
    return replayed


def _recorded_arguments(args) -> Dict:
    recorded = {}
    for key, value in vars(args).items():
        if key in ('command', 'out_dir', 'force', 'verbose'):
            continue
        if key in PATH_ARGUMENTS and value:
            value = str(Path(value).resolve())
        if key == 'runs':
            value = [str(Path(run).resolve()) for run in value]
        recorded[key] = value
    return recorded


def default_out_dir(command: str) -> Path:
    return output_root() / f"{command}-{datetime.now().strftime('%Y%m%d-%H%M%S-%f')}"


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)
    logging.getLogger().setLevel(level)


def execute(args) -> int:
    if args.command == 'replay':
        args = _replay_arguments(args)

    start_time = time.time()
    out_dir = prepare_out_dir(args.out_dir or default_out_dir(args.command), args.force)

    # Отдельный лог-файл на каждый запуск
    handler = logging.FileHandler(out_dir / LOG_NAME, mode='w', encoding='utf-8')
    handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    root = logging.getLogger()
    root.addHandler(handler)
    try:
        logging.info(f"Команда {args.command}, каталог {out_dir}")
        manifest = COMMANDS[args.command](args, out_dir)
        manifest.arguments = _recorded_arguments(args)
        manifest.duration_s = time.time() - start_time
        manifest.system = SystemDetector().system_info
        write_manifest(out_dir, manifest)
        logging.info(f"Готово за {manifest.duration_s:.2f}с: {out_dir}")
    finally:
        root.removeHandler(handler)
        handler.close()
    return 0


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Точка входа CLI; возвращает код выхода"""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return e.exit_code
    except SystemExit as e:
        return int(e.code or 0)

    _configure_logging(args.verbose)
    try:
        return execute(args)
    except LikertNetError as e:
        logging.error(f"{type(e).__name__}: {e}")
        print(f"Ошибка: {e}", file=sys.stderr)
        return e.exit_code
    except FloatingPointError as e:
        logging.error(f"Численная ошибка: {e}", exc_info=True)
        print(f"Численная ошибка: {e}", file=sys.stderr)
        return NumericalError.exit_code
    except Exception as e:
        logging.critical(f"Критическая ошибка: {str(e)}", exc_info=True)
        print(f"Внутренняя ошибка: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
