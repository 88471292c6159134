#!/usr/bin/env python3
"""
湖沼アオコ毒素シミュレーター - メイン実行ファイル

設定ファイル（JSON）と気象・湖沼データ（CSV）から、藍藻ブルームと
ミクロシスチン（MC-LR）の季節変動をシミュレーションします。
- simulate: 1シーズンのシミュレーション
- fit: 差分進化法によるパラメータ推定
- sobol: 時間依存 Sobol 感度解析
- scenario: 温暖化・リン負荷シナリオの比較
- vulnerability: 脆弱性指数グリッドの計算
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

# 自作モジュールのインポート
from calibrator import CalibrationDataset, create_calibrator
from config import Config, RunConfig, load_run_config
from data_loader import check_coverage
from errors import ConfigValidationError
from result_writer import RunOutputs, dumps, write_outputs
from scenario_runner import BaseCase, sweep, vulnerability_grid
from sensitivity_analyzer import time_dependent_sobol
from simulator import seasonal_metrics, simulate
from worker_pool import resolve_workers

__version__ = '0.1.0'

COMMANDS = ('simulate', 'fit', 'sobol', 'scenario', 'vulnerability')
RUN_METADATA_NAME = 'run_metadata.json'

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CommandInvocation:
    """CLI から渡された1回分の実行指示"""
    subcommand: str
    config_path: str
    output_dir: str
    seed: Optional[int] = None
    workers: Optional[int] = None
    verbosity: int = 0

    def validate(self) -> bool:
        """サブコマンドとパスを検証"""
        if self.subcommand not in COMMANDS:
            raise ConfigValidationError(f"未知のサブコマンドです: {self.subcommand}")
        if not os.path.isfile(self.config_path):
            raise ConfigValidationError(f"設定ファイルが見つかりません: {self.config_path}", 'config')
        if self.seed is not None and self.seed < 0:
            raise ConfigValidationError("シードは0以上の整数で指定してください", 'seed')
        if self.workers is not None and self.workers < 1:
            raise ConfigValidationError("ワーカー数は1以上で指定してください", 'workers')
        return True


class LakeWorkflow:
    """シミュレーション・推定・感度解析・シナリオ計算を制御するクラス"""

    def __init__(self, run_config: RunConfig, config: Config = None,
                 seed: Optional[int] = None, workers: Optional[int] = None):
        self.config = config or Config()
        self.run_config = run_config
        self.seed = run_config.resolve_seed(seed)
        self.workers = resolve_workers(workers)
        self.progress_callback = None

    def set_progress_callback(self, callback):
        """進行状況コールバック関数を設定"""
        self.progress_callback = callback

    def _update_progress(self, step: str, progress: int, message: str = ""):
        """進行状況を更新"""
        if self.progress_callback:
            self.progress_callback(step, progress, message)
        else:
            logger.info(f"[{progress:3d}%] {step}: {message}")

    def _base_case(self) -> BaseCase:
        rc = self.run_config
        forcing = rc.load_forcing()
        if not forcing.covers(rc.simulation.t0, rc.simulation.t1):
            logger.warning(
                f"Forcing covers [{forcing.start:g}, {forcing.end:g}] but the run spans "
                f"[{rc.simulation.t0:g}, {rc.simulation.t1:g}]; values will be clamped"
            )
        return BaseCase(rc.params, forcing, rc.initial_state, rc.simulation)

    def run_simulate(self) -> RunOutputs:
        """1シーズンのシミュレーションを実行"""
        self._update_progress("シミュレーション", 10, "強制データを読み込み中...")
        base = self._base_case()
        self._update_progress("シミュレーション", 30, "RK4 で積分中...")
        trajectory = simulate(base.params, base.forcing, base.initial_state, base.simulation)
        metrics = seasonal_metrics(trajectory)
        self._update_progress("シミュレーション", 90, f"{len(trajectory)} ステップを記録")
        return RunOutputs(trajectory=trajectory, metrics=metrics)

    def run_fit(self) -> RunOutputs:
        """観測データに対してパラメータを推定"""
        rc = self.run_config
        if rc.bounds is None:
            raise ConfigValidationError("パラメータ推定には探索範囲が必要です", 'fit.bounds')
        self._update_progress("パラメータ推定", 5, "観測データを読み込み中...")
        base = self._base_case()
        observations = rc.load_observations(base.forcing.base_year)
        check_coverage(observations, rc.simulation.t0, rc.simulation.t1)

        dataset = CalibrationDataset(base.forcing, base.initial_state, observations, base.simulation)
        settings = replace(rc.fit_settings, seed=self.seed)
        calibrator = create_calibrator(base.params, dataset, rc.bounds, settings, self.workers)
        max_generations = settings.max_generations

        def on_generation(generation: int, best: float):
            percent = 10 + int(80 * min(generation, max_generations) / max(1, max_generations))
            self._update_progress("パラメータ推定", percent, f"世代 {generation}: 最良値 {best:.4g}")

        fit = calibrator.fit(progress=on_generation)
        self._update_progress("パラメータ推定", 92, "最良パラメータで再計算中...")
        params, state = calibrator.best_inputs(fit)
        trajectory = simulate(params, base.forcing, state, base.simulation)
        return RunOutputs(trajectory=trajectory, metrics=seasonal_metrics(trajectory), fit=fit)

    def run_sobol(self) -> RunOutputs:
        """時間依存 Sobol 感度解析を実行"""
        rc = self.run_config
        design = replace(rc.sobol_design, seed=self.seed)
        self._update_progress("感度解析", 5, f"{design.evaluations} 回のシミュレーションを準備中...")
        base = self._base_case()
        result = time_dependent_sobol(
            base.params, base.forcing, design, base.initial_state, base.simulation,
            workers=self.workers,
            progress=lambda message: self._update_progress("感度解析", 50, message),
        )
        return RunOutputs(sobol=result)

    def run_scenario(self) -> RunOutputs:
        """シナリオ群を実行し、基準ケースと比較"""
        rc = self.run_config
        self._update_progress("シナリオ", 5, f"{len(rc.scenarios)} シナリオを準備中...")
        base = self._base_case()
        trajectory = simulate(base.params, base.forcing, base.initial_state, base.simulation)
        self._update_progress("シナリオ", 20, "シナリオを計算中...")
        items = sweep(base, rc.scenarios, workers=self.workers)
        failed = [item.spec.label for item in items if not item.ok]
        if failed:
            logger.warning(f"Scenarios failed: {', '.join(failed)}")
        return RunOutputs(metrics=seasonal_metrics(trajectory), sweep=items)

    def run_vulnerability(self) -> RunOutputs:
        """脆弱性指数グリッドを計算"""
        vs = self.run_config.vulnerability
        cells = len(vs.exchange_rates) * len(vs.depth_offsets) * len(vs.warming_levels)
        self._update_progress("脆弱性グリッド", 5, f"{cells} セルを準備中...")
        base = self._base_case()
        grid = vulnerability_grid(
            base, vs.exchange_rates, vs.depth_offsets, vs.warming_levels,
            metric=vs.metric, warming_mode=vs.warming_mode,
            base_at_defaults=vs.base_at_defaults, workers=self.workers,
            progress=lambda message: self._update_progress("脆弱性グリッド", 50, message),
        )
        return RunOutputs(grid=grid)

    def execute(self, subcommand: str, output_dir: str) -> Dict[str, Any]:
        """
        サブコマンドを実行し、結果ファイルとマニフェストを書き出す

        Args:
            subcommand: simulate / fit / sobol / scenario / vulnerability
            output_dir: 出力ディレクトリ

        Returns:
            実行結果の辞書

        Raises:
            ValueError: 設定・データの検証エラー
            RuntimeError: モデル計算・書き出しの失敗
        """
        if subcommand not in COMMANDS:
            raise ConfigValidationError(f"未知のサブコマンドです: {subcommand}")

        start_time = time.time()
        started_at = datetime.now(timezone.utc).isoformat()
        result = {
            'command': subcommand,
            'success': False,
            'output_dir': output_dir,
            'manifest': None,
            'duration': 0,
            'steps': {},
            'errors': []
        }

        try:
            outputs = getattr(self, f"run_{subcommand}")()
            result['steps'][subcommand] = {'success': True}

            self._update_progress("書き出し", 95, f"{output_dir} に保存中...")
            result['manifest'] = write_outputs(outputs, output_dir)
            result['steps']['write_outputs'] = {'success': True}

            result['duration'] = time.time() - start_time
            self._write_run_metadata(subcommand, output_dir, started_at, result['duration'])
            result['success'] = True
            self._update_progress("完了", 100, f"{len(result['manifest']['files'])} ファイル")
            return result

        except Exception as e:
            result['errors'].append(str(e))
            result['duration'] = time.time() - start_time
            raise

    def _write_run_metadata(self, subcommand: str, output_dir: str, started_at: str, duration: float):
        metadata = {
            'version': __version__,
            'command': subcommand,
            'lake': self.run_config.lake,
            'seed': self.seed,
            'config_hash': self.run_config.config_hash,
            'timing': {'started_at': started_at, 'duration_seconds': duration},
        }
        with open(os.path.join(output_dir, RUN_METADATA_NAME), 'w', encoding='utf-8', newline='\n') as f:
            f.write(dumps(metadata))


class CLIInterface:
    """コマンドライン インターフェース"""

    def __init__(self):
        self.workflow = None

    def run(self, argv: Optional[List[str]] = None) -> int:
        """メイン実行関数（終了コードを返す）"""
        config = Config()
        try:
            invocation = self._parse_arguments(argv, config)
        except SystemExit as e:
            # --help は 0、引数エラーは検証エラーとして 1
            return 0 if not e.code else 1

        self._configure_logging(invocation.verbosity, config.log_level)

        try:
            config.validate()
            invocation.validate()
            run_config = load_run_config(invocation.config_path)

            self.workflow = LakeWorkflow(run_config, config, invocation.seed, invocation.workers)
            self.workflow.set_progress_callback(self._progress_callback)

            self._print_banner(invocation, self.workflow)
            result = self.workflow.execute(invocation.subcommand, invocation.output_dir)
            self._print_result(result)
            return 0

        except KeyboardInterrupt:
            print("\n\n処理が中断されました。", file=sys.stderr)
            return 2
        except ValueError as e:
            print(f"\n❌ 入力エラー: {e}", file=sys.stderr)
            return 1
        except RuntimeError as e:
            print(f"\n❌ 計算エラー: {e}", file=sys.stderr)
            return 2
        except Exception as e:
            logger.debug("Unexpected failure", exc_info=True)
            print(f"\n❌ 予期しないエラー: {type(e).__name__}: {e}", file=sys.stderr)
            return 2

    def _parse_arguments(self, argv: Optional[List[str]], config: Config) -> CommandInvocation:
        """コマンドライン引数を解析"""
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument(
            '--config',
            type=str,
            required=True,
            help='実行設定ファイル（JSON）'
        )
        common.add_argument(
            '--out',
            type=str,
            default=config.output_dir,
            help=f'出力ディレクトリ（デフォルト: {config.output_dir}）'
        )
        common.add_argument(
            '--seed',
            type=int,
            help='乱数シード（設定ファイルの seed より優先、既定値 42）'
        )
        common.add_argument(
            '--workers',
            type=int,
            help='並列ワーカー数（デフォルト: LAKE_WORKERS または CPU 数）'
        )
        common.add_argument(
            '-v', '--verbose',
            action='count',
            default=0,
            help='ログを詳細に表示（-v: INFO, -vv: DEBUG）'
        )

        parser = argparse.ArgumentParser(
            description="湖沼アオコ毒素シミュレーター",
            formatter_class=argparse.RawDescriptionHelpFormatter,
            epilog="""
使用例:
  python main.py simulate --config sample_data/mendota.json --out output/sim
  python main.py fit --config sample_data/mendota_fit.json --out output/fit --workers 4
  python main.py sobol --config sample_data/mendota.json --out output/sobol --seed 7
  python main.py scenario --config sample_data/mendota.json --out output/scenario
  python main.py vulnerability --config sample_data/mendota.json --out output/grid -v
            """
        )
        subparsers = parser.add_subparsers(dest='subcommand', metavar='SUBCOMMAND')
        subparsers.required = True
        help_texts = {
            'simulate': '1シーズンのシミュレーション',
            'fit': '観測データへのパラメータ推定',
            'sobol': '時間依存 Sobol 感度解析',
            'scenario': 'シナリオ比較（温暖化・リン負荷）',
            'vulnerability': '脆弱性指数グリッド',
        }
        for name in COMMANDS:
            subparsers.add_parser(name, parents=[common], help=help_texts[name])

        args = parser.parse_args(argv)
        return CommandInvocation(
            subcommand=args.subcommand,
            config_path=args.config,
            output_dir=args.out,
            seed=args.seed,
            workers=args.workers,
            verbosity=args.verbose,
        )

    def _configure_logging(self, verbosity: int, default_level: str):
        """ログ出力を標準エラーに設定"""
        if verbosity >= 2:
            level = logging.DEBUG
        elif verbosity == 1:
            level = logging.INFO
        else:
            level = getattr(logging, default_level, logging.WARNING)
        logging.basicConfig(
            stream=sys.stderr,
            level=level,
            format='%(asctime)s %(levelname)s %(name)s: %(message)s',
            force=True,
        )

    def _print_banner(self, invocation: CommandInvocation, workflow: LakeWorkflow):
        """バナーを表示"""
        print("=" * 60, file=sys.stderr)
        print(f"   🌊 湖沼アオコ毒素シミュレーター v{__version__}", file=sys.stderr)
        print(f"   湖: {workflow.run_config.lake} / コマンド: {invocation.subcommand}", file=sys.stderr)
        print(f"   シード: {workflow.seed} / ワーカー数: {workflow.workers}", file=sys.stderr)
        print("=" * 60, file=sys.stderr)

    def _progress_callback(self, step: str, progress: int, message: str = ""):
        """進行状況表示コールバック"""
        # プログレスバーの表示
        bar_length = 40
        filled_length = int(bar_length * progress // 100)
        bar = '█' * filled_length + '-' * (bar_length - filled_length)

        print(f'\r{step}: [{bar}] {progress:3d}% {message}', end='', file=sys.stderr, flush=True)

        if progress >= 100:
            print(file=sys.stderr)  # 改行

    def _print_result(self, result: Dict[str, Any]):
        """結果を表示"""
        print(file=sys.stderr)
        print("=" * 60, file=sys.stderr)

        if result['success']:
            print("🎉 計算完了！", file=sys.stderr)
            print(f"📁 出力ディレクトリ: {result['output_dir']}", file=sys.stderr)
            for entry in result['manifest']['files']:
                print(f"   📄 {entry['path']} ({entry['bytes']} bytes)", file=sys.stderr)
            print(f"🕒 処理時間: {result['duration']:.1f}秒", file=sys.stderr)
        else:
            print("❌ 計算に失敗しました", file=sys.stderr)
            for error in result['errors']:
                print(f"   エラー: {error}", file=sys.stderr)

        print("=" * 60, file=sys.stderr)


def main():
    """メイン関数"""
    cli = CLIInterface()
    sys.exit(cli.run())


if __name__ == "__main__":
    main()
