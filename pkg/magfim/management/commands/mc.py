"""
mc eval：蒙特卡洛 LM 评估、Z 轴分层剖面与 CRLB 一致性检查
"""

from pathlib import Path
from typing import Optional

import pandas as pd

from magfim.conf import get_setting
from magfim.dataset_gen import NoiseMode
from magfim.lm_solver import DEFAULT_DN, DEFAULT_DP, LmConfig
from magfim.mc_eval import CRLB_SLACK, TrialSpec, compare_crlb, layer_profile, run_mc
from magfim.observability import NoiseModel, lhs_sample, sweep_workspace

from ._common import MagfimCommand, parse_clip, parse_levels, positive_int

STAT_COLUMNS = ('mean', 'std', 'rmse', 'max', 'p95')


def _stats_row(stats, **extra):
    row = dict(extra)
    for metric, unit in (('pos', 'mm'), ('ori', 'deg')):
        summary = getattr(stats, metric)
        for column in STAT_COLUMNS:
            row[f'{metric}_{column}_{unit}'] = getattr(summary, column)
    row.update(n_trials=stats.n_trials, n_converged=stats.n_converged, wall_time_ms=stats.mean_wall_time_ms)
    return row


class Command(MagfimCommand):
    help = '蒙特卡洛定位误差评估（长度单位 m，--sigma 单位 µT，误差与界限单位 mm/度）'
    command_name = 'mc'
    actions = ('eval',)

    def add_options(self, parser):
        self.add_layout_options(parser)
        self.add_model_options(parser)
        self.add_workspace_options(parser)
        parser.add_argument(
            '--noise', type=NoiseMode.parse, default=None,
            help='噪声模式，覆盖 --sigma：none | absolute:<µT> | relative:<比例>',
        )
        parser.add_argument('--clip', type=parse_clip, default=None, help='饱和阈值（µT），默认 1900；none 表示不截断')
        parser.add_argument('--trials', type=positive_int, default=1000, help='试验次数，默认 1000')
        parser.add_argument('--seed', type=int, default=0, help='随机种子')
        parser.add_argument('--dp', type=float, default=DEFAULT_DP, help='初值位置扰动（m），默认 0.02')
        parser.add_argument('--dn', type=float, default=DEFAULT_DN, help='初值方向向量扰动，默认 0.3')
        parser.add_argument('--max-iters', type=positive_int, default=100, help='LM 最大迭代次数')
        parser.add_argument('--exclude-nonconverged', action='store_true', help='统计中剔除不收敛的求解')
        parser.add_argument(
            '--profile-z', type=parse_levels, default=None,
            help='分层剖面 start:stop:step（m），如 0.050:0.150:0.010 给出 11 层',
        )
        parser.add_argument('--trials-per-level', type=positive_int, default=None, help='每层试验次数，默认同 --trials')
        parser.add_argument(
            '--crlb-check', action='store_true',
            help='与同一工作空间扫描的 CRLB 中位数比较，输出 PASS/FAIL',
        )
        parser.add_argument(
            '--crlb-samples', type=positive_int, default=20000, help='CRLB 检查扫描的 LHS 样本数',
        )
        parser.add_argument(
            '--compare-poses', type=int, default=0,
            help='在 N 个 LHS 位姿上做固定位姿重复噪声的 MC 与 CRLB 对比',
        )
        parser.add_argument('--compare-trials', type=positive_int, default=1000, help='每个对比位姿的试验次数')
        self.add_output_option(parser, 'ErrorStats/LayerProfile JSON 路径')
        parser.add_argument('--csv', default=None, help='CSV 表路径，缺省与 JSON 同名')

    def noise_mode_from(self, options) -> NoiseMode:
        if options['noise'] is not None:
            return options['noise']
        if options['sigma'] == 0:
            return NoiseMode()
        return NoiseMode(kind='absolute', value=options['sigma'])

    def crlb_sigma_from(self, noise_mode: NoiseMode) -> Optional[float]:
        """CRLB 只对固定 σ 的高斯噪声有定义；none 与 relative 模式返回 None"""
        if noise_mode.kind == 'absolute' and noise_mode.value > 0:
            return noise_mode.value
        return None

    def run(self, action, options, manifest):
        layout = self.layout_from(options)
        model = self.model_from(options)
        threads = self.threads_from(options)
        noise_mode = self.noise_mode_from(options)
        clip = options['clip'] if options['clip'] is not None else float(get_setting('MAGFIM_B_CLIP_UT'))
        config = LmConfig(max_iters=options['max_iters'])
        workspace = self.workspace_from(options, options['trials'], options['seed'])
        include = not options['exclude_nonconverged']
        payload = {'layout': layout.to_document(), 'noise': noise_mode.label, 'b_clip_ut': clip}
        rows = []

        if options['profile_z']:
            per_level = options['trials_per_level'] or options['trials']
            profile = layer_profile(
                layout, model, noise_mode, config, options['profile_z'], per_level,
                seed=options['seed'], b_clip=clip, crlb_sigma=self.crlb_sigma_from(noise_mode),
                workspace=workspace, threads=threads,
            )
            payload['profile'] = profile.model_dump(mode='json')
            rows = [
                _stats_row(level.stats, z_m=level.z, crlb_pos_median_mm=level.crlb_pos_median_mm,
                           crlb_ori_median_deg=level.crlb_ori_median_deg)
                for level in profile.levels
            ]
            self.print_table(
                ['z_m', 'rmse_pos_mm', 'rmse_ori_deg', 'crlb_pos_mm', 'converged'],
                [[lv.z, lv.stats.pos.rmse, lv.stats.ori.rmse, lv.crlb_pos_median_mm,
                  f'{lv.stats.n_converged}/{lv.stats.n_trials}'] for lv in profile.levels],
            )
        else:
            trials = TrialSpec(
                n_trials=options['trials'], workspace=workspace, seed=options['seed'], b_clip=clip,
                dp=options['dp'], dn=options['dn'], include_nonconverged=include,
            )
            stats = run_mc(layout, model, noise_mode, config, trials, threads=threads)
            payload['stats'] = stats.model_dump(mode='json')
            rows = [_stats_row(stats, layout=layout.name)]
            self.print_table(
                ['metric', 'mean', 'std', 'rmse', 'max', 'p95'],
                [['E_pos_mm', *(getattr(stats.pos, c) for c in STAT_COLUMNS)],
                 ['E_ori_deg', *(getattr(stats.ori, c) for c in STAT_COLUMNS)]],
            )
            self.stdout.write(
                f"收敛 {stats.n_converged}/{stats.n_trials}，平均求解耗时 {stats.mean_wall_time_ms:.3f} ms"
            )
            if options['crlb_check']:
                payload['crlb_check'] = self.crlb_check(layout, model, noise_mode, options, stats, threads)

        if options['compare_poses'] > 0:
            payload['crlb_comparison'] = self.compare(layout, model, noise_mode, config, options, threads)

        path = self.output_path(options, f'mc_eval_{layout.name}.json')
        self.write_report(path, manifest, payload)
        csv_path = Path(options['csv']) if options.get('csv') else path.with_suffix('.csv')
        pd.DataFrame(rows).to_csv(csv_path, index=False)
        self.stdout.write(self.style.SUCCESS(f'结果已写入 {path} 与 {csv_path}'))
        return path

    def crlb_check(self, layout, model, noise_mode, options, stats, threads):
        sigma = self.crlb_sigma_from(noise_mode)
        if sigma is None:
            self.stdout.write(self.style.WARNING(f'CRLB 检查需要 σ > 0 的绝对噪声，当前 {noise_mode.label}，已跳过'))
            return None
        spec = self.workspace_from(options, options['crlb_samples'], options['seed'])
        report = sweep_workspace(layout, spec, model, NoiseModel(sigma), threads=threads)
        bound = report.median('pos_bound_mm')
        passed = stats.pos.rmse >= bound
        verdict = self.style.SUCCESS('PASS') if passed else self.style.ERROR('FAIL')
        self.stdout.write(f"CRLB 检查 {verdict}: RMSE {stats.pos.rmse:.4f} mm ≥ 中位界 {bound:.4f} mm")
        return {'passed': passed, 'rmse_pos_mm': stats.pos.rmse, 'median_pos_bound_mm': bound}

    def compare(self, layout, model, noise_mode, config, options, threads):
        sigma = self.crlb_sigma_from(noise_mode)
        if sigma is None:
            self.stdout.write(self.style.WARNING(f'CRLB 对比需要 σ > 0 的绝对噪声，当前 {noise_mode.label}，已跳过'))
            return None
        noise = NoiseModel(sigma)
        poses = lhs_sample(self.workspace_from(options, options['compare_poses'], options['seed']))
        results = []
        for index in range(len(poses)):
            comparison = compare_crlb(
                layout, model, noise, poses[index], config,
                n_trials=options['compare_trials'], seed=options['seed'] + index, threads=threads,
            )
            results.append(comparison)
        dominated = all(c.degenerate or c.dominated for c in results)
        self.print_table(
            ['#', 'rmse_pos', 'crlb_pos', 'rmse_ori', 'crlb_ori', 'ratio'],
            [[i, c.mc_rmse_pos, c.crlb_pos, c.mc_rmse_ori, c.crlb_ori, c.ratio] for i, c in enumerate(results)],
        )
        verdict = self.style.SUCCESS('PASS') if dominated else self.style.ERROR('FAIL')
        self.stdout.write(f"CRLB 对比（比值 ≥ {CRLB_SLACK}）{verdict}")
        return {
            'passed': dominated,
            'poses': [{'p_m': poses[i].p.tolist(), 'psi': poses[i].psi, 'theta': poses[i].theta,
                       **c.model_dump(mode='json')} for i, c in enumerate(results)],
        }
