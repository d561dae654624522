from django.db import models
from django.utils import timezone


class ExperimentRun(models.Model):
    """命令运行记录：参数、清单与输出位置"""

    command = models.CharField(max_length=50, verbose_name='命令')
    parameters = models.JSONField(default=dict, blank=True, verbose_name='参数')
    manifest = models.JSONField(default=dict, blank=True, verbose_name='运行清单')
    started_at = models.DateTimeField(default=timezone.now, verbose_name='开始时间')
    finished_at = models.DateTimeField(null=True, blank=True, verbose_name='结束时间')
    exit_code = models.PositiveSmallIntegerField(default=0, verbose_name='退出码')
    output_path = models.CharField(max_length=500, blank=True, verbose_name='输出文件')
    wall_time = models.FloatField(null=True, blank=True, verbose_name='耗时(秒)')

    class Meta:
        db_table = 'experiment_runs'
        indexes = [
            models.Index(fields=['command', 'started_at'], name='experiment_command_idx'),
        ]
        ordering = ['-started_at']
        verbose_name = '实验运行'
        verbose_name_plural = '实验运行'

    def __str__(self):
        return f"{self.command} - {self.started_at.strftime('%Y-%m-%d %H:%M')} (exit {self.exit_code})"
