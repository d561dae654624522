# Generated by Django 5.0.14 on 2026-10-19 09:12

import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(max_length=50, verbose_name='命令')),
                ('parameters', models.JSONField(blank=True, default=dict, verbose_name='参数')),
                ('manifest', models.JSONField(blank=True, default=dict, verbose_name='运行清单')),
                ('started_at', models.DateTimeField(default=django.utils.timezone.now, verbose_name='开始时间')),
                ('finished_at', models.DateTimeField(blank=True, null=True, verbose_name='结束时间')),
                ('exit_code', models.PositiveSmallIntegerField(default=0, verbose_name='退出码')),
                ('output_path', models.CharField(blank=True, max_length=500, verbose_name='输出文件')),
                ('wall_time', models.FloatField(blank=True, null=True, verbose_name='耗时(秒)')),
            ],
            options={
                'verbose_name': '实验运行',
                'verbose_name_plural': '实验运行',
                'db_table': 'experiment_runs',
                'ordering': ['-started_at'],
                'indexes': [models.Index(fields=['command', 'started_at'], name='experiment_command_idx')],
            },
        ),
    ]
