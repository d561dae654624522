from django.apps import AppConfig


class MagfimConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'magfim'
    verbose_name = '磁强计阵列可观测性分析'
