from django.apps import AppConfig
from django.conf import settings


class MoeConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'moe'
    verbose_name = 'MoE substrate'

    def ready(self):
        from . import autodiff
        autodiff.set_finite_checks(getattr(settings, 'MOEBAL_CHECK_FINITE', True))
