from django.apps import AppConfig


class TrimaskConfig(AppConfig):
    name = "trimask"
    verbose_name = "Tri-modal masked diffusion"
