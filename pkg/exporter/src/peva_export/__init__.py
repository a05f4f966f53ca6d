"""Feature exporter: pretrained (or toy) vision-language encoders to PEVF."""

from .backbones import Backbone, ToyBackbone, resolve
from .export import ExportJob, export_prompts, export_views, load_categories, run_export
from .pevf import prompts_container, views_container, write_manifest

__version__ = "0.1.0"
