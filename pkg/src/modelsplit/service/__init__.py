"""FastAPI service exposing counting, experiments, reports and frame codec."""
from .app import app, create_app
