from .app import create_app
from .stubs import create_stub_vision_app

__all__ = ["create_app", "create_stub_vision_app"]
