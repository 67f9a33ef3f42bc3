from .api import get, post, request
