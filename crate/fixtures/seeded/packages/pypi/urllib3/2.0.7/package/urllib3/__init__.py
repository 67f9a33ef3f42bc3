from .poolmanager import PoolManager

__all__ = ["PoolManager"]
