import platform


def collect():
    return {
        "system": platform.system(),
        "release": platform.release(),
        "machine": platform.machine(),
    }
