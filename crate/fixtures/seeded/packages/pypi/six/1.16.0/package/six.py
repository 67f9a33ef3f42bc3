import sys

PY2 = sys.version_info[0] == 2
PY3 = sys.version_info[0] == 3

string_types = (str,)
integer_types = (int,)


def exec_(code, globs=None, locs=None):
    if globs is None:
        frame = sys._getframe(1)
        globs = frame.f_globals
    exec(code, globs, locs)


def ensure_str(s, encoding="utf-8"):
    if isinstance(s, bytes):
        return s.decode(encoding)
    return s
