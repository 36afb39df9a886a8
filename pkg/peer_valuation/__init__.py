from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("peer-valuation")
except PackageNotFoundError:
    # package is not installed
    pass
