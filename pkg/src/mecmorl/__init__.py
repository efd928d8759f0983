"""Multi-objective PPO task offloading for edge/cloud systems."""

__version__ = "0.1.0"

_SUBMODULES = ("config", "simulator", "observation", "rewards", "env",
               "network", "training", "pareto", "baselines", "seeding")


def __getattr__(name):
    # lazy so that the CLI can pin BLAS thread counts before numpy loads
    if name in _SUBMODULES:
        import importlib
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
