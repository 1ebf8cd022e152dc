"""Bundled sample assets: a mannequin robot, demo scenes, and scripts."""

from importlib import resources


def data_path(*parts: str) -> str:
    """Filesystem path of a bundled data file, e.g. data_path('scenes', 'grasp_lab.json')."""
    return str(resources.files(__package__).joinpath(*parts))
