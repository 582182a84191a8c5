"""Bundled test systems: case2, case5, ieee14, ieee118."""
from __future__ import annotations

from importlib import resources

from .case_io import NetworkCase, parse_case

NAMES = ("case2", "case5", "ieee14", "ieee118")


def case_text(name: str) -> str:
    if name not in NAMES:
        raise KeyError(f"unknown fixture {name!r}; choose from {NAMES}")
    return resources.files("graphse.data").joinpath(f"{name}.case").read_text()


def load_case(name: str) -> NetworkCase:
    return parse_case(case_text(name), name=name)
