"""Python bindings for the idqn crate (pellet gridworld + key-value
memory Q-network). The native module is built from Rust; see setup.py."""

from ._native import (
    Env,
    Model,
    project_distribution,
    project_terminal,
)

__all__ = ["Env", "Model", "project_distribution", "project_terminal"]
