"""Robust sigma-point Kalman filtering and least-favorable-model simulation."""

from _rspkf import *  # noqa: F401,F403
