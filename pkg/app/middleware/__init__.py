"""
Middleware package for MirrorBot.

The command line runs every subcommand inside the error boundary.
"""

from .error_handler import ErrorBoundary

__all__ = ['ErrorBoundary']
