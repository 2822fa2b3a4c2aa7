"""Approximate time evolution e^{iHt}ψ for row-searchable Hamiltonians."""

__version__ = '0.1.0'
