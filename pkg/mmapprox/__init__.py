"""Closed-form approximations of optimal quotes for multi-asset market making."""

__version__ = '0.1.0'
