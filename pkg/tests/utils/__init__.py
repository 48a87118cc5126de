"""Test utilities for the bdy package."""
