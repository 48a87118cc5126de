"""Tests for the bdy toolkit."""
