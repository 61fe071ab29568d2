"""Tests for connectome subtyper modules."""
