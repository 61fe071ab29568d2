"""Tests for the connectome subtyper toolkit."""
