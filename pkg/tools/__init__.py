"""Command-line tools for connectome subtyping."""
