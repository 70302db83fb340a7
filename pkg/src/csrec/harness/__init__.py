"""Configuration, file formats, pipeline orchestration and the command line."""
