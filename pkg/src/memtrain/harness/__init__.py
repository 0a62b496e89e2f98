"""Configuration, data ingestion and the command-line interface."""
