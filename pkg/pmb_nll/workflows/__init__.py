"""Dataset-level pipelines behind the CLI subcommands."""
