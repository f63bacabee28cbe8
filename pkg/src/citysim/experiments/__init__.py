"""Experiment drivers: runs, benchmarks, faithfulness, counterfactuals, reports."""
