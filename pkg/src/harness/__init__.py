"""
harness Package
===============

Experiment harness. A `controller.ExperimentController` reads an `config.ExperimentConfig`,
builds one `job.SolveJob` per table row and collects the rows into a `results.ResultsTable`,
which is written as CSV and plotted.

"""
