"""Evolutionary search over neural network source code.

Candidate architectures are full PyTorch source files. An LLM mutates them
under sampled design ideas, a feedback loop repairs or rejects the output
(execution, hardware budget, structural novelty), and survivors compete
through accuracy-vs-budget Pareto selection.
"""

__version__ = "0.1.0"
