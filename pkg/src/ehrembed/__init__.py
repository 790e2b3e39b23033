"""Code-agnostic EHR representation learning toolkit.

Embeds clinical event streams either through per-hospital code lookup
tables or through a shared neural text encoder over code descriptions,
trains sequence predictors for five ICU outcome tasks, and evaluates
single-domain, cross-hospital transfer, and pooled regimes — all on a
built-in reverse-mode autodiff engine, verified on synthetic data.
"""

__version__ = "0.1.0"
