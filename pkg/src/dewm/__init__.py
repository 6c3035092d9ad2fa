"""Dynamic treatment regimes by empirical welfare maximization."""
