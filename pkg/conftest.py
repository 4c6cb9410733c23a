# Lets pytest import the top-level packages (config, models, services, utils)
# the same way `python -m unittest discover tests` does from the repository root.
