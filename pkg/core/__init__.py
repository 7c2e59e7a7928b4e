# Core
# Plugin base, run configuration, errors and runtime helpers shared by
# every lab package.
