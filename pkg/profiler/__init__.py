# Profiler package
