# Pre-training losses package
