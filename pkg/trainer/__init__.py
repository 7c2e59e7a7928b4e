# Trainer package
