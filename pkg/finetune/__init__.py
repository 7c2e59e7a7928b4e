# Fine-tuning package
