# Masking package
