# Encoder package
