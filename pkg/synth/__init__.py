# Synthetic corpus package
