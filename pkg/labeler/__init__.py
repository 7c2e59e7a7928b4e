# Labeler package
