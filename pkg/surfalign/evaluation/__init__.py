# Evaluation package initialization
