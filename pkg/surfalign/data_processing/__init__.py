# Data processing package initialization
