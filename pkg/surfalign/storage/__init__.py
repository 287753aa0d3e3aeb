# Storage package initialization
