# Utilities shared by the lifecycle harness
