# Tensor core package
