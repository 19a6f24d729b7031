# Attack package
