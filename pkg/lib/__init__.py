# Shared machinery for unit-cell design runs
