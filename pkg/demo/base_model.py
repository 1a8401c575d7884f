# Seed architecture the demo search starts from. The descriptor line is
# what the surrogate evaluator reads; the class body is illustrative.
#SURROGATE depth=2 width=16 tags=

class Network:
    """Two plain convolution stages, 16 channels wide."""

    def forward(self, x):
        return x
