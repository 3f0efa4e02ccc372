"""motortwin: identify a simulated PWM motor with a small recurrent net,
train a neural inverse controller through the frozen twin, and benchmark
closed-loop tracking against a Ziegler-Nichols PID baseline."""

__version__ = "0.1.0"
