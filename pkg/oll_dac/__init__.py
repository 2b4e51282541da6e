# Package marker for oll_dac.
__version__ = "0.3.0"
