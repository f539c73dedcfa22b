"""Indoor VLC-NOMA network simulator with MAPPO/CenPPO training and reward-weight tuning."""

__version__ = "0.1.0"
