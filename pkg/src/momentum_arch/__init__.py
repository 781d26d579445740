"""Momentum-augmented recurrent cells, heavy-ball neural ODEs and momentum attention."""
__version__ = "0.1.0"
