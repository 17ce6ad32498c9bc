"""
Metadata about mcnet.

Contains information about mcnet's version, the on-disk formats it
writes, authors, and description.

.. autodata:: __author__

.. autodata:: __description__

.. autodata:: __version__

.. autodata:: CHECKPOINT_FORMAT_VERSION
"""

#: mcnet version
__version__ = "0.4.0.dev1"

#: Authors
__author__ = "The mcnet developers"

#: Short description about mcnet
__description__ = "Motion-content network for pixel-level video frame prediction"

#: Version of the binary checkpoint layout written by :mod:`mcnet.checkpoint`
CHECKPOINT_FORMAT_VERSION = 2
