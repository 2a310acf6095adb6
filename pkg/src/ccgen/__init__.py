"""CCGen benchmark harness: complementary concept generation from co-purchase data."""

__version__ = "0.1.0"
