# Conversational dense retrieval with session-masked instruction tuning
__version__ = "0.1.0"
