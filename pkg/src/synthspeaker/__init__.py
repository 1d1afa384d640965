"""Speaker recognition from scarce audio.

Extracts 26-coefficient mel-cepstral rows from speech, models their text
serialization with character-level generators (a stacked LSTM and a causal
attention decoder), and pretrains a small binary classifier on synthetic
rows before fine-tuning on the real ones.
"""

__version__ = "0.1.0"
