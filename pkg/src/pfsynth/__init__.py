"""Synthetic preictal EEG spectrograms: DCGAN synthesis, one-class SVM
sieving, CNN seizure prediction and alarm-based evaluation."""

__version__ = "0.1.0"
