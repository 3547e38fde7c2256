"""Desk-scale continuous sign language recognition with consistency and
signer-removal auxiliary tasks: keypoint-guided spatial attention, sentence
embedding consistency, adversarial signer removal, a Gaussian-biased local
transformer, CTC alignment with beam decoding, and WER evaluation."""

__version__ = "0.1.0"
