"""
Noisy label marginal versus the true one
========================================

The tutor releases the private label histogram once, with Gaussian noise on
the counts. Compare one release with the truth, then average many.
"""
import numpy as np

from dpaug.corpus import LabelVocab, Origin, TextRecord
from dpaug.dp_core import AccountingLedger, GaussianNoise, PrivacyBudget, calibrate_sigma
from dpaug.tutor import TUTOR_SENSITIVITY, noisy_label_distribution

vocab = LabelVocab(["surgery", "cardiology", "orthopedic", "radiology", "neurology", "urology"])
counts = [1100, 370, 355, 273, 223, 156]
private = [TextRecord(f"{c}-{j}", "", vocab[c], Origin.PRIVATE) for c, n in enumerate(counts) for j in range(n)]
truth = np.array(counts) / sum(counts)

sigma = calibrate_sigma(PrivacyBudget(0.4, 1e-6), TUTOR_SENSITIVITY)
print(f"sigma on the counts: {sigma:.2f}  (N = {len(private)})\n")

ledger = AccountingLedger()
one = noisy_label_distribution(private, vocab, sigma, GaussianNoise(1), ledger)
print(f"{'label':<12}{'private':>9}{'tutor':>9}")
for name, a, b in zip(vocab.names, truth, one.probs):
    print(f"{name:<12}{a:9.4f}{b:9.4f}")
print("\nbudget of that release:", ledger.total(1e-6))

# every further release is paid for again; the mean converges on the truth
rng = GaussianNoise(2)
draws = np.array([noisy_label_distribution(private, vocab, sigma, rng, AccountingLedger()).probs
                  for _ in range(500)])
print("\nmax |mean of 500 releases - truth|:", np.abs(draws.mean(axis=0) - truth).max().round(5))
