"""
Calibrating and composing Gaussian noise
========================================

Pick a noise scale for a target (epsilon, delta), check it against the
exact privacy curve, and watch the budget grow with the number of queries.
"""
import math

from dpaug.dp_core import (
    AccountingLedger,
    MechanismParams,
    PrivacyBudget,
    calibrate_sigma,
    calibrate_sigma_composed,
    gaussian_delta,
)

sens = math.sqrt(2)

# one release of a vote vector or a label histogram has L2 sensitivity sqrt(2)
for eps in (0.4, 1.0, 4.0):
    sigma = calibrate_sigma(PrivacyBudget(eps, 1e-6), sens)
    print(f"eps={eps:<4} delta=1e-6  ->  sigma={sigma:.4f}  "
          f"(delta at that sigma: {gaussian_delta(eps, MechanismParams(sens, sigma)):.3e})")

# the whole delta(eps) curve of a single release with sigma = 6
params = MechanismParams(sens, 6.0)
print("\neps    delta(eps) for sigma=6")
for eps in (0.0, 0.25, 0.5, 1.0, 2.0, 4.0):
    print(f"{eps:<5}  {gaussian_delta(eps, params):.3e}")

# Q answered queries compose as one mechanism with mu * sqrt(Q)
print("\nQ      eps at sigma=6   sigma for eps=4 over Q queries")
for q in (1, 10, 100, 500, 1000):
    ledger = AccountingLedger()
    ledger.append("KD", params, q)
    eps = ledger.budgets(1e-6)["KD"].epsilon
    print(f"{q:<6} {eps:8.3f}         {calibrate_sigma_composed(PrivacyBudget(4.0, 1e-6), sens, q):8.3f}")

# two mechanisms add up
ledger = AccountingLedger()
ledger.append("KD", MechanismParams(sens, calibrate_sigma_composed(PrivacyBudget(4.0, 1e-6), sens, 500)), 500)
ledger.append("tutor", MechanismParams(sens, calibrate_sigma(PrivacyBudget(0.4, 1e-6), sens)), 1)
print("\ntotal for KD (eps 4) + tutor (eps 0.4):", ledger.total(1e-6))
