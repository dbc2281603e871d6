"""Error rates under the four ways of treating inconclusive responses.

A black box study is summarised by six counts: same-source comparisons
answered Identification (a), Inconclusive (b) or Exclusion (c), and the same
for different-source comparisons (d, e, f).  Where the inconclusives go
changes the headline false positive and false negative rates considerably.
"""

from bbr import ContingencyTable, RateOption, failure_rate, rates

table = ContingencyTable(a=90, b=8, c=2, d=1, e=20, f=79)
print(f"table: {table.as_dict()}")
print()

# exact rational arithmetic; printed as decimals for reading
print(f"{'option':<12} {'FPR':>8} {'FNR':>8}")
for option in RateOption:
    r = rates(table, option)
    print(f"{option.value:<12} {float(r.fpr):>8.4f} {float(r.fnr):>8.4f}")
print()

# Treating every inconclusive as correct and every inconclusive as an error
# bracket the truth.  A failure rate interpolates between them with a weight
# r in [0, 1] that says how much of the inconclusive behaviour is down to the
# examiner rather than the item.
lo = float(rates(table, RateOption.CORRECT).fpr)
hi = float(rates(table, RateOption.INCORRECT).fpr)
for r in (0.0, 0.2, 0.5, 1.0):
    print(f"r = {r:.1f}  ->  DS failure rate {failure_rate(lo, hi, r):.4f}")
