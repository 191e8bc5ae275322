"""Accumulating UTXO records, proving membership and updating a block's state."""

import math

from secureprune import accumulator as acc
from secureprune.ledger import UtxoRecord

group = acc.GroupParams.production()  # 2048-bit RSA modulus, nobody knows its factors
bits = group.prime_bits

# each record maps to a 256-bit prime; the amount is part of the hashed bytes
records = [UtxoRecord(bytes([i]) * 32, 0, 100 * (i + 1), f"user{i}") for i in range(6)]
primes = [r.prime(bits) for r in records]

A = acc.accumulate(group, primes)  # g ** (product of all primes)
print("accumulator bytes:", (A.bit_length() + 7) // 8)

# a membership witness is the accumulator of everything else
w = acc.mem_witness(group, primes, primes[2])
print("record 2 is a member:", acc.verify_membership(group, A, primes[2], w))
print("record 3 with that witness:", acc.verify_membership(group, A, primes[3], w))

# witnesses for all records at once, O(n log n) exponentiations
table = acc.witnesses_from_scratch(group, primes)

# spend records 0 and 1, create two new outputs
spent = primes[:2]
A_prime, proof_del = acc.batch_del(group, A, [(p, table[p]) for p in spent])
new = [UtxoRecord(b"\xaa" * 32, i, 150, "merchant").prime(bits) for i in range(2)]
A_new, proof_add = acc.batch_add(group, A_prime, new)

# a verifier only needs the two short proofs, not the exponentiations
print("deletion proof:", acc.nipoe_verify(group, math.prod(spent), A_prime, A, proof_del))
print("addition proof:", acc.nipoe_verify(group, math.prod(new), A_prime, A_new, proof_add))
print("forged addition:", acc.nipoe_verify(group, math.prod(new) + 2, A_prime, A_new, proof_add))

# wallets keep their witnesses current without recomputing from scratch
table = acc.update_witnesses_after_delete(group, A_prime, table, spent)
table = acc.update_witnesses_after_add(group, table, new)
table.update(acc.witnesses_for_added(group, A_prime, new))
print("all witnesses valid:", all(acc.verify_membership(group, A_new, p, mw)
                                  for p, mw in table.items()))
