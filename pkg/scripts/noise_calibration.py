#!/usr/bin/env python3
"""Empirical noise calibration for the private-count mechanism: sweep epsilon
and compare sample variance against the closed form 2*(sensitivity/epsilon)^2."""

import argparse
import random

from fedkernel.anonymization import Column, ColumnRole, Dataset, DpQuery, dp_release


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--draws", type=int, default=20000)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    dataset = Dataset([Column("v", ColumnRole.OTHER, "integer")],
                      [(i,) for i in range(50)])
    print(f"{'epsilon':>8} {'scale':>8} {'expected var':>13} "
          f"{'sample var':>11} {'rel err':>8}")
    for epsilon in (0.1, 0.25, 0.5, 1.0, 2.0, 4.0):
        noises = []
        for _ in range(args.draws):
            release = dp_release(dataset, DpQuery.COUNT, epsilon, rng=rng)
            noises.append(release.value - 50)
        mean = sum(noises) / len(noises)
        var = sum((x - mean) ** 2 for x in noises) / (len(noises) - 1)
        expected = 2.0 / (epsilon * epsilon)
        print(f"{epsilon:8.2f} {1.0 / epsilon:8.2f} {expected:13.3f} "
              f"{var:11.3f} {abs(var - expected) / expected:8.2%}")


if __name__ == "__main__":
    main()
