#!/usr/bin/env python3
"""Convergence check of the built-in optimizer on standard test functions."""

import argparse
import time

import numpy as np

from promptuq.cmaes import minimize


def sphere(x):
    return float(x @ x)


def rosenbrock(x):
    return float(sum(100.0 * (x[i + 1] - x[i] ** 2) ** 2 + (1 - x[i]) ** 2
                     for i in range(len(x) - 1)))


def rastrigin(x):
    return float(10 * len(x) + np.sum(x ** 2 - 10 * np.cos(2 * np.pi * x)))


PROBLEMS = {
    "sphere": (sphere, lambda n: np.full(n, 3.0), 1.0),
    "rosenbrock": (rosenbrock, lambda n: np.zeros(n), 0.5),
    "rastrigin": (rastrigin, lambda n: np.full(n, 2.0), 1.5),
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dim", type=int, default=5)
    parser.add_argument("--population", type=int, default=20)
    parser.add_argument("--generations", type=int, default=300)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print(f"{'problem':<12} {'best loss':>12} {'gens':>6} {'evals':>8} {'time':>7}")
    for name, (fn, start, sigma0) in PROBLEMS.items():
        t0 = time.time()
        result = minimize(fn, start(args.dim), sigma0, args.population,
                          args.generations, seed=args.seed)
        print(f"{name:<12} {result.best_loss:>12.3e} {result.generations:>6} "
              f"{result.evaluations:>8} {time.time() - t0:>6.2f}s")


if __name__ == "__main__":
    main()
