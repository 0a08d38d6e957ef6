#!/usr/bin/env python3
"""End-to-end experiment on the synthetic dataset.

Trains the reference network with the standard recipe, evaluates the dual
and piezo-only variants on a held-out set, and prints the confusion matrices
and per-class accuracy table. Everything is seeded; rerunning reproduces the
numbers exactly.
"""

import argparse
import time

from roughsense import classifier
from roughsense.classifier import TrainConfig
from roughsense.dataset import synth_dataset, band_energy_oracle
from roughsense.dsp_frontend import DspConfig
from roughsense.evaluation import evaluate, overall_accuracy


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--chunks-per-class", type=int, default=2000)
    ap.add_argument("--heldout-per-class", type=int, default=500)
    args = ap.parse_args()

    results = {}
    for name, dsp in (
        ("dual", DspConfig()),
        ("piezo-only", DspConfig(channel_mode="piezo_only")),
    ):
        train_set = synth_dataset(args.seed, args.chunks_per_class, dsp)
        heldout = synth_dataset(args.seed + 1, args.heldout_per_class, dsp)
        if name == "dual":
            contact = train_set.labels != 2
            oracle = band_energy_oracle(train_set.feature_matrix(dsp)[contact], dsp)
            oracle_acc = (oracle == train_set.labels[contact]).mean()
            print(f"bin-energy oracle on contact chunks: {oracle_acc:.4f}")

        t0 = time.perf_counter()
        params = classifier.train(TrainConfig(seed=0), train_set, dsp)
        train_s = time.perf_counter() - t0
        report = evaluate(params, heldout, dsp)
        results[name] = (report, overall_accuracy(params, heldout, dsp))
        print(f"\n=== {name} variant (trained in {train_s:.1f} s) ===")
        print("loss curve:", " ".join(f"{v:.4f}" for v in params.metadata["loss_curve"]))
        print(report.format_text())

    print("accuracy of model variants (held-out)")
    print(f"{'model':<12} {'rough':>8} {'smooth':>8} {'3-way':>8}")
    for name, (report, three_way) in results.items():
        print(
            f"{name:<12} {report.accuracy['rough']:>8.3f} "
            f"{report.accuracy['smooth']:>8.3f} {three_way:>8.3f}"
        )


if __name__ == "__main__":
    main()
